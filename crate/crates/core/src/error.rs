use thiserror::Error;

pub type Result<T> = std::result::Result<T, WgError>;

#[derive(Debug, Error)]
pub enum WgError {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("mesh is not aligned with the interface: edge {edge} separates Stokes and Darcy cells off the interface line")]
    Misaligned { edge: usize },

    #[error("mesh file, line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },

    #[error("quadrature: {0}")]
    Quadrature(String),

    /// Every violated admissibility condition, one entry per inequality.
    #[error("inadmissible parameters: {}", .0.join("; "))]
    Params(Vec<String>),

    #[error("weak gradient requested on Darcy cell {0}; it is only defined on Stokes cells")]
    DarcyGradient(usize),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("singular or ill-conditioned system: {0}")]
    Singular(String),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("internal: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
