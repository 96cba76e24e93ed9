//! Run configuration: TOML file, command-line flags, and validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use wgds::mms::{BoundaryData, ErrorMode};
use wgds::solver::{SolveOptions, SolverMode};
use wgds::wgspace::{Permeability, QuadSettings, StabilizationLength, WgParams};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "WGDS_THREADS";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Pretty,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Convergence,
    InfsupProbe,
    ColorabilityCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Convergence => "convergence",
            Command::InfsupProbe => "infsup-probe",
            Command::ColorabilityCheck => "colorability-check",
        }
    }
}

/// Everything a run needs. Every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mesh size for `solve`.
    pub n: usize,
    /// Mesh sizes for the other commands.
    pub n_list: Vec<usize>,
    /// Stabilization values; each sets `rho_s = rho_d`. Empty keeps the
    /// values in `params`.
    pub rho: Vec<f64>,
    pub params: WgParams,
    pub quad: QuadSettings,
    pub solver: SolveOptions,
    pub boundary: BoundaryData,
    pub error_mode: ErrorMode,
    pub projection_errors: bool,
    /// First `n` used in the least-squares rate fit.
    pub fit_from: Option<usize>,
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub check: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 8,
            n_list: vec![8, 16, 32, 64],
            rho: Vec::new(),
            params: WgParams::default(),
            quad: QuadSettings::default(),
            solver: SolveOptions::default(),
            boundary: BoundaryData::default(),
            error_mode: ErrorMode::default(),
            projection_errors: false,
            fit_from: None,
            seed: 0,
            format: Format::default(),
            out: None,
            mesh: None,
            check: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Parameter sets to run, one per stabilization value.
    pub fn param_sets(&self) -> Vec<WgParams> {
        if self.rho.is_empty() {
            vec![self.params.clone()]
        } else {
            self.rho.iter().map(|&r| self.params.clone().with_rho(r)).collect()
        }
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self, command: Command) -> Vec<String> {
        let mut out = Vec::new();
        for p in self.param_sets() {
            for v in p.violations() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        if command == Command::Solve && self.n == 0 {
            out.push("n >= 1".into());
        }
        if self.n_list.contains(&0) {
            out.push("n_list entries >= 1".into());
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            out.push("n_list strictly ascending".into());
        }
        if command == Command::Convergence {
            if let Some(&first) = self.n_list.first() {
                if self.n_list.iter().any(|&n| n % first != 0 || !(n / first).is_power_of_two()) {
                    out.push("n_list entries are power-of-two multiples of the first".into());
                }
            }
        }
        if !(self.solver.tol > 0.0 && self.solver.tol.is_finite()) {
            out.push(format!("solver.tol > 0 (got {})", self.solver.tol));
        }
        for (name, e) in [("cell", self.quad.cell_exactness), ("edge", self.quad.edge_exactness)] {
            if e == Some(0) {
                out.push(format!("{name} quadrature exactness >= 1"));
            }
        }
        if self.mesh.is_some() && command == Command::Convergence {
            out.push("mesh files are not supported by convergence; use n_list".into());
        }
        out
    }
}

#[derive(Debug, Parser)]
#[command(name = "wgds", version, about = "Weak Galerkin Darcy-Stokes solver and convergence harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Solve the manufactured problem on one mesh and print the errors.
    Solve(Flags),
    /// Run a mesh-refinement study and fit convergence rates.
    Convergence(Flags),
    /// Compute discrete inf-sup constants on small meshes.
    InfsupProbe(Flags),
    /// Run the colorability sweep on meshes.
    ColorabilityCheck(Flags),
}

impl CommandArgs {
    pub fn split(self) -> (Command, Flags) {
        match self {
            CommandArgs::Solve(f) => (Command::Solve, f),
            CommandArgs::Convergence(f) => (Command::Convergence, f),
            CommandArgs::InfsupProbe(f) => (Command::InfsupProbe, f),
            CommandArgs::ColorabilityCheck(f) => (Command::ColorabilityCheck, f),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mesh size, or a comma-separated list for multi-mesh commands.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Comma-separated mesh sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Comma-separated stabilization values.
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    #[arg(long)]
    pub alpha_s: Option<usize>,
    #[arg(long)]
    pub alpha_d: Option<usize>,
    #[arg(long)]
    pub beta: Option<usize>,
    #[arg(long)]
    pub gamma_s: Option<usize>,
    #[arg(long)]
    pub gamma_d: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Permeability: `k` for `k I`, or `k11,k12,k22`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub kappa: Option<Vec<f64>>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Quadrature exactness: `d` for cells and edges, or `cell,edge`.
    #[arg(long, value_delimiter = ',')]
    pub quad_exactness: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub boundary: Option<BoundaryArg>,
    #[arg(long, value_enum)]
    pub error_mode: Option<ErrorModeArg>,
    #[arg(long, value_enum)]
    pub stabilization_length: Option<LengthArg>,
    /// Also report errors against the L² projections.
    #[arg(long)]
    pub projection_errors: bool,
    #[arg(long)]
    pub fit_from: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mesh file in the `wgmesh 1` format.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Compare against reference values and fail with status 4 on mismatch.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundaryArg {
    Projection,
    Interpolation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ErrorModeArg {
    Interpolant,
    Projection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LengthArg {
    LongestEdge,
    Diameter,
}

impl Flags {
    /// Overlay the flags on a base configuration.
    pub fn apply(&self, command: Command, mut c: RunConfig) -> anyhow::Result<RunConfig> {
        if let Some(ns) = &self.n {
            if command == Command::Solve {
                match ns.as_slice() {
                    [n] => c.n = *n,
                    _ => bail!("solve takes a single --n value"),
                }
            } else {
                c.n_list = ns.clone();
            }
        }
        if let Some(ns) = &self.n_list {
            c.n_list = ns.clone();
        }
        if let Some(r) = &self.rho {
            c.rho = r.clone();
        }
        let p = &mut c.params;
        for (dst, src) in [
            (&mut p.alpha_s, self.alpha_s),
            (&mut p.alpha_d, self.alpha_d),
            (&mut p.beta, self.beta),
            (&mut p.gamma_s, self.gamma_s),
            (&mut p.gamma_d, self.gamma_d),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(v) = self.nu {
            p.nu = v;
        }
        if let Some(v) = self.mu {
            p.mu = v;
        }
        if let Some(k) = &self.kappa {
            p.permeability = match k.as_slice() {
                [k] => Permeability::isotropic(*k),
                [a, b, d] => Permeability([[*a, *b], [*b, *d]]),
                _ => bail!("--kappa takes one value or three (k11,k12,k22)"),
            };
        }
        if let Some(l) = self.stabilization_length {
            p.stabilization_length = match l {
                LengthArg::LongestEdge => StabilizationLength::LongestEdge,
                LengthArg::Diameter => StabilizationLength::Diameter,
            };
        }
        if let Some(q) = &self.quad_exactness {
            let (ce, ee) = match q.as_slice() {
                [d] => (*d, *d),
                [a, b] => (*a, *b),
                _ => bail!("--quad-exactness takes one value or two (cell,edge)"),
            };
            c.quad = QuadSettings {
                cell_exactness: Some(ce),
                edge_exactness: Some(ee),
            };
        }
        if let Some(s) = self.solver {
            c.solver.mode = match s {
                SolverArg::Direct => SolverMode::Direct,
                SolverArg::Iterative => SolverMode::Iterative,
            };
        }
        if let Some(t) = self.tol {
            c.solver.tol = t;
        }
        if let Some(m) = self.max_iterations {
            c.solver.max_iterations = m;
        }
        if let Some(b) = self.boundary {
            c.boundary = match b {
                BoundaryArg::Projection => BoundaryData::Projection,
                BoundaryArg::Interpolation => BoundaryData::Interpolation,
            };
        }
        if let Some(m) = self.error_mode {
            c.error_mode = match m {
                ErrorModeArg::Interpolant => ErrorMode::Interpolant,
                ErrorModeArg::Projection => ErrorMode::Projection,
            };
        }
        c.projection_errors |= self.projection_errors;
        if self.fit_from.is_some() {
            c.fit_from = self.fit_from;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(f) = self.format {
            c.format = f;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if self.mesh.is_some() {
            c.mesh = self.mesh.clone();
        }
        c.check |= self.check;
        Ok(c)
    }
}
