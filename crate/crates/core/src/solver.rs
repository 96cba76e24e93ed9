//! Solution of the augmented saddle-point system
//! `[A Bᵀ 0; B 0 m; 0 mᵀ 0]`, where the last row enforces `∫ p_h = 0`
//! through a single multiplier.

use std::time::{Duration, Instant};

use faer::prelude::*;
use faer::linalg::solvers::DenseSolveCore;
use faer::{Col, Side};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_a_h, assemble_b_h, assemble_div_gram, assemble_pressure_mass, SaddleSystem};
use crate::sparse::CsrMatrix;
use crate::weakops::CellOperators;
use crate::wgspace::{dot, PressureFunction, WgFunction, WgSpace};
use crate::{Result, WgError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub mode: SolverMode,
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::Direct,
            tol: 1e-10,
            max_iterations: 50_000,
        }
    }
}

/// Symmetric positive definite preconditioner `z = M⁻¹ r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

/// Identity preconditioner.
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Diagonal scaling of the velocity block by `diag(A)`, of the pressure
/// block by the pressure mass diagonal, and of the multiplier by `1/|Ω|`.
pub struct BlockJacobi {
    inv_diag: Vec<f64>,
}

impl BlockJacobi {
    pub fn new(system: &mut SaddleSystem) -> Self {
        let mp = system.pressure_mass.diagonal();
        let mean = system.mean.clone();
        let a = system.reduced().a.diagonal();
        let area: f64 = mean.iter().zip(&mp).map(|(m, d)| m * m / d).sum();
        let mut inv_diag: Vec<f64> = a.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
        inv_diag.extend(mp.iter().map(|&d| 1.0 / d));
        inv_diag.push(1.0 / area);
        Self { inv_diag }
    }
}

impl Preconditioner for BlockJacobi {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residuals {
    pub momentum: f64,
    pub mass: f64,
    /// `|∫ p_h|`.
    pub mean: f64,
    /// `‖r‖ / ‖rhs‖` over the whole augmented system.
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub velocity: WgFunction,
    pub pressure: PressureFunction,
    pub multiplier: f64,
    pub residuals: Residuals,
    pub mode: SolverMode,
    pub unknowns: usize,
    pub nonzeros: usize,
    pub iterations: Option<usize>,
    pub history: Vec<f64>,
    pub wall_time: Duration,
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Residuals recomputed from the unreduced blocks and the full velocity
/// (free unknowns plus prescribed boundary values).
pub fn residuals(system: &SaddleSystem, u: &WgFunction, p: &[f64], multiplier: f64) -> Residuals {
    let nf = system.n_free;
    let full = u.combined();
    let au = system.a.matvec(&full);
    let btp = system.b.matvec_t(p);
    let ru: Vec<f64> = (0..nf).map(|i| system.f[i] - au[i] - btp[i]).collect();
    let bu = system.b.matvec(&full);
    let rp: Vec<f64> = (0..system.n_pressure)
        .map(|i| system.g[i] - bu[i] - multiplier * system.mean[i])
        .collect();
    let mean = dot(&system.mean, p);
    let r = (dot(&ru, &ru) + dot(&rp, &rp) + mean * mean).sqrt();
    // Right-hand side after lifting the boundary values.
    let mut lifted = 0.0;
    let afix = system.a.matvec(&[vec![0.0; nf], u.fixed.clone()].concat());
    let bfix = system.b.matvec(&[vec![0.0; nf], u.fixed.clone()].concat());
    for i in 0..nf {
        lifted += (system.f[i] - afix[i]).powi(2);
    }
    for i in 0..system.n_pressure {
        lifted += (system.g[i] - bfix[i]).powi(2);
    }
    let scale = lifted.sqrt();
    Residuals {
        momentum: norm(&ru),
        mass: norm(&rp),
        mean: mean.abs(),
        relative: if scale > 0.0 { r / scale } else { r },
    }
}

pub fn solve(system: &mut SaddleSystem, opts: &SolveOptions) -> Result<SolveReport> {
    match opts.mode {
        SolverMode::Direct => solve_direct(system, opts),
        SolverMode::Iterative => {
            let prec = BlockJacobi::new(system);
            solve_iterative(system, opts, &prec)
        }
    }
}

fn finish(
    system: &SaddleSystem,
    x: &[f64],
    opts: &SolveOptions,
    mode: SolverMode,
    nnz: usize,
    iterations: Option<usize>,
    history: Vec<f64>,
    start: Instant,
) -> Result<SolveReport> {
    let nf = system.n_free;
    let np = system.n_pressure;
    let velocity = WgFunction {
        free: x[..nf].to_vec(),
        fixed: system.boundary_values.clone(),
    };
    let coeffs = x[nf..nf + np].to_vec();
    let multiplier = x[nf + np];
    let residuals = residuals(system, &velocity, &coeffs, multiplier);
    if !residuals.relative.is_finite() || residuals.relative > opts.tol.max(1e-14) * 1e3 {
        return Err(WgError::Singular(format!(
            "relative residual {:.3e} after solve exceeds tolerance {:.1e}",
            residuals.relative, opts.tol
        )));
    }
    Ok(SolveReport {
        velocity,
        pressure: PressureFunction {
            coeffs,
            normalized: true,
        },
        multiplier,
        residuals,
        mode,
        unknowns: x.len(),
        nonzeros: nnz,
        iterations,
        history,
        wall_time: start.elapsed(),
    })
}

/// Sparse LU of the augmented matrix.
pub fn solve_direct(system: &mut SaddleSystem, opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let (m, rhs) = system.augmented();
    let dim = m.nrows;
    let lu = m
        .to_faer()?
        .sp_lu()
        .map_err(|e| WgError::Singular(format!("sparse LU of the {dim}×{dim} augmented system failed: {e:?}")))?;
    let b = Col::<f64>::from_fn(dim, |i| rhs[i]);
    let sol = lu.solve(&b);
    let x: Vec<f64> = (0..dim).map(|i| sol[i]).collect();
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        let what = if i < system.n_free {
            format!("velocity unknown {i}")
        } else if i < system.n_free + system.n_pressure {
            format!("pressure unknown {}", i - system.n_free)
        } else {
            "mean multiplier".to_string()
        };
        return Err(WgError::Singular(format!("non-finite value at {what} (zero pivot in the factorization)")));
    }
    finish(system, &x, opts, SolverMode::Direct, m.nnz(), None, Vec::new(), start)
}

pub fn solve_iterative(system: &mut SaddleSystem, opts: &SolveOptions, prec: &dyn Preconditioner) -> Result<SolveReport> {
    let start = Instant::now();
    let (m, rhs) = system.augmented();
    let out = minres(&m, &rhs, prec, opts.tol, opts.max_iterations);
    if !out.converged {
        return Err(WgError::NotConverged {
            iterations: out.iterations,
            residual: *out.history.last().unwrap_or(&f64::NAN),
            history: out.history,
        });
    }
    finish(system, &out.x, opts, SolverMode::Iterative, m.nnz(), Some(out.iterations), out.history, start)
}

#[derive(Debug, Clone)]
pub struct MinresOutput {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True relative residual `‖b - Ax‖ / ‖b‖` at each check.
    pub history: Vec<f64>,
}

/// Preconditioned MINRES for symmetric, possibly indefinite `a`.
pub fn minres(a: &CsrMatrix, b: &[f64], prec: &dyn Preconditioner, tol: f64, max_iter: usize) -> MinresOutput {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return MinresOutput {
            x,
            iterations: 0,
            converged: true,
            history: vec![0.0],
        };
    }
    let true_rel = |x: &[f64]| {
        let ax = a.matvec(x);
        norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>()) / bnorm
    };

    let mut r1 = b.to_vec();
    let mut y = prec.apply(&r1);
    let beta1 = dot(&r1, &y).sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut history = Vec::new();

    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|t| s * t).collect();
        y = a.matvec(&v);
        if itn >= 2 {
            let c = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(t, r)| *t -= c * r);
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(t, r)| *t -= c * r);
        r1 = std::mem::replace(&mut r2, y);
        y = prec.apply(&r2);
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += phi * wi);

        let estimate = phibar / beta1;
        if estimate <= tol || beta == 0.0 || itn % 100 == 0 || itn == max_iter {
            let rel = true_rel(&x);
            history.push(rel);
            if rel <= tol {
                return MinresOutput {
                    x,
                    iterations: itn,
                    converged: true,
                    history,
                };
            }
            if beta == 0.0 {
                break;
            }
        }
    }
    let iterations = max_iter;
    MinresOutput {
        x,
        iterations,
        converged: false,
        history,
    }
}

/// Discrete inf-sup constant of `b_h` on `V_h × Ψ_h`, measured in the
/// norm `‖v‖² = a_h(v,v) + ‖∇_w·v‖²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfSup {
    /// Square root of the smallest nonzero generalized eigenvalue.
    pub constant: f64,
    /// Generalized eigenvalues of `B N⁻¹ Bᵀ q = λ M_p q`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues treated as zero (constants).
    pub kernel_dim: usize,
}

/// Dense computation; intended for small meshes.
pub fn inf_sup(space: &WgSpace, ops: &[CellOperators]) -> Result<InfSup> {
    let nf = space.dofs.n_free;
    let np = space.dofs.n_pressure;
    let a = assemble_a_h(space, ops).block(0..nf, 0..nf).to_dense();
    let d = assemble_div_gram(space, ops).block(0..nf, 0..nf).to_dense();
    let n = &a + &d;
    let b = assemble_b_h(space, ops).block(0..np, 0..nf).to_dense();
    let mp = assemble_pressure_mass(space).to_dense();
    let llt = n
        .llt(Side::Lower)
        .map_err(|e| WgError::Singular(format!("velocity norm matrix: {e:?}")))?;
    let x = llt.solve(b.transpose().to_owned());
    let s = &b * &x;
    let lm = mp
        .llt(Side::Lower)
        .map_err(|e| WgError::Singular(format!("pressure mass: {e:?}")))?;
    let linv = lm.L().to_owned().partial_piv_lu().inverse();
    let c = &linv * &s * linv.transpose();
    let c = Mat::from_fn(np, np, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let eigenvalues = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| WgError::Singular(format!("eigenvalues: {e:?}")))?;
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    let kernel_dim = eigenvalues.iter().filter(|&&l| l <= 1e-10 * top).count();
    let constant = eigenvalues
        .iter()
        .copied()
        .find(|&l| l > 1e-10 * top)
        .map(f64::sqrt)
        .unwrap_or(0.0);
    Ok(InfSup {
        constant,
        eigenvalues,
        kernel_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, DarcyStokesBox};
    use crate::weakops::all_cell_operators;
    use crate::wgspace::{QuadSettings, WgParams, WgSpace};

    fn system(n: usize) -> (WgSpace, SaddleSystem) {
        let mesh = build_rect_mesh(n, &DarcyStokesBox::default()).unwrap();
        let s = WgSpace::new(mesh, WgParams::default(), QuadSettings::default()).unwrap();
        let ops = all_cell_operators(&s);
        let sys = SaddleSystem::assemble(&s, &ops, &|_, p| [p[1].sin(), p[0].cos()], &|_, _| 0.0);
        (s, sys)
    }

    #[test]
    fn minres_on_small_indefinite_matrix() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 2, 1.0), (2, 0, 1.0), (1, 1, -3.0), (1, 2, 0.5), (2, 1, 0.5)],
        );
        let b = [1.0, 2.0, 3.0];
        let out = minres(&a, &b, &Identity, 1e-13, 50);
        assert!(out.converged);
        let ax = a.matvec(&out.x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = build_rect_mesh(2, &DarcyStokesBox::default()).unwrap();
        let s = WgSpace::new(mesh, WgParams::default(), QuadSettings::default()).unwrap();
        let ops = all_cell_operators(&s);
        let mut sys = SaddleSystem::assemble(&s, &ops, &|_, _| [0.0, 0.0], &|_, _| 0.0);
        for mode in [SolverMode::Direct, SolverMode::Iterative] {
            let opts = SolveOptions { mode, ..Default::default() };
            let r = solve(&mut sys, &opts).unwrap();
            assert!(r.velocity.free.iter().chain(&r.pressure.coeffs).all(|x| x.abs() <= 1e-12));
        }
    }

    #[test]
    fn direct_and_iterative_agree() {
        let (s, mut sys) = system(4);
        let d = solve(&mut sys, &SolveOptions::default()).unwrap();
        let opts = SolveOptions {
            mode: SolverMode::Iterative,
            tol: 1e-13,
            ..Default::default()
        };
        let it = solve(&mut sys, &opts).unwrap();
        assert!(it.iterations.unwrap() > 0);
        for (a, b) in d.velocity.free.iter().zip(&it.velocity.free) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in d.pressure.coeffs.iter().zip(&it.pressure.coeffs) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(d.residuals.relative <= 1e-10);
        assert!(d.pressure.integral(&s).abs() <= 1e-10 * s.domain_area() * d.pressure.l2_norm(&s).max(1e-300));
    }

    #[test]
    fn residual_certificate_matches_augmented_residual() {
        let (_, mut sys) = system(2);
        sys.set_boundary_values((0..sys.n_fixed).map(|i| (i as f64).sin()).collect()).unwrap();
        let r = solve(&mut sys, &SolveOptions::default()).unwrap();
        let (m, rhs) = sys.augmented();
        let mut x = r.velocity.free.clone();
        x.extend_from_slice(&r.pressure.coeffs);
        x.push(r.multiplier);
        let mx = m.matvec(&x);
        let res: f64 = mx.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = rhs[..rhs.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((res / scale - r.residuals.relative).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let (_, mut sys) = system(1);
        // Dropping the mean constraint leaves the constant pressure mode.
        sys.mean.iter_mut().for_each(|m| *m = 0.0);
        let err = solve(&mut sys, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, WgError::Singular(_)), "{err}");
    }

    #[test]
    fn non_convergence_carries_history() {
        let (_, mut sys) = system(2);
        let opts = SolveOptions {
            mode: SolverMode::Iterative,
            tol: 1e-14,
            max_iterations: 5,
        };
        match solve(&mut sys, &opts) {
            Err(WgError::NotConverged { iterations, history, .. }) => {
                assert_eq!(iterations, 5);
                assert!(!history.is_empty());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
