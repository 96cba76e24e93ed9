//! Manufactured Darcy-Stokes solution, interpolants, discrete error norms
//! and convergence studies.
//!
//! The exact solution on `Ω_S = (0,π)×(0,1)`, `Ω_D = (0,π)×(-1,0)` is
//!
//! ```text
//! u_S = (v'(y) cos x, v(y) sin x),   v(y) = sin²(πy)/π² - 2,
//! p_S = sin x sin y,
//! p_D = 2 sinh(y) sin x,             u_D = -∇p_D.
//! ```
//!
//! Both velocities are divergence free, `u_S = u_D` on `y = 0`, and the
//! interface stress conditions hold for any `ν`, `μ` and `K`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_a, FormParts, SaddleSystem};
use crate::mesh::{build_rect_mesh, DarcyStokesBox, EdgeClass, PolyMesh, Region};
use crate::polyquad::{as_axis_rectangle, Basis};
use crate::solver::{solve, Residuals, SolveOptions, SolveReport};
use crate::weakops::{all_cell_operators, weak_gradient, CellOperators};
use crate::wgspace::{dot, PressureFunction, QuadSettings, Tensor, TraceKind, WgFunction, WgParams, WgSpace};
use crate::{Point, Result, WgError};

/// Closed-form fields with physical coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub nu: f64,
    pub permeability: crate::wgspace::Permeability,
    pub mu: f64,
}

impl Default for ExactSolution {
    fn default() -> Self {
        Self {
            nu: 1.0,
            permeability: crate::wgspace::Permeability::isotropic(1.0),
            mu: 1.0,
        }
    }
}

fn v(y: f64) -> f64 {
    (PI * y).sin().powi(2) / (PI * PI) - 2.0
}

fn dv(y: f64) -> f64 {
    (2.0 * PI * y).sin() / PI
}

fn d2v(y: f64) -> f64 {
    2.0 * (2.0 * PI * y).cos()
}

fn d3v(y: f64) -> f64 {
    -4.0 * PI * (2.0 * PI * y).sin()
}

impl ExactSolution {
    pub fn from_params(p: &WgParams) -> Self {
        Self {
            nu: p.nu,
            permeability: p.permeability,
            mu: p.mu,
        }
    }

    pub fn velocity(&self, r: Region, p: Point) -> Point {
        let [x, y] = p;
        match r {
            Region::Stokes => [dv(y) * x.cos(), v(y) * x.sin()],
            Region::Darcy => [-2.0 * y.sinh() * x.cos(), -2.0 * y.cosh() * x.sin()],
        }
    }

    pub fn pressure(&self, r: Region, p: Point) -> f64 {
        let [x, y] = p;
        match r {
            Region::Stokes => x.sin() * y.sin(),
            Region::Darcy => 2.0 * y.sinh() * x.sin(),
        }
    }

    pub fn pressure_gradient(&self, r: Region, p: Point) -> Point {
        let [x, y] = p;
        match r {
            Region::Stokes => [x.cos() * y.sin(), x.sin() * y.cos()],
            Region::Darcy => [2.0 * y.sinh() * x.cos(), 2.0 * y.cosh() * x.sin()],
        }
    }

    /// `[k][l] = ∂_l u_k`.
    pub fn velocity_gradient(&self, r: Region, p: Point) -> Tensor {
        let [x, y] = p;
        match r {
            Region::Stokes => [
                [-dv(y) * x.sin(), d2v(y) * x.cos()],
                [v(y) * x.cos(), dv(y) * x.sin()],
            ],
            Region::Darcy => [
                [2.0 * y.sinh() * x.sin(), -2.0 * y.cosh() * x.cos()],
                [-2.0 * y.cosh() * x.cos(), -2.0 * y.sinh() * x.sin()],
            ],
        }
    }

    pub fn strain(&self, r: Region, p: Point) -> Tensor {
        let g = self.velocity_gradient(r, p);
        let off = 0.5 * (g[0][1] + g[1][0]);
        [[g[0][0], off], [off, g[1][1]]]
    }

    /// `T = 2νD(u) - pI` on the Stokes side.
    pub fn stress(&self, p: Point) -> Tensor {
        let d = self.strain(Region::Stokes, p);
        let q = self.pressure(Region::Stokes, p);
        [
            [2.0 * self.nu * d[0][0] - q, 2.0 * self.nu * d[0][1]],
            [2.0 * self.nu * d[1][0], 2.0 * self.nu * d[1][1] - q],
        ]
    }

    /// `-νΔu_S + ∇p_S` on Stokes, `K⁻¹u_D + ∇p_D` on Darcy.
    pub fn forcing(&self, r: Region, p: Point) -> Point {
        let [x, y] = p;
        let gp = self.pressure_gradient(r, p);
        match r {
            Region::Stokes => [
                self.nu * (dv(y) - d3v(y)) * x.cos() + gp[0],
                self.nu * (v(y) - d2v(y)) * x.sin() + gp[1],
            ],
            Region::Darcy => {
                let k = self.permeability.inverse();
                let u = self.velocity(r, p);
                [
                    k[0][0] * u[0] + k[0][1] * u[1] + gp[0],
                    k[1][0] * u[0] + k[1][1] * u[1] + gp[1],
                ]
            }
        }
    }

    /// `g = ∇·u`, evaluated from the closed-form gradient.
    pub fn divergence(&self, r: Region, p: Point) -> f64 {
        let g = self.velocity_gradient(r, p);
        g[0][0] + g[1][1]
    }

    /// `∫ p` over an axis-aligned box inside one region.
    pub fn pressure_box_integral(&self, r: Region, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        let sx = x0.cos() - x1.cos();
        match r {
            Region::Stokes => sx * (y0.cos() - y1.cos()),
            Region::Darcy => 2.0 * sx * (y1.cosh() - y0.cosh()),
        }
    }

    /// Domain average of `p` over the given layout.
    pub fn pressure_mean(&self, domain: &DarcyStokesBox) -> f64 {
        let (s, d) = (domain.stokes, domain.darcy);
        let total = self.pressure_box_integral(Region::Stokes, s.x0, s.x1, s.y0, s.y1)
            + self.pressure_box_integral(Region::Darcy, d.x0, d.x1, d.y0, d.y1);
        total / domain.area()
    }

    /// Residuals of the three interface conditions at `(x, 0)`, with `n̂`
    /// pointing from Stokes into Darcy: normal-velocity jump, and the two
    /// components of `T n̂ + p_D n̂ + μ K^{-1/2}(u_S·t̂) t̂`.
    pub fn interface_residuals(&self, x: f64) -> (f64, Point) {
        let p = [x, 0.0];
        let n = [0.0, -1.0];
        let t = [-n[1], n[0]];
        let us = self.velocity(Region::Stokes, p);
        let ud = self.velocity(Region::Darcy, p);
        let jump = (us[0] - ud[0]) * n[0] + (us[1] - ud[1]) * n[1];
        let tt = self.stress(p);
        let pd = self.pressure(Region::Darcy, p);
        let r = self.permeability.power(-0.5);
        let w = self.mu * (t[0] * (r[0][0] * t[0] + r[0][1] * t[1]) + t[1] * (r[1][0] * t[0] + r[1][1] * t[1]));
        let ut = us[0] * t[0] + us[1] * t[1];
        let res = [
            tt[0][0] * n[0] + tt[0][1] * n[1] + pd * n[0] + w * ut * t[0],
            tt[1][0] * n[0] + tt[1][1] * n[1] + pd * n[1] + w * ut * t[1],
        ];
        (jump, res)
    }
}

/// How discrete boundary traces are prescribed from the exact velocity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryData {
    /// Edge `L²` projection `Q_b`.
    Projection,
    /// Linear interpolation through the edge endpoints.
    #[default]
    Interpolation,
}

/// Reference quantities the discrete solution is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// `I_h u - u_h` and `J_h p - p_h`.
    #[default]
    Interpolant,
    /// `Q_h u - u_h` and `Q p - p_h`.
    Projection,
}

fn check_interpolant_config(space: &WgSpace) -> Result<()> {
    let p = &space.params;
    if (p.alpha_s, p.alpha_d, p.beta, p.gamma_s, p.gamma_d) != (1, 1, 1, 0, 0) {
        return Err(WgError::Unsupported(format!(
            "nodal interpolants need degrees (1,1,1,0,0), got ({},{},{},{},{})",
            p.alpha_s, p.alpha_d, p.beta, p.gamma_s, p.gamma_d
        )));
    }
    for c in 0..space.mesh.cells.len() {
        if as_axis_rectangle(&space.mesh.cell_points(c)).is_none() {
            return Err(WgError::Unsupported(format!("cell {c} is not an axis-aligned rectangle")));
        }
    }
    Ok(())
}

/// Endpoint-interpolated trace coefficients of one edge.
fn nodal_edge(space: &WgSpace, edge: usize, u: impl Fn(Point) -> Point) -> Vec<f64> {
    let (a, b) = space.mesh.edge_points(edge);
    let (ua, ub) = (u(a), u(b));
    let nb = space.params.beta + 1;
    let line = |va: f64, vb: f64| {
        let mut c = vec![0.0; nb];
        c[0] = 0.5 * (va + vb);
        if nb > 1 {
            c[1] = 0.5 * (vb - va);
        }
        c
    };
    match space.dofs.edges[edge].kind {
        TraceKind::Vector => {
            let mut c = line(ua[0], ub[0]);
            c.extend(line(ua[1], ub[1]));
            c
        }
        TraceKind::Normal => {
            let n = space.mesh.edges[edge].normal;
            line(ua[0] * n[0] + ua[1] * n[1], ub[0] * n[0] + ub[1] * n[1])
        }
    }
}

/// Boundary trace coefficients for the fixed block.
pub fn boundary_values(space: &WgSpace, exact: &ExactSolution, how: BoundaryData) -> Vec<f64> {
    let mut w = WgFunction::zeros(&space.dofs);
    for (e, edge) in space.mesh.edges.iter().enumerate() {
        if !edge.class.is_boundary() {
            continue;
        }
        let r = space.edge_region(e);
        let c = match how {
            BoundaryData::Projection => space.project_qb(e, |p| exact.velocity(r, p)),
            BoundaryData::Interpolation => nodal_edge(space, e, |p| exact.velocity(r, p)),
        };
        w.set_edge_coefficients(space, e, &c);
    }
    w.fixed
}

/// `I_h u`: linear interpolation through the lower-left, lower-right and
/// upper-left corners on cells and through the endpoints on edges,
/// including boundary edges.
pub fn interpolate_ih(space: &WgSpace, u: impl Fn(Region, Point) -> Point) -> Result<WgFunction> {
    check_interpolant_config(space)?;
    let mut w = WgFunction::zeros(&space.dofs);
    for c in 0..space.mesh.cells.len() {
        let r = space.region(c);
        let (x0, x1, y0, y1) = as_axis_rectangle(&space.mesh.cell_points(c)).unwrap();
        let basis = space.velocity_basis(c);
        let (ll, lr, ul) = (u(r, [x0, y0]), u(r, [x1, y0]), u(r, [x0, y1]));
        let s = space.dofs.cell_start[c];
        for k in 0..2 {
            let bx = (lr[k] - ll[k]) / (x1 - x0);
            let by = (ul[k] - ll[k]) / (y1 - y0);
            let a = ll[k] + bx * (basis.center[0] - x0) + by * (basis.center[1] - y0);
            w.free[s + 3 * k] = a;
            w.free[s + 3 * k + 1] = bx * basis.scale;
            w.free[s + 3 * k + 2] = by * basis.scale;
        }
    }
    for e in 0..space.mesh.edges.len() {
        let r = space.edge_region(e);
        let c = nodal_edge(space, e, |p| u(r, p));
        w.set_edge_coefficients(space, e, &c);
    }
    Ok(w)
}

/// `J_h p`: cell-centre values.
pub fn interpolate_jh(space: &WgSpace, p: impl Fn(Region, Point) -> f64) -> Result<PressureFunction> {
    check_interpolant_config(space)?;
    let coeffs = (0..space.mesh.cells.len())
        .map(|c| p(space.region(c), space.mesh.cells[c].centroid))
        .collect();
    Ok(PressureFunction {
        coeffs,
        normalized: false,
    })
}

/// The five tabulated quantities, plus the full weak gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖D_w e‖` on `Ω_S`, the first tabulated column.
    pub strain_stokes: f64,
    /// `‖e_0‖` on `Ω_S`.
    pub velocity_stokes: f64,
    pub pressure_stokes: f64,
    /// `‖e_0‖` on `Ω_D`.
    pub velocity_darcy: f64,
    pub pressure_darcy: f64,
    /// `‖∇_w e‖` on `Ω_S`.
    pub grad_stokes: f64,
}

impl ErrorReport {
    pub const COLUMNS: [&'static str; 5] = ["strain_u_S", "u0_S", "p_S", "u0_D", "p_D"];

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.strain_stokes,
            self.velocity_stokes,
            self.pressure_stokes,
            self.velocity_darcy,
            self.pressure_darcy,
        ]
    }
}

/// Norms of a velocity difference and a pressure difference.
pub fn difference_norms(space: &WgSpace, ops: &[CellOperators], e: &WgFunction, ep: &PressureFunction) -> ErrorReport {
    let per_cell: Vec<(Region, [f64; 2], f64, f64)> = (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let r = space.region(c);
            let rule = &space.cell_rules[c];
            let u0 = rule.integrate(|p| {
                let v = e.eval_interior(space, c, p);
                v[0] * v[0] + v[1] * v[1]
            });
            let pp = rule.integrate(|p| ep.eval(space, c, p).powi(2));
            let grad = if r == Region::Stokes {
                let g = weak_gradient(space, &ops[c], c, e).expect("Stokes cell");
                let b = space.beta_basis(c);
                let full = rule.integrate(|p| {
                    let f = b.eval(p);
                    g.iter().map(|gk| dot(gk, &f).powi(2)).sum()
                });
                let sym = rule.integrate(|p| {
                    let f = b.eval(p);
                    let v: [f64; 4] = std::array::from_fn(|i| dot(&g[i], &f));
                    v[0] * v[0] + v[3] * v[3] + 0.5 * (v[1] + v[2]).powi(2)
                });
                [full, sym]
            } else {
                [0.0; 2]
            };
            (r, grad, u0, pp)
        })
        .collect();
    let mut out = [0.0; 6];
    for (r, g, u, p) in per_cell {
        match r {
            Region::Stokes => {
                out[0] += g[1];
                out[5] += g[0];
                out[1] += u;
                out[2] += p;
            }
            Region::Darcy => {
                out[3] += u;
                out[4] += p;
            }
        }
    }
    ErrorReport {
        strain_stokes: out[0].sqrt(),
        velocity_stokes: out[1].sqrt(),
        pressure_stokes: out[2].sqrt(),
        velocity_darcy: out[3].sqrt(),
        pressure_darcy: out[4].sqrt(),
        grad_stokes: out[5].sqrt(),
    }
}

/// Reference velocity and mean-free reference pressure for a mode.
pub fn reference_fields(
    space: &WgSpace,
    exact: &ExactSolution,
    mean: f64,
    mode: ErrorMode,
) -> Result<(WgFunction, PressureFunction)> {
    let u = |r: Region, p: Point| exact.velocity(r, p);
    let q = |r: Region, p: Point| exact.pressure(r, p) - mean;
    Ok(match mode {
        ErrorMode::Interpolant => (interpolate_ih(space, u)?, interpolate_jh(space, q)?),
        ErrorMode::Projection => (space.project_qh_full(u), space.project_pressure(q)),
    })
}

pub fn error_norms(
    space: &WgSpace,
    ops: &[CellOperators],
    u_h: &WgFunction,
    p_h: &PressureFunction,
    exact: &ExactSolution,
    mean: f64,
    mode: ErrorMode,
) -> Result<ErrorReport> {
    let (ru, rp) = reference_fields(space, exact, mean, mode)?;
    let ep = PressureFunction {
        coeffs: rp.coeffs.iter().zip(&p_h.coeffs).map(|(a, b)| a - b).collect(),
        normalized: false,
    };
    Ok(difference_norms(space, ops, &ru.sub(u_h), &ep))
}

/// Values of the consistency functionals in the error equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub stabilization: f64,
    pub l_s: f64,
    pub l_d: f64,
    pub l_div: f64,
    pub l_i: f64,
}

impl Functionals {
    /// `s(Q_h u, v) + l_S - l_D - l_div - l_I`.
    pub fn error_equation_rhs(&self) -> f64 {
        self.stabilization + self.l_s - self.l_d - self.l_div - self.l_i
    }
}

pub fn diagnostics_functionals(space: &WgSpace, ops: &[CellOperators], exact: &ExactSolution, v: &WgFunction) -> Functionals {
    let mesh = &space.mesh;
    let qu = space.project_qh_full(|r, p| exact.velocity(r, p));
    let stab = assemble_a(space, ops, FormParts::STABILIZATION);
    let stabilization = dot(&stab.matvec(&qu.combined()), &v.combined());
    let kinv = space.params.permeability.inverse();

    let per_cell: Vec<(f64, f64, f64)> = (0..mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let r = space.region(c);
            let (mut l_s, mut l_d, mut l_div) = (0.0, 0.0, 0.0);
            let pb = space.pressure_basis(c);
            let qp = space.project_pressure(|rr, p| exact.pressure(rr, p));
            let qp_c = qp.cell(space, c).to_vec();
            let pi_d = (r == Region::Stokes).then(|| space.project_tensor(c, |p| exact.strain(r, p)));
            let bb = space.beta_basis(c);
            for (le, &e) in mesh.cells[c].edges.iter().enumerate() {
                let n = mesh.outward_normal(c, le);
                let rule = &space.edge_rules[e];
                for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                    let v0 = v.eval_interior(space, c, p);
                    let vb = v.eval_trace(space, e, p);
                    let d = [v0[0] - vb[0], v0[1] - vb[1]];
                    let pdiff = exact.pressure(r, p) - dot(&qp_c, &pb.eval(p));
                    l_div += w * (d[0] * n[0] + d[1] * n[1]) * pdiff;
                    if let Some(pi) = &pi_d {
                        let du = exact.strain(r, p);
                        let f = bb.eval(p);
                        let m = [
                            [du[0][0] - dot(&pi[0], &f), du[0][1] - dot(&pi[1], &f)],
                            [du[1][0] - dot(&pi[2], &f), du[1][1] - dot(&pi[3], &f)],
                        ];
                        let mn = [m[0][0] * n[0] + m[0][1] * n[1], m[1][0] * n[0] + m[1][1] * n[1]];
                        l_s += 2.0 * space.params.nu * w * (d[0] * mn[0] + d[1] * mn[1]);
                    }
                }
            }
            if r == Region::Darcy {
                let q0 = space.project_q0(c, |p| exact.velocity(r, p));
                let na = q0.len() / 2;
                let basis = space.velocity_basis(c);
                l_d = space.cell_rules[c].integrate(|p| {
                    let f = basis.eval(p);
                    let u = exact.velocity(r, p);
                    let e = [u[0] - dot(&q0[..na], &f), u[1] - dot(&q0[na..], &f)];
                    let ke = [kinv[0][0] * e[0] + kinv[0][1] * e[1], kinv[1][0] * e[0] + kinv[1][1] * e[1]];
                    let v0 = v.eval_interior(space, c, p);
                    ke[0] * v0[0] + ke[1] * v0[1]
                });
            }
            (l_s, l_d, l_div)
        })
        .collect();

    let mut l_i = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.class != EdgeClass::Interface {
            continue;
        }
        let t = mesh.interface_tangent(e);
        let w = crate::assembly::interface_weight(space, e);
        let rule = &space.edge_rules[e];
        for (&p, &wq) in rule.points.iter().zip(&rule.weights) {
            let u = exact.velocity(Region::Stokes, p);
            let q = qu.eval_trace(space, e, p);
            let vb = v.eval_trace(space, e, p);
            l_i += wq * w * ((u[0] - q[0]) * t[0] + (u[1] - q[1]) * t[1]) * (vb[0] * t[0] + vb[1] * t[1]);
        }
    }
    let (l_s, l_d, l_div) = per_cell
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Functionals {
        stabilization,
        l_s,
        l_d,
        l_div,
        l_i,
    }
}

/// Settings of one manufactured-solution run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub params: WgParams,
    pub quad: QuadSettings,
    pub solver: SolveOptions,
    pub boundary: BoundaryData,
    pub mode: ErrorMode,
    /// Also report projection-based errors.
    pub projection_errors: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            params: WgParams::default(),
            quad: QuadSettings::default(),
            solver: SolveOptions::default(),
            boundary: BoundaryData::default(),
            mode: ErrorMode::default(),
            projection_errors: false,
        }
    }
}

/// Discrete problem and solution for one mesh.
pub struct MmsSolution {
    pub space: WgSpace,
    pub ops: Vec<CellOperators>,
    pub system: SaddleSystem,
    pub report: SolveReport,
    pub exact: ExactSolution,
    pub mean: f64,
    pub assemble_time: Duration,
}

pub fn solve_mms(n: usize, cfg: &StudyConfig) -> Result<MmsSolution> {
    solve_mms_on(build_rect_mesh(n, &DarcyStokesBox::default())?, cfg)
}

/// Solve on a given mesh of the standard Darcy-Stokes box.
pub fn solve_mms_on(mesh: PolyMesh, cfg: &StudyConfig) -> Result<MmsSolution> {
    let start = Instant::now();
    let domain = DarcyStokesBox::default();
    let space = WgSpace::new(mesh, cfg.params.clone(), cfg.quad)?;
    let exact = ExactSolution::from_params(&cfg.params);
    let ops = all_cell_operators(&space);
    let f = |r: Region, p: Point| exact.forcing(r, p);
    let g = |r: Region, p: Point| exact.divergence(r, p);
    let mut system = SaddleSystem::assemble(&space, &ops, &f, &g);
    system.set_boundary_values(boundary_values(&space, &exact, cfg.boundary))?;
    system.apply_boundary_conditions();
    let assemble_time = start.elapsed();
    let report = solve(&mut system, &cfg.solver)?;
    Ok(MmsSolution {
        mean: exact.pressure_mean(&domain),
        space,
        ops,
        system,
        report,
        exact,
        assemble_time,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorReport,
    pub projection: Option<ErrorReport>,
    pub unknowns: usize,
    pub residuals: Residuals,
    #[serde(skip)]
    pub assemble_time: Duration,
    #[serde(skip)]
    pub solve_time: Duration,
}

pub fn run_case(n: usize, cfg: &StudyConfig) -> Result<StudyRow> {
    run_case_on(n, build_rect_mesh(n, &DarcyStokesBox::default())?, cfg)
}

/// One row on a given mesh; `n` is only a label.
pub fn run_case_on(n: usize, mesh: PolyMesh, cfg: &StudyConfig) -> Result<StudyRow> {
    let sol = solve_mms_on(mesh, cfg)?;
    let u = &sol.report.velocity;
    let p = &sol.report.pressure;
    let errors = error_norms(&sol.space, &sol.ops, u, p, &sol.exact, sol.mean, cfg.mode)?;
    let projection = if cfg.projection_errors {
        Some(error_norms(&sol.space, &sol.ops, u, p, &sol.exact, sol.mean, ErrorMode::Projection)?)
    } else {
        None
    };
    Ok(StudyRow {
        n,
        h: sol.space.mesh.h(),
        errors,
        projection,
        unknowns: sol.report.unknowns,
        residuals: sol.report.residuals.clone(),
        assemble_time: sol.assemble_time,
        solve_time: sol.report.wall_time,
    })
}

/// Pairwise rates `log(e_i/e_{i+1}) / log(n_{i+1}/n_i)`.
pub fn pairwise_rates(ns: &[usize], errs: &[[f64; 5]]) -> Vec<[f64; 5]> {
    ns.windows(2)
        .zip(errs.windows(2))
        .map(|(n, e)| {
            let d = (n[1] as f64 / n[0] as f64).ln();
            std::array::from_fn(|k| (e[0][k] / e[1][k]).ln() / d)
        })
        .collect()
}

/// Least-squares slope of `-log e` against `log n`.
pub fn least_squares_rates(ns: &[usize], errs: &[[f64; 5]]) -> Option<[f64; 5]> {
    if ns.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    Some(std::array::from_fn(|k| {
        let ys: Vec<f64> = errs.iter().map(|e| e[k].ln()).collect();
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        -sxy / sxx
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rho: f64,
    pub rows: Vec<StudyRow>,
    /// Rows that failed, with the error message.
    pub failures: Vec<(usize, String)>,
    pub pairwise: Vec<[f64; 5]>,
    /// Least-squares fit over rows with `n >= fit_from`.
    pub least_squares: Option<[f64; 5]>,
    pub fit_from: usize,
}

/// Run every `n`, continuing past failed rows.
pub fn convergence_study(n_list: &[usize], cfg: &StudyConfig, fit_from: Option<usize>) -> Result<ConvergenceTable> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WgError::Unsupported("n values must be strictly ascending".into()));
    }
    if let Some(&first) = n_list.first() {
        if n_list.iter().any(|&n| n % first != 0 || !(n / first).is_power_of_two()) {
            return Err(WgError::Unsupported("each n must be a power-of-two multiple of the first".into()));
        }
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in n_list {
        match run_case(n, cfg) {
            Ok(r) => rows.push(r),
            Err(e) => failures.push((n, e.to_string())),
        }
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let errs: Vec<[f64; 5]> = rows.iter().map(|r| r.errors.as_array()).collect();
    let fit_from = fit_from.or(n_list.first().copied()).unwrap_or(0);
    let (fn_, fe): (Vec<usize>, Vec<[f64; 5]>) = ns
        .iter()
        .zip(&errs)
        .filter(|(n, _)| **n >= fit_from)
        .map(|(n, e)| (*n, *e))
        .unzip();
    Ok(ConvergenceTable {
        rho: cfg.params.rho_s,
        pairwise: pairwise_rates(&ns, &errs),
        least_squares: least_squares_rates(&fn_, &fe),
        rows,
        failures,
        fit_from,
    })
}
