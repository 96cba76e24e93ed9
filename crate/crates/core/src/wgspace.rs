//! Discrete spaces: parameter admissibility, the velocity/pressure degree of
//! freedom layout, discrete functions and the `L²` projections onto them.
//!
//! Velocity unknowns are numbered in two blocks. Free unknowns come first
//! (cell interiors, then the traces of interior and interface edges);
//! boundary traces form a separate "fixed" block that is eliminated from the
//! linear system and holds prescribed boundary data.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::{EdgeClass, PolyMesh, Region};
use crate::polyquad::{
    cell_dim, cell_quadrature, edge_quadrature, l2_project, mass_matrix, spd_inverse, Basis,
    CellBasis, EdgeBasis, QuadratureRule,
};
use crate::{Point, Result, WgError};

pub type Tensor = [[f64; 2]; 2];

/// Constant symmetric positive definite permeability tensor on the Darcy side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Permeability(pub Tensor);

impl Permeability {
    pub fn isotropic(k: f64) -> Self {
        Self([[k, 0.0], [0.0, k]])
    }

    fn eigen(&self) -> ([f64; 2], [Point; 2]) {
        let [[a, b], [_, d]] = self.0;
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
        let (l1, l2) = (mean - r, mean + r);
        let v1 = if b.abs() > 1e-300 {
            let v = [l1 - d, b];
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            [v[0] / n, v[1] / n]
        } else if a <= d {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        ([l1, l2], [v1, [-v1[1], v1[0]]])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    /// `K^s` through the spectral decomposition.
    pub fn power(&self, s: f64) -> Tensor {
        let (l, v) = self.eigen();
        let mut out = [[0.0; 2]; 2];
        for k in 0..2 {
            let w = l[k].powf(s);
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += w * v[k][i] * v[k][j];
                }
            }
        }
        out
    }

    pub fn inverse(&self) -> Tensor {
        let [[a, b], [c, d]] = self.0;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }
}

/// Cell length used in the `h_K^{-1}` stabilization weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilizationLength {
    /// Longest edge of the cell.
    #[default]
    LongestEdge,
    Diameter,
}

/// Polynomial degrees, stabilization weights and physical coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WgParams {
    pub alpha_s: usize,
    pub alpha_d: usize,
    pub beta: usize,
    pub gamma_s: usize,
    pub gamma_d: usize,
    pub rho_s: f64,
    pub rho_d: f64,
    #[serde(default)]
    pub stabilization_length: StabilizationLength,
    /// Viscosity.
    pub nu: f64,
    pub permeability: Permeability,
    /// Beavers-Joseph-Saffman slip coefficient.
    pub mu: f64,
}

impl Default for WgParams {
    fn default() -> Self {
        Self {
            alpha_s: 1,
            alpha_d: 1,
            beta: 1,
            gamma_s: 0,
            gamma_d: 0,
            rho_s: 1.0,
            rho_d: 1.0,
            stabilization_length: StabilizationLength::default(),
            nu: 1.0,
            permeability: Permeability::isotropic(1.0),
            mu: 1.0,
        }
    }
}

impl WgParams {
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho_s = rho;
        self.rho_d = rho;
        self
    }

    pub fn with_degrees(mut self, alpha_s: usize, alpha_d: usize, beta: usize, gamma_s: usize, gamma_d: usize) -> Self {
        self.alpha_s = alpha_s;
        self.alpha_d = alpha_d;
        self.beta = beta;
        self.gamma_s = gamma_s;
        self.gamma_d = gamma_d;
        self
    }

    /// Every violated condition, by name; empty when admissible.
    pub fn violations(&self) -> Vec<String> {
        let (a_s, a_d, b, g_s, g_d) = (
            self.alpha_s as i64,
            self.alpha_d as i64,
            self.beta as i64,
            self.gamma_s as i64,
            self.gamma_d as i64,
        );
        let mut v = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                v.push(format!(
                    "{what} (alpha_s={a_s}, alpha_d={a_d}, beta={b}, gamma_s={g_s}, gamma_d={g_d})"
                ));
            }
        };
        check(b - 1 <= g_s, "beta - 1 <= gamma_s");
        check(g_s <= b, "gamma_s <= beta");
        check(b <= a_s, "beta <= alpha_s");
        check(a_s <= b + 1, "alpha_s <= beta + 1");
        check(b - 1 <= g_d, "beta - 1 <= gamma_d");
        check(g_d <= b, "gamma_d <= beta");
        check(b == a_d, "beta == alpha_d");
        check(a_s <= g_s + 1, "alpha_s <= gamma_s + 1");
        for (name, val) in [
            ("rho_s", self.rho_s),
            ("rho_d", self.rho_d),
            ("nu", self.nu),
            ("mu", self.mu),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("{name} > 0 (got {val})"));
            }
        }
        let k = self.permeability.0;
        if (k[0][1] - k[1][0]).abs() > 1e-14 * (k[0][0].abs() + k[1][1].abs()) {
            v.push(format!("permeability symmetric (got {k:?})"));
        } else if !(self.permeability.min_eigenvalue() > 0.0) {
            v.push(format!("permeability positive definite (got {k:?})"));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(WgError::Params(v))
        }
    }

    pub fn alpha(&self, region: Region) -> usize {
        match region {
            Region::Stokes => self.alpha_s,
            Region::Darcy => self.alpha_d,
        }
    }

    pub fn gamma(&self, region: Region) -> usize {
        match region {
            Region::Stokes => self.gamma_s,
            Region::Darcy => self.gamma_d,
        }
    }

    /// `h_K` as used by the stabilization terms.
    pub fn stabilization_h(&self, mesh: &crate::mesh::PolyMesh, cell: usize) -> f64 {
        match self.stabilization_length {
            StabilizationLength::LongestEdge => mesh.cells[cell]
                .edges
                .iter()
                .map(|&e| mesh.edges[e].length)
                .fold(0.0, f64::max),
            StabilizationLength::Diameter => mesh.cells[cell].diameter,
        }
    }

    pub fn rho(&self, region: Region) -> f64 {
        match region {
            Region::Stokes => self.rho_s,
            Region::Darcy => self.rho_d,
        }
    }
}

/// Quadrature exactness; `None` selects the defaults
/// `max(2·max(alpha_s, beta) + 2, 8)` on cells and `max(2·beta + 4, 8)` on edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSettings {
    pub cell_exactness: Option<usize>,
    pub edge_exactness: Option<usize>,
}

impl QuadSettings {
    pub fn resolve(&self, params: &WgParams) -> (usize, usize) {
        let a = params.alpha_s.max(params.alpha_d).max(params.beta);
        let cell = self.cell_exactness.unwrap_or((2 * a + 2).max(8));
        let edge = self.edge_exactness.unwrap_or((2 * a + 4).max(8));
        (cell.max(2 * a + 1), edge.max(2 * a + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Free(usize),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// Two components, each in `P_beta(e)`: Stokes and interface edges.
    Vector,
    /// Scalar coefficient of the prescribed edge normal: Darcy edges.
    Normal,
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeBlock {
    pub kind: TraceKind,
    pub start: Slot,
    pub len: usize,
}

/// Position of each block inside a cell's local coefficient vector:
/// `[v0_x | v0_y | edge 0 | edge 1 | ...]` in the cell's edge order.
#[derive(Debug, Clone)]
pub struct LocalLayout {
    pub interior_dim: usize,
    pub edge_offsets: Vec<usize>,
    pub edge_kinds: Vec<TraceKind>,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub cell_start: Vec<usize>,
    pub cell_len: Vec<usize>,
    pub edges: Vec<EdgeBlock>,
    pub pressure_start: Vec<usize>,
    pub pressure_len: Vec<usize>,
    pub n_free: usize,
    pub n_fixed: usize,
    pub n_pressure: usize,
    layouts: Vec<LocalLayout>,
}

impl DofMap {
    pub fn new(mesh: &PolyMesh, params: &WgParams) -> Result<Self> {
        params.validate()?;
        let nb = params.beta + 1;
        let mut cell_start = Vec::with_capacity(mesh.cells.len());
        let mut cell_len = Vec::with_capacity(mesh.cells.len());
        let mut n_free = 0;
        for c in &mesh.cells {
            let len = 2 * cell_dim(params.alpha(c.region));
            cell_start.push(n_free);
            cell_len.push(len);
            n_free += len;
        }
        let mut n_fixed = 0;
        let mut edges = Vec::with_capacity(mesh.edges.len());
        for e in &mesh.edges {
            let kind = if e.class.is_darcy() {
                TraceKind::Normal
            } else {
                TraceKind::Vector
            };
            let len = match kind {
                TraceKind::Vector => 2 * nb,
                TraceKind::Normal => nb,
            };
            let start = if e.class.is_boundary() {
                n_fixed += len;
                Slot::Fixed(n_fixed - len)
            } else {
                n_free += len;
                Slot::Free(n_free - len)
            };
            edges.push(EdgeBlock { kind, start, len });
        }
        let mut pressure_start = Vec::with_capacity(mesh.cells.len());
        let mut pressure_len = Vec::with_capacity(mesh.cells.len());
        let mut n_pressure = 0;
        for c in &mesh.cells {
            let len = cell_dim(params.gamma(c.region));
            pressure_start.push(n_pressure);
            pressure_len.push(len);
            n_pressure += len;
        }
        let layouts = mesh
            .cells
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let interior_dim = cell_len[ci] / 2;
                let mut off = cell_len[ci];
                let mut edge_offsets = Vec::with_capacity(c.edges.len());
                let mut edge_kinds = Vec::with_capacity(c.edges.len());
                for &e in &c.edges {
                    edge_offsets.push(off);
                    edge_kinds.push(edges[e].kind);
                    off += edges[e].len;
                }
                LocalLayout {
                    interior_dim,
                    edge_offsets,
                    edge_kinds,
                    len: off,
                }
            })
            .collect();
        Ok(Self {
            cell_start,
            cell_len,
            edges,
            pressure_start,
            pressure_len,
            n_free,
            n_fixed,
            n_pressure,
            layouts,
        })
    }

    pub fn layout(&self, cell: usize) -> &LocalLayout {
        &self.layouts[cell]
    }

    /// Global slots of a cell's local coefficients, in layout order.
    pub fn local_slots(&self, mesh: &PolyMesh, cell: usize) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.layouts[cell].len);
        let s = self.cell_start[cell];
        out.extend((s..s + self.cell_len[cell]).map(Slot::Free));
        for &e in &mesh.cells[cell].edges {
            let b = self.edges[e];
            out.extend((0..b.len).map(|k| match b.start {
                Slot::Free(i) => Slot::Free(i + k),
                Slot::Fixed(i) => Slot::Fixed(i + k),
            }));
        }
        out
    }

    /// Index in the combined numbering `[free | fixed]`.
    pub fn velocity_index(&self, slot: Slot) -> usize {
        match slot {
            Slot::Free(i) => i,
            Slot::Fixed(i) => self.n_free + i,
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.n_free + self.n_fixed
    }
}

/// A discrete velocity `{v0, vb}` stored as free and fixed coefficient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WgFunction {
    pub free: Vec<f64>,
    pub fixed: Vec<f64>,
}

impl WgFunction {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self {
            free: vec![0.0; dofs.n_free],
            fixed: vec![0.0; dofs.n_fixed],
        }
    }

    pub fn get(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Free(i) => self.free[i],
            Slot::Fixed(i) => self.fixed[i],
        }
    }

    pub fn set(&mut self, slot: Slot, v: f64) {
        match slot {
            Slot::Free(i) => self.free[i] = v,
            Slot::Fixed(i) => self.fixed[i] = v,
        }
    }

    pub fn local(&self, space: &WgSpace, cell: usize) -> Vec<f64> {
        space
            .dofs
            .local_slots(&space.mesh, cell)
            .into_iter()
            .map(|s| self.get(s))
            .collect()
    }

    /// Concatenated `[free | fixed]` vector.
    pub fn combined(&self) -> Vec<f64> {
        let mut v = self.free.clone();
        v.extend_from_slice(&self.fixed);
        v
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            free: self.free.iter().zip(&other.free).map(|(a, b)| a - b).collect(),
            fixed: self.fixed.iter().zip(&other.fixed).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn interior(&self, space: &WgSpace, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let s = space.dofs.cell_start[cell];
        let n = space.dofs.cell_len[cell] / 2;
        (self.free[s..s + n].to_vec(), self.free[s + n..s + 2 * n].to_vec())
    }

    pub fn eval_interior(&self, space: &WgSpace, cell: usize, p: Point) -> Point {
        let (cx, cy) = self.interior(space, cell);
        let phi = space.velocity_basis(cell).eval(p);
        [dot(&cx, &phi), dot(&cy, &phi)]
    }

    /// Trace coefficients of an edge block.
    pub fn edge_coefficients(&self, space: &WgSpace, edge: usize) -> Vec<f64> {
        let b = space.dofs.edges[edge];
        (0..b.len)
            .map(|k| match b.start {
                Slot::Free(i) => self.free[i + k],
                Slot::Fixed(i) => self.fixed[i + k],
            })
            .collect()
    }

    /// Vector trace at a point of the edge; Darcy edges return `v_b n_e`.
    pub fn eval_trace(&self, space: &WgSpace, edge: usize, p: Point) -> Point {
        let c = self.edge_coefficients(space, edge);
        let phi = space.edge_basis(edge).eval(p);
        let nb = phi.len();
        match space.dofs.edges[edge].kind {
            TraceKind::Vector => [dot(&c[..nb], &phi), dot(&c[nb..], &phi)],
            TraceKind::Normal => {
                let s = dot(&c, &phi);
                let n = space.mesh.edges[edge].normal;
                [s * n[0], s * n[1]]
            }
        }
    }

    pub fn set_edge_coefficients(&mut self, space: &WgSpace, edge: usize, coeffs: &[f64]) {
        let b = space.dofs.edges[edge];
        for (k, &v) in coeffs.iter().enumerate().take(b.len) {
            match b.start {
                Slot::Free(i) => self.free[i + k] = v,
                Slot::Fixed(i) => self.fixed[i + k] = v,
            }
        }
    }
}

/// Piecewise polynomial pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFunction {
    pub coeffs: Vec<f64>,
    /// Set once the global zero-mean shift has been applied.
    pub normalized: bool,
}

impl PressureFunction {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self {
            coeffs: vec![0.0; dofs.n_pressure],
            normalized: false,
        }
    }

    pub fn cell(&self, space: &WgSpace, cell: usize) -> &[f64] {
        let s = space.dofs.pressure_start[cell];
        &self.coeffs[s..s + space.dofs.pressure_len[cell]]
    }

    pub fn eval(&self, space: &WgSpace, cell: usize, p: Point) -> f64 {
        dot(self.cell(space, cell), &space.pressure_basis(cell).eval(p))
    }

    pub fn integral(&self, space: &WgSpace) -> f64 {
        dot(&self.coeffs, &space.pressure_moments())
    }

    pub fn l2_norm(&self, space: &WgSpace) -> f64 {
        (0..space.mesh.cells.len())
            .map(|c| space.cell_rules[c].integrate(|p| self.eval(space, c, p).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// Subtract the domain average. The constant is the first basis function
    /// on every cell.
    pub fn normalize(&mut self, space: &WgSpace) {
        let shift = self.integral(space) / space.domain_area();
        for &s in &space.dofs.pressure_start {
            self.coeffs[s] -= shift;
        }
        self.normalized = true;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mesh, parameters, degree-of-freedom layout, quadrature rules and the local
/// inverse mass matrices shared by every later stage.
#[derive(Debug, Clone)]
pub struct WgSpace {
    pub mesh: PolyMesh,
    pub params: WgParams,
    pub dofs: DofMap,
    pub cell_rules: Vec<QuadratureRule>,
    pub edge_rules: Vec<QuadratureRule>,
    pub cell_exactness: usize,
    pub edge_exactness: usize,
    velocity_mass_inv: Vec<Mat<f64>>,
    beta_mass: Vec<Mat<f64>>,
    beta_mass_inv: Vec<Mat<f64>>,
    pressure_mass_inv: Vec<Mat<f64>>,
    edge_mass: Vec<Mat<f64>>,
    edge_mass_inv: Vec<Mat<f64>>,
}

impl WgSpace {
    pub fn new(mesh: PolyMesh, params: WgParams, quad: QuadSettings) -> Result<Self> {
        let dofs = DofMap::new(&mesh, &params)?;
        let (cell_exactness, edge_exactness) = quad.resolve(&params);
        let cell_rules = (0..mesh.cells.len())
            .into_par_iter()
            .map(|c| cell_quadrature(&mesh.cell_points(c), cell_exactness))
            .collect::<Result<Vec<_>>>()?;
        let edge_rules: Vec<_> = (0..mesh.edges.len())
            .into_par_iter()
            .map(|e| {
                let (a, b) = mesh.edge_points(e);
                edge_quadrature(a, b, edge_exactness)
            })
            .collect();

        let mut space = Self {
            mesh,
            params,
            dofs,
            cell_rules,
            edge_rules,
            cell_exactness,
            edge_exactness,
            velocity_mass_inv: Vec::new(),
            beta_mass: Vec::new(),
            beta_mass_inv: Vec::new(),
            pressure_mass_inv: Vec::new(),
            edge_mass: Vec::new(),
            edge_mass_inv: Vec::new(),
        };
        let per_cell = (0..space.mesh.cells.len())
            .into_par_iter()
            .map(|c| {
                let rule = &space.cell_rules[c];
                let vm = mass_matrix(&space.velocity_basis(c), rule)?;
                let bm = mass_matrix(&space.beta_basis(c), rule)?;
                let pm = mass_matrix(&space.pressure_basis(c), rule)?;
                Ok((spd_inverse(&vm)?, spd_inverse(&bm)?, bm, spd_inverse(&pm)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (vi, bi, bm, pi) in per_cell {
            space.velocity_mass_inv.push(vi);
            space.beta_mass_inv.push(bi);
            space.beta_mass.push(bm);
            space.pressure_mass_inv.push(pi);
        }
        let per_edge = (0..space.mesh.edges.len())
            .into_par_iter()
            .map(|e| {
                let m = mass_matrix(&space.edge_basis(e), &space.edge_rules[e])?;
                Ok((spd_inverse(&m)?, m))
            })
            .collect::<Result<Vec<_>>>()?;
        for (inv, m) in per_edge {
            space.edge_mass_inv.push(inv);
            space.edge_mass.push(m);
        }
        Ok(space)
    }

    pub fn region(&self, cell: usize) -> Region {
        self.mesh.cells[cell].region
    }

    fn cell_basis(&self, cell: usize, degree: usize) -> CellBasis {
        let c = &self.mesh.cells[cell];
        CellBasis::new(c.centroid, c.diameter, degree)
    }

    pub fn velocity_basis(&self, cell: usize) -> CellBasis {
        self.cell_basis(cell, self.params.alpha(self.region(cell)))
    }

    pub fn beta_basis(&self, cell: usize) -> CellBasis {
        self.cell_basis(cell, self.params.beta)
    }

    pub fn pressure_basis(&self, cell: usize) -> CellBasis {
        self.cell_basis(cell, self.params.gamma(self.region(cell)))
    }

    pub fn edge_basis(&self, edge: usize) -> EdgeBasis {
        let (a, b) = self.mesh.edge_points(edge);
        EdgeBasis::new(a, b, self.params.beta)
    }

    pub fn beta_mass(&self, cell: usize) -> &Mat<f64> {
        &self.beta_mass[cell]
    }

    pub fn beta_mass_inv(&self, cell: usize) -> &Mat<f64> {
        &self.beta_mass_inv[cell]
    }

    pub fn edge_mass(&self, edge: usize) -> &Mat<f64> {
        &self.edge_mass[edge]
    }

    pub fn edge_mass_inv(&self, edge: usize) -> &Mat<f64> {
        &self.edge_mass_inv[edge]
    }

    pub fn domain_area(&self) -> f64 {
        self.mesh.cells.iter().map(|c| c.area).sum()
    }

    /// `∫_K ψ` for every pressure basis function, in global pressure order.
    pub fn pressure_moments(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dofs.n_pressure];
        for c in 0..self.mesh.cells.len() {
            let b = self.pressure_basis(c);
            let s = self.dofs.pressure_start[c];
            let rule = &self.cell_rules[c];
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                for (k, v) in b.eval(p).into_iter().enumerate() {
                    m[s + k] += w * v;
                }
            }
        }
        m
    }

    /// Region whose field supplies the trace on an edge: interface edges take
    /// the Stokes-side trace.
    pub fn edge_region(&self, edge: usize) -> Region {
        match self.mesh.edges[edge].class {
            EdgeClass::InteriorDarcy | EdgeClass::BoundaryDarcy => Region::Darcy,
            _ => Region::Stokes,
        }
    }

    /// `Q0`: componentwise projection onto `[P_alpha(K)]²`, layout `[x | y]`.
    pub fn project_q0(&self, cell: usize, f: impl Fn(Point) -> Point) -> Vec<f64> {
        let b = self.velocity_basis(cell);
        let rule = &self.cell_rules[cell];
        let inv = &self.velocity_mass_inv[cell];
        let mut out = l2_project(&b, rule, inv, |p| f(p)[0]);
        out.extend(l2_project(&b, rule, inv, |p| f(p)[1]));
        out
    }

    /// `Qb`: componentwise on vector edges, normal component on Darcy edges.
    pub fn project_qb(&self, edge: usize, f: impl Fn(Point) -> Point) -> Vec<f64> {
        let b = self.edge_basis(edge);
        let rule = &self.edge_rules[edge];
        let inv = &self.edge_mass_inv[edge];
        match self.dofs.edges[edge].kind {
            TraceKind::Vector => {
                let mut out = l2_project(&b, rule, inv, |p| f(p)[0]);
                out.extend(l2_project(&b, rule, inv, |p| f(p)[1]));
                out
            }
            TraceKind::Normal => {
                let n = self.mesh.edges[edge].normal;
                l2_project(&b, rule, inv, |p| {
                    let v = f(p);
                    v[0] * n[0] + v[1] * n[1]
                })
            }
        }
    }

    /// `Q_h = {Q0, Qb}` with zero traces on boundary edges.
    pub fn project_qh(&self, f: impl Fn(Region, Point) -> Point + Sync) -> WgFunction {
        let mut v = self.project_qh_full(f);
        v.fixed.iter_mut().for_each(|x| *x = 0.0);
        v
    }

    /// `{Q0, Qb}` including boundary traces, used for boundary data and for
    /// comparing against solutions with nonzero boundary values.
    pub fn project_qh_full(&self, f: impl Fn(Region, Point) -> Point + Sync) -> WgFunction {
        let mut v = WgFunction::zeros(&self.dofs);
        let cells: Vec<Vec<f64>> = (0..self.mesh.cells.len())
            .into_par_iter()
            .map(|c| {
                let r = self.region(c);
                self.project_q0(c, |p| f(r, p))
            })
            .collect();
        for (c, coeffs) in cells.into_iter().enumerate() {
            let s = self.dofs.cell_start[c];
            v.free[s..s + coeffs.len()].copy_from_slice(&coeffs);
        }
        let edges: Vec<Vec<f64>> = (0..self.mesh.edges.len())
            .into_par_iter()
            .map(|e| {
                let r = self.edge_region(e);
                self.project_qb(e, |p| f(r, p))
            })
            .collect();
        for (e, coeffs) in edges.into_iter().enumerate() {
            v.set_edge_coefficients(self, e, &coeffs);
        }
        v
    }

    /// Cellwise projection onto the pressure space (not mean-shifted).
    pub fn project_pressure(&self, q: impl Fn(Region, Point) -> f64 + Sync) -> PressureFunction {
        let cells: Vec<Vec<f64>> = (0..self.mesh.cells.len())
            .into_par_iter()
            .map(|c| {
                let r = self.region(c);
                l2_project(&self.pressure_basis(c), &self.cell_rules[c], &self.pressure_mass_inv[c], |p| q(r, p))
            })
            .collect();
        PressureFunction {
            coeffs: cells.concat(),
            normalized: false,
        }
    }

    /// `Π_h`: projection onto `[P_beta(K)]^{2×2}`, components `[00, 01, 10, 11]`.
    pub fn project_tensor(&self, cell: usize, g: impl Fn(Point) -> Tensor) -> [Vec<f64>; 4] {
        let b = self.beta_basis(cell);
        let rule = &self.cell_rules[cell];
        let inv = &self.beta_mass_inv[cell];
        [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(i, j)| l2_project(&b, rule, inv, |p| g(p)[i][j]))
    }

    /// `π_h`: projection onto `P_beta(K)`.
    pub fn project_scalar(&self, cell: usize, s: impl Fn(Point) -> f64) -> Vec<f64> {
        l2_project(&self.beta_basis(cell), &self.cell_rules[cell], &self.beta_mass_inv[cell], s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, DarcyStokesBox};

    fn space(n: usize, params: WgParams) -> WgSpace {
        let mesh = build_rect_mesh(n, &DarcyStokesBox::default()).unwrap();
        WgSpace::new(mesh, params, QuadSettings::default()).unwrap()
    }

    #[test]
    fn default_params_admissible() {
        assert!(WgParams::default().validate().is_ok());
        // Both unified families.
        for j in 1..4 {
            assert!(WgParams::default().with_degrees(j, j, j, j, j).validate().is_ok());
            assert!(WgParams::default().with_degrees(j, j, j, j - 1, j - 1).validate().is_ok());
        }
    }

    #[test]
    fn inadmissible_parameters_name_the_inequality() {
        let p = WgParams::default().with_degrees(1, 2, 1, 0, 0);
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("beta == alpha_d"), "{err}");

        let p = WgParams::default().with_degrees(3, 1, 1, 0, 0);
        let v = p.violations();
        assert!(v.iter().any(|s| s.starts_with("alpha_s <= beta + 1")));
        assert!(v.iter().any(|s| s.starts_with("alpha_s <= gamma_s + 1")));

        let p = WgParams::default().with_degrees(2, 2, 2, 0, 2);
        assert!(p.violations().iter().any(|s| s.starts_with("beta - 1 <= gamma_s")));

        let mut p = WgParams::default();
        p.permeability = Permeability([[1.0, 2.0], [2.0, 1.0]]);
        p.nu = 0.0;
        let v = p.violations();
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn permeability_powers() {
        let k = Permeability([[2.0, 0.5], [0.5, 1.0]]);
        let h = k.power(-0.5);
        // (K^{-1/2})^2 K = I
        let mut sq = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                sq[i][j] = h[i][0] * h[0][j] + h[i][1] * h[1][j];
            }
        }
        let kk = k.0;
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = sq[i][0] * kk[0][j] + sq[i][1] * kk[1][j];
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert_eq!(Permeability::isotropic(4.0).power(-0.5), [[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn dof_counts_match_formula() {
        let p = WgParams::default();
        for n in [1usize, 2, 4] {
            let s = space(n, p.clone());
            // Enumerate: 6 interior unknowns per cell, 4 per free vector edge,
            // 2 per free Darcy edge.
            let mut free = 6 * 2 * n * n;
            for e in &s.mesh.edges {
                free += match e.class {
                    EdgeClass::InteriorStokes | EdgeClass::Interface => 4,
                    EdgeClass::InteriorDarcy => 2,
                    _ => 0,
                };
            }
            assert_eq!(s.dofs.n_free, free);
            // Closed form: cells 12n², Stokes interior edges 2n(n-1)·4,
            // interface n·4, Darcy interior 2n(n-1)·2.
            assert_eq!(free, 12 * n * n + 8 * n * (n - 1) + 4 * n + 4 * n * (n - 1));
            assert_eq!(s.dofs.n_fixed, 4 * (3 * n) + 2 * (3 * n));
            assert_eq!(s.dofs.n_pressure, 2 * n * n);
        }
    }

    #[test]
    fn q0_reproduces_linear_fields() {
        let s = space(2, WgParams::default());
        let f = |p: Point| [1.0 + 2.0 * p[0] - p[1], 0.5 * p[1] - 3.0];
        for c in 0..s.mesh.cells.len() {
            let coeffs = s.project_q0(c, f);
            let v = WgFunction {
                free: {
                    let mut x = vec![0.0; s.dofs.n_free];
                    let st = s.dofs.cell_start[c];
                    x[st..st + 6].copy_from_slice(&coeffs);
                    x
                },
                fixed: vec![0.0; s.dofs.n_fixed],
            };
            for &p in &s.cell_rules[c].points {
                let e = v.eval_interior(&s, c, p);
                let ex = f(p);
                assert!((e[0] - ex[0]).abs() < 1e-12 && (e[1] - ex[1]).abs() < 1e-12);
            }
        }
        assert!(s.project_q0(0, |_| [0.0, 0.0]).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn q0_matches_least_squares_oracle() {
        // Normal equations assembled directly with raw monomials at the
        // quadrature points, then compared pointwise.
        let s = space(2, WgParams::default());
        let c = 5;
        let rule = &s.cell_rules[c];
        let f = |p: Point| p[0].sin();
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [0.0; 3];
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let phi = [1.0, p[0], p[1]];
            for i in 0..3 {
                atb[i] += w * phi[i] * f(p);
                for j in 0..3 {
                    ata[i][j] += w * phi[i] * phi[j];
                }
            }
        }
        let sol = solve3(ata, atb);
        let coeffs = s.project_q0(c, |p| [f(p), 0.0]);
        let b = s.velocity_basis(c);
        for &p in &rule.points {
            let via = dot(&coeffs[..3], &b.eval(p));
            let oracle = sol[0] + sol[1] * p[0] + sol[2] * p[1];
            assert!((via - oracle).abs() < 1e-12);
        }
        assert!(coeffs[3..].iter().all(|&x| x.abs() < 1e-15));
    }

    fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let mut x = [0.0; 3];
        for k in 0..3 {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            x[k] = det(m) / d;
        }
        x
    }

    #[test]
    fn qb_on_stokes_and_darcy_edges() {
        let s = space(2, WgParams::default());
        for e in 0..s.mesh.edges.len() {
            let c = s.project_qb(e, |_| [2.0, -1.0]);
            match s.dofs.edges[e].kind {
                TraceKind::Vector => assert_eq!(c.len(), 4),
                TraceKind::Normal => assert_eq!(c.len(), 2),
            }
            let mut v = WgFunction::zeros(&s.dofs);
            v.set_edge_coefficients(&s, e, &c);
            let (a, b) = s.mesh.edge_points(e);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let t = v.eval_trace(&s, e, mid);
            match s.dofs.edges[e].kind {
                TraceKind::Vector => assert!((t[0] - 2.0).abs() < 1e-13 && (t[1] + 1.0).abs() < 1e-13),
                TraceKind::Normal => {
                    let n = s.mesh.edges[e].normal;
                    let vn = 2.0 * n[0] - n[1];
                    assert!((t[0] - vn * n[0]).abs() < 1e-13 && (t[1] - vn * n[1]).abs() < 1e-13);
                    // Purely tangential field projects to zero.
                    let tan = [-n[1], n[0]];
                    let z = s.project_qb(e, |_| tan);
                    assert!(z.iter().all(|x| x.abs() < 1e-14));
                }
            }
        }
    }

    #[test]
    fn qb_matches_one_dimensional_oracle_on_interface() {
        let mesh = build_rect_mesh(4, &DarcyStokesBox::default()).unwrap();
        let quad = QuadSettings {
            cell_exactness: None,
            edge_exactness: Some(23),
        };
        let s = WgSpace::new(mesh, WgParams::default(), quad).unwrap();
        let e = s.mesh.edges.iter().position(|e| e.class == EdgeClass::Interface).unwrap();
        let f = |p: Point| [p[0].cos(), (2.0 * p[0]).sin()];
        let c = s.project_qb(e, f);
        // Oracle: Legendre expansion on the edge, P0 and P1 coefficients.
        let (a, b) = s.mesh.edge_points(e);
        let (xs, ws) = crate::polyquad::gauss_legendre(12);
        for comp in 0..2 {
            let (mut m0, mut m1) = (0.0, 0.0);
            for (&x, &w) in xs.iter().zip(&ws) {
                let t = 0.5 * (x + 1.0);
                let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                m0 += 0.5 * w * f(p)[comp];
                m1 += 1.5 * w * f(p)[comp] * x;
            }
            assert!((c[2 * comp] - m0).abs() < 1e-13);
            assert!((c[2 * comp + 1] - m1).abs() < 1e-13);
        }
    }

    #[test]
    fn qh_zeroes_boundary_and_projections_are_idempotent() {
        let s = space(2, WgParams::default());
        let f = |r: Region, p: Point| match r {
            Region::Stokes => [p[0].sin() * p[1], p[1].exp()],
            Region::Darcy => [p[1] * p[1], p[0].cos()],
        };
        let v = s.project_qh(f);
        assert!(v.fixed.iter().all(|&x| x == 0.0));
        let full = s.project_qh_full(f);
        assert!(full.fixed.iter().any(|&x| x != 0.0));

        // Reprojecting the discrete interior and traces is the identity.
        for c in 0..s.mesh.cells.len() {
            let again = s.project_q0(c, |p| full.eval_interior(&s, c, p));
            let (x, y) = full.interior(&s, c);
            for (a, b) in again.iter().zip(x.iter().chain(&y)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for e in 0..s.mesh.edges.len() {
            let again = s.project_qb(e, |p| full.eval_trace(&s, e, p));
            for (a, b) in again.iter().zip(full.edge_coefficients(&s, e)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_and_scalar_projections() {
        let s = space(2, WgParams::default());
        let t = s.project_tensor(3, |_| [[1.0, 2.0], [3.0, 4.0]]);
        for (k, v) in t.iter().enumerate() {
            assert!((v[0] - (k + 1) as f64).abs() < 1e-13);
            assert!(v[1..].iter().all(|x| x.abs() < 1e-13));
        }
        // div (x², xy) = 3x, already in P1.
        let c = 2;
        let coeffs = s.project_scalar(c, |p| 3.0 * p[0]);
        let exact = s.beta_basis(c).coefficients_of_raw(&[(3.0, 1, 0)]);
        for (a, b) in coeffs.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_projection_gives_cell_averages() {
        let s = space(4, WgParams::default());
        let q = |_: Region, p: Point| p[0].sin() * p[1].sin();
        let ph = s.project_pressure(q);
        let c = 21;
        let pts = s.mesh.cell_points(c);
        let (x0, x1) = (pts[0][0], pts[1][0]);
        let (y0, y1) = (pts[0][1], pts[2][1]);
        let avg = (x0.cos() - x1.cos()) * (y0.cos() - y1.cos()) / s.mesh.cells[c].area;
        assert!((ph.cell(&s, c)[0] - avg).abs() < 1e-12);
    }

    #[test]
    fn normalize_removes_mean() {
        let s = space(2, WgParams::default());
        let mut ph = s.project_pressure(|_, p| 3.0 + p[0] * p[1]);
        ph.normalize(&s);
        assert!(ph.normalized);
        assert!(ph.integral(&s).abs() <= 1e-10 * s.domain_area() * ph.l2_norm(&s));
    }
}
