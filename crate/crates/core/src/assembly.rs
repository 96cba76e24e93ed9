//! Global assembly of the stabilized saddle-point system.
//!
//! Matrices are assembled over the combined velocity numbering
//! `[free | fixed]` (see [`DofMap::velocity_index`]); boundary elimination
//! then splits off the fixed block and moves it to the right-hand side.

use std::io::Write;

use faer::Mat;
use rayon::prelude::*;

use crate::mesh::{EdgeClass, Region};
use crate::polyquad::{cell_dim, Basis};
use crate::sparse::CsrMatrix;
use crate::weakops::CellOperators;
use crate::wgspace::{dot, DofMap, TraceKind, WgSpace};
use crate::{Point, Result, WgError};

/// Which parts of `a_h` to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormParts {
    /// `2ν(D_w u, D_w v)` on Stokes cells and `(K⁻¹u0, v0)` on Darcy cells.
    pub consistency: bool,
    /// The `h_K⁻¹`-scaled stabilizer `s(u, v)`.
    pub stabilization: bool,
    /// Beavers-Joseph-Saffman term on interface edges.
    pub interface: bool,
}

impl FormParts {
    pub const ALL: Self = Self {
        consistency: true,
        stabilization: true,
        interface: true,
    };
    pub const STABILIZATION: Self = Self {
        consistency: false,
        stabilization: true,
        interface: false,
    };
}

fn gram(s: &Mat<f64>, m: &Mat<f64>) -> Mat<f64> {
    s.transpose() * (m * s)
}

fn scatter(rows: &[usize], cols: &[usize], local: &Mat<f64>, out: &mut Vec<(usize, usize, f64)>) {
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let v = local[(i, j)];
            if v != 0.0 {
                out.push((r, c, v));
            }
        }
    }
}

fn global_slots(space: &WgSpace, cell: usize) -> Vec<usize> {
    space
        .dofs
        .local_slots(&space.mesh, cell)
        .into_iter()
        .map(|s| space.dofs.velocity_index(s))
        .collect()
}

/// Local `a_h` contribution of one cell, without the interface term.
pub fn local_a(space: &WgSpace, ops: &CellOperators, cell: usize, parts: FormParts) -> Mat<f64> {
    let mesh = &space.mesh;
    let p = &space.params;
    let layout = space.dofs.layout(cell);
    let n = layout.len;
    let na = layout.interior_dim;
    let h = p.stabilization_h(mesh, cell);
    let phi = space.velocity_basis(cell);
    let mut local = Mat::<f64>::zeros(n, n);

    match space.region(cell) {
        Region::Stokes => {
            if parts.consistency {
                let m = space.beta_mass(cell);
                for k in 0..2 {
                    for l in 0..2 {
                        local += gram(&ops.strain(k, l), m) * (2.0 * p.nu);
                    }
                }
            }
            if parts.stabilization {
                let scale = p.rho_s / h;
                for (le, &e) in mesh.cells[cell].edges.iter().enumerate() {
                    let chi = space.edge_basis(e);
                    let nb = chi.dim();
                    let rule = &space.edge_rules[e];
                    let mut cross = Mat::<f64>::zeros(nb, na);
                    for (&q, &w) in rule.points.iter().zip(&rule.weights) {
                        let c = chi.eval(q);
                        let f = phi.eval(q);
                        for i in 0..nb {
                            for j in 0..na {
                                cross[(i, j)] += w * c[i] * f[j];
                            }
                        }
                    }
                    let proj = space.edge_mass_inv(e) * &cross;
                    let off = layout.edge_offsets[le];
                    debug_assert_eq!(layout.edge_kinds[le], TraceKind::Vector);
                    for k in 0..2 {
                        let mut s = Mat::<f64>::zeros(nb, n);
                        for i in 0..nb {
                            for j in 0..na {
                                s[(i, k * na + j)] = proj[(i, j)];
                            }
                            s[(i, off + k * nb + i)] -= 1.0;
                        }
                        local += gram(&s, space.edge_mass(e)) * scale;
                    }
                }
            }
        }
        Region::Darcy => {
            if parts.consistency {
                let kinv = p.permeability.inverse();
                let rule = &space.cell_rules[cell];
                for (&q, &w) in rule.points.iter().zip(&rule.weights) {
                    let f = phi.eval(q);
                    for k in 0..2 {
                        for l in 0..2 {
                            let c = w * kinv[k][l];
                            for i in 0..na {
                                for j in 0..na {
                                    local[(k * na + i, l * na + j)] += c * f[i] * f[j];
                                }
                            }
                        }
                    }
                }
            }
            if parts.stabilization {
                let scale = p.rho_d / h;
                for (le, &e) in mesh.cells[cell].edges.iter().enumerate() {
                    let nrm = mesh.outward_normal(cell, le);
                    let ne = mesh.edges[e].normal;
                    let chi = space.edge_basis(e);
                    let off = layout.edge_offsets[le];
                    let rule = &space.edge_rules[e];
                    let mut t = vec![0.0; n];
                    for (&q, &w) in rule.points.iter().zip(&rule.weights) {
                        t.iter_mut().for_each(|x| *x = 0.0);
                        let f = phi.eval(q);
                        let c = chi.eval(q);
                        let nb = c.len();
                        for k in 0..2 {
                            for j in 0..na {
                                t[k * na + j] = f[j] * nrm[k];
                            }
                        }
                        match layout.edge_kinds[le] {
                            TraceKind::Vector => {
                                for k in 0..2 {
                                    for j in 0..nb {
                                        t[off + k * nb + j] = -c[j] * nrm[k];
                                    }
                                }
                            }
                            TraceKind::Normal => {
                                let s = ne[0] * nrm[0] + ne[1] * nrm[1];
                                for j in 0..nb {
                                    t[off + j] = -c[j] * s;
                                }
                            }
                        }
                        let ws = w * scale;
                        for i in 0..n {
                            if t[i] == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                local[(i, j)] += ws * t[i] * t[j];
                            }
                        }
                    }
                }
            }
        }
    }
    local
}

/// Scalar interface weight `μ t̂ᵀ K^{-1/2} t̂`, equal to `μ κ^{-1/2}` for `K = κI`.
pub fn interface_weight(space: &WgSpace, edge: usize) -> f64 {
    let t = space.mesh.interface_tangent(edge);
    let r = space.params.permeability.power(-0.5);
    let q = t[0] * (r[0][0] * t[0] + r[0][1] * t[1]) + t[1] * (r[1][0] * t[0] + r[1][1] * t[1]);
    space.params.mu * q
}

/// Local interface matrix over the edge's `2(beta+1)` trace unknowns.
pub fn local_interface(space: &WgSpace, edge: usize) -> Mat<f64> {
    let t = space.mesh.interface_tangent(edge);
    let w = interface_weight(space, edge);
    let m = space.edge_mass(edge);
    let nb = m.nrows();
    Mat::from_fn(2 * nb, 2 * nb, |r, c| {
        let (k, i) = (r / nb, r % nb);
        let (l, j) = (c / nb, c % nb);
        w * t[k] * t[l] * m[(i, j)]
    })
}

fn edge_slots(dofs: &DofMap, edge: usize) -> Vec<usize> {
    let b = dofs.edges[edge];
    (0..b.len).map(|k| dofs.velocity_index(offset(b.start, k))).collect()
}

fn offset(s: crate::wgspace::Slot, k: usize) -> crate::wgspace::Slot {
    use crate::wgspace::Slot;
    match s {
        Slot::Free(i) => Slot::Free(i + k),
        Slot::Fixed(i) => Slot::Fixed(i + k),
    }
}

/// `a_h` (or selected parts of it) over the combined velocity numbering.
pub fn assemble_a(space: &WgSpace, ops: &[CellOperators], parts: FormParts) -> CsrMatrix {
    let nv = space.dofs.n_velocity();
    let per_cell: Vec<Vec<(usize, usize, f64)>> = (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let slots = global_slots(space, c);
            let local = local_a(space, &ops[c], c, parts);
            let mut t = Vec::new();
            scatter(&slots, &slots, &local, &mut t);
            t
        })
        .collect();
    let mut triplets: Vec<_> = per_cell.concat();
    if parts.interface {
        for (e, edge) in space.mesh.edges.iter().enumerate() {
            if edge.class == EdgeClass::Interface {
                let slots = edge_slots(&space.dofs, e);
                scatter(&slots, &slots, &local_interface(space, e), &mut triplets);
            }
        }
    }
    CsrMatrix::from_triplets(nv, nv, triplets)
}

pub fn assemble_a_h(space: &WgSpace, ops: &[CellOperators]) -> CsrMatrix {
    assemble_a(space, ops, FormParts::ALL)
}

/// `b_h(v, q) = -(div_w v, q)`, pressure rows by velocity columns.
pub fn assemble_b_h(space: &WgSpace, ops: &[CellOperators]) -> CsrMatrix {
    let per_cell: Vec<Vec<(usize, usize, f64)>> = (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let slots = global_slots(space, c);
            let ng = space.dofs.pressure_len[c];
            let ps = space.dofs.pressure_start[c];
            let m = space.beta_mass(c);
            let top = Mat::from_fn(ng, m.ncols(), |i, j| -m[(i, j)]);
            let local = &top * &ops[c].divergence;
            let rows: Vec<usize> = (ps..ps + ng).collect();
            let mut t = Vec::new();
            scatter(&rows, &slots, &local, &mut t);
            t
        })
        .collect();
    CsrMatrix::from_triplets(space.dofs.n_pressure, space.dofs.n_velocity(), per_cell.concat())
}

/// `(div_w u, div_w v)` over the combined numbering.
pub fn assemble_div_gram(space: &WgSpace, ops: &[CellOperators]) -> CsrMatrix {
    let per_cell: Vec<Vec<(usize, usize, f64)>> = (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let slots = global_slots(space, c);
            let local = gram(&ops[c].divergence, space.beta_mass(c));
            let mut t = Vec::new();
            scatter(&slots, &slots, &local, &mut t);
            t
        })
        .collect();
    let nv = space.dofs.n_velocity();
    CsrMatrix::from_triplets(nv, nv, per_cell.concat())
}

/// Block-diagonal pressure mass matrix.
pub fn assemble_pressure_mass(space: &WgSpace) -> CsrMatrix {
    let mut t = Vec::new();
    for c in 0..space.mesh.cells.len() {
        let ng = space.dofs.pressure_len[c];
        let ps = space.dofs.pressure_start[c];
        let m = space.beta_mass(c);
        for i in 0..ng {
            for j in 0..ng {
                t.push((ps + i, ps + j, m[(i, j)]));
            }
        }
    }
    let np = space.dofs.n_pressure;
    CsrMatrix::from_triplets(np, np, t)
}

pub type VectorField<'a> = &'a (dyn Fn(Region, Point) -> Point + Sync);
pub type ScalarField<'a> = &'a (dyn Fn(Region, Point) -> f64 + Sync);

/// `(f, v0)` over the combined velocity numbering and `-(g, q)`.
pub fn assemble_rhs(space: &WgSpace, f: VectorField, g: ScalarField) -> (Vec<f64>, Vec<f64>) {
    let mut fv = vec![0.0; space.dofs.n_velocity()];
    let mut gv = vec![0.0; space.dofs.n_pressure];
    let cells: Vec<(Vec<f64>, Vec<f64>)> = (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| {
            let r = space.region(c);
            let phi = space.velocity_basis(c);
            let psi = space.pressure_basis(c);
            let na = phi.dim();
            let mut lf = vec![0.0; 2 * na];
            let mut lg = vec![0.0; psi.dim()];
            let rule = &space.cell_rules[c];
            for (&q, &w) in rule.points.iter().zip(&rule.weights) {
                let fq = f(r, q);
                let gq = g(r, q);
                for (j, v) in phi.eval(q).into_iter().enumerate() {
                    lf[j] += w * fq[0] * v;
                    lf[na + j] += w * fq[1] * v;
                }
                for (j, v) in psi.eval(q).into_iter().enumerate() {
                    lg[j] -= w * gq * v;
                }
            }
            (lf, lg)
        })
        .collect();
    for (c, (lf, lg)) in cells.into_iter().enumerate() {
        let s = space.dofs.cell_start[c];
        fv[s..s + lf.len()].copy_from_slice(&lf);
        let ps = space.dofs.pressure_start[c];
        gv[ps..ps + lg.len()].copy_from_slice(&lg);
    }
    (fv, gv)
}

/// Blocks after eliminating the fixed boundary traces.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    /// `a_h` over `[free | fixed]`.
    pub a: CsrMatrix,
    /// `b_h`, pressure by `[free | fixed]`.
    pub b: CsrMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// `∫_Ω q` for every pressure basis function.
    pub mean: Vec<f64>,
    pub pressure_mass: CsrMatrix,
    pub n_free: usize,
    pub n_fixed: usize,
    pub n_pressure: usize,
    /// Prescribed boundary trace coefficients; zero unless set.
    pub boundary_values: Vec<f64>,
    pub reduced: Option<ReducedSystem>,
}

impl SaddleSystem {
    pub fn assemble(space: &WgSpace, ops: &[CellOperators], f: VectorField, g: ScalarField) -> Self {
        let a = assemble_a_h(space, ops);
        let b = assemble_b_h(space, ops);
        let (fv, gv) = assemble_rhs(space, f, g);
        Self {
            a,
            b,
            f: fv,
            g: gv,
            mean: space.pressure_moments(),
            pressure_mass: assemble_pressure_mass(space),
            n_free: space.dofs.n_free,
            n_fixed: space.dofs.n_fixed,
            n_pressure: space.dofs.n_pressure,
            boundary_values: vec![0.0; space.dofs.n_fixed],
            reduced: None,
        }
    }

    pub fn set_boundary_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_fixed {
            return Err(WgError::Internal(format!(
                "expected {} boundary values, got {}",
                self.n_fixed,
                values.len()
            )));
        }
        self.boundary_values = values;
        self.reduced = None;
        Ok(())
    }

    /// Remove boundary rows and columns, lifting the prescribed boundary
    /// values into the right-hand side. Always rebuilt from the unreduced
    /// blocks, so repeated calls give the same result.
    pub fn apply_boundary_conditions(&mut self) -> &ReducedSystem {
        let nf = self.n_free;
        let nv = nf + self.n_fixed;
        let a = self.a.block(0..nf, 0..nf);
        let afb = self.a.block(0..nf, nf..nv);
        let b = self.b.block(0..self.n_pressure, 0..nf);
        let bfb = self.b.block(0..self.n_pressure, nf..nv);
        let lift_a = afb.matvec(&self.boundary_values);
        let lift_b = bfb.matvec(&self.boundary_values);
        let f = self.f[..nf].iter().zip(&lift_a).map(|(x, y)| x - y).collect();
        let g = self.g.iter().zip(&lift_b).map(|(x, y)| x - y).collect();
        self.reduced = Some(ReducedSystem { a, b, f, g });
        self.reduced.as_ref().unwrap()
    }

    pub fn reduced(&mut self) -> &ReducedSystem {
        if self.reduced.is_none() {
            self.apply_boundary_conditions();
        }
        self.reduced.as_ref().unwrap()
    }

    /// Size of `[A Bᵀ 0; B 0 m; 0 mᵀ 0]`.
    pub fn augmented_dim(&self) -> usize {
        self.n_free + self.n_pressure + 1
    }

    /// The symmetric augmented matrix and right-hand side.
    pub fn augmented(&mut self) -> (CsrMatrix, Vec<f64>) {
        let nf = self.n_free;
        let np = self.n_pressure;
        let mean = self.mean.clone();
        let r = self.reduced();
        let mut t: Vec<(usize, usize, f64)> = r.a.triplets().collect();
        for (i, j, v) in r.b.triplets() {
            t.push((nf + i, j, v));
            t.push((j, nf + i, v));
        }
        for (i, &m) in mean.iter().enumerate() {
            t.push((nf + i, nf + np, m));
            t.push((nf + np, nf + i, m));
        }
        let dim = nf + np + 1;
        let mut rhs = r.f.clone();
        rhs.extend_from_slice(&r.g);
        rhs.push(0.0);
        (CsrMatrix::from_triplets(dim, dim, t), rhs)
    }

    /// Coordinate text export, one `row col value` line per entry, 0-based.
    pub fn export_coo(&mut self, out: &mut impl Write) -> Result<()> {
        let (m, _) = self.augmented();
        writeln!(out, "% {} {} {}", m.nrows, m.ncols, m.nnz())?;
        for (i, j, v) in m.triplets() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

/// `a(u, v)` for combined-numbering coefficient vectors.
pub fn bilinear(m: &CsrMatrix, u: &[f64], v: &[f64]) -> f64 {
    dot(&m.matvec(u), v)
}

/// Dimension of `P_k` in two variables, re-exported for callers sizing blocks.
pub fn poly_dim(k: usize) -> usize {
    cell_dim(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, DarcyStokesBox, PolyMesh};
    use crate::weakops::all_cell_operators;
    use crate::wgspace::{QuadSettings, WgFunction, WgParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(n: usize, params: WgParams) -> WgSpace {
        let mesh = build_rect_mesh(n, &DarcyStokesBox::default()).unwrap();
        WgSpace::new(mesh, params, QuadSettings::default()).unwrap()
    }

    fn random_v(s: &WgSpace, rng: &mut ChaCha8Rng) -> WgFunction {
        let mut v = WgFunction::zeros(&s.dofs);
        v.free.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        v
    }

    #[test]
    fn a_is_symmetric_and_scales_linearly() {
        let mut p = WgParams::default();
        p.permeability = crate::wgspace::Permeability([[2.0, 0.3], [0.3, 1.0]]);
        let s = space(2, p.clone());
        let ops = all_cell_operators(&s);
        let a = assemble_a_h(&s, &ops);
        assert!(a.asymmetry() <= 1e-12 * a.max_abs());

        // mu K^{-1/2} is the interface coefficient, so mu takes sqrt(c).
        let c = 3.5;
        let mut q = p.clone();
        q.nu *= c;
        q.mu *= c.sqrt();
        q.rho_s *= c;
        q.rho_d *= c;
        q.permeability = crate::wgspace::Permeability([[2.0 / c, 0.3 / c], [0.3 / c, 1.0 / c]]);
        let s2 = space(2, q);
        let a2 = assemble_a_h(&s2, &all_cell_operators(&s2));
        for (i, j, v) in a.triplets() {
            assert!((a2.get(i, j) - c * v).abs() <= 1e-10 * a.max_abs() * c, "{i} {j}");
        }
    }

    #[test]
    fn norm_identity_with_divergence_term() {
        let s = space(2, WgParams::default());
        let ops = all_cell_operators(&s);
        let a = assemble_a_h(&s, &ops);
        let d = assemble_div_gram(&s, &ops);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = random_v(&s, &mut rng);
            let x = v.combined();
            // Norm computed term by term from the weak operators.
            let mut norm2 = 0.0;
            for c in 0..s.mesh.cells.len() {
                let m = s.beta_mass(c);
                let dv = crate::weakops::weak_divergence(&s, &ops[c], c, &v);
                norm2 += quad_form(m, &dv);
                if s.region(c) == Region::Stokes {
                    let e = crate::weakops::weak_strain(&s, &ops[c], c, &v).unwrap();
                    norm2 += 2.0 * e.iter().map(|g| quad_form(m, g)).sum::<f64>();
                }
            }
            let stab = assemble_a(&s, &ops, FormParts { consistency: false, stabilization: true, interface: true });
            // With K = I the Darcy part of the norm is ‖v0‖².
            let mut darcy_only = 0.0;
            for c in s.mesh.cells_in(Region::Darcy) {
                let (x0, y0) = v.interior(&s, c);
                let b = s.velocity_basis(c);
                darcy_only += s.cell_rules[c].integrate(|p| {
                    let f = b.eval(p);
                    dot(&x0, &f).powi(2) + dot(&y0, &f).powi(2)
                });
            }
            norm2 += darcy_only + bilinear(&stab, &x, &x);
            let lhs = bilinear(&a, &x, &x) + bilinear(&d, &x, &x);
            assert!((lhs - norm2).abs() <= 1e-10 * norm2, "{lhs} {norm2}");
        }
    }

    fn quad_form(m: &Mat<f64>, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                s += x[i] * m[(i, j)] * x[j];
            }
        }
        s
    }

    #[test]
    fn rigid_motions_only_see_stabilization() {
        // a_h(Q_h r, Q_h r) reduces to the stabilizer, and Q_b reproduces
        // linear traces exactly.
        let mesh = PolyMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![(Region::Stokes, vec![0, 1, 2, 3])],
            None,
        )
        .unwrap();
        for alpha in [1, 2] {
            let p = WgParams::default().with_degrees(alpha, 1, 1, 1, 0);
            let s = WgSpace::new(mesh.clone(), p, QuadSettings::default()).unwrap();
            let ops = all_cell_operators(&s);
            let a = assemble_a(&s, &ops, FormParts { consistency: true, stabilization: false, interface: false });
            let r = s.project_qh_full(|_, p| [1.0 - 0.5 * p[1], 2.0 + 0.5 * p[0]]);
            let x = r.combined();
            assert!(bilinear(&a, &x, &x).abs() < 1e-13);
            let st = assemble_a(&s, &ops, FormParts::STABILIZATION);
            assert!(bilinear(&st, &x, &x).abs() < 1e-13);
            // A quadratic interior is only representable for alpha_s = beta + 1,
            // where Q_b v0 - vb no longer vanishes for a free trace choice.
            let mut q = s.project_qh_full(|_, p| [p[0] * p[0], 0.0]);
            let e0 = s.mesh.cells[0].edges[0];
            let zero = vec![0.0; s.dofs.edges[e0].len];
            q.set_edge_coefficients(&s, e0, &zero);
            let y = q.combined();
            assert!(bilinear(&st, &y, &y) > 1e-6);
        }
    }

    #[test]
    fn single_cell_beta_zero_matches_hand_expansion() {
        // Unit square, alpha_s = 1, beta = 0: G_kl is a constant equal to
        // ∫_∂K vb_k n_l minus 0 (∂ψ = 0), so D_w is a constant per cell.
        let mesh = PolyMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![(Region::Stokes, vec![0, 1, 2, 3])],
            None,
        )
        .unwrap();
        let p = WgParams::default().with_degrees(1, 0, 0, 0, 0);
        let s = WgSpace::new(mesh, p, QuadSettings::default()).unwrap();
        let ops = all_cell_operators(&s);
        let a = assemble_a_h(&s, &ops).to_dense();
        assert_eq!(a.nrows(), 6 + 8);
        // Hand expansion: unknowns [u0x(1,ξ,η) u0y(...)] then per edge (bx, by).
        // Edges in cell order: bottom (n=(0,-1)), right (1,0), top (0,1), left (-1,0).
        let normals = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let diam = 2f64.sqrt();
        let h_k = 1.0;
        let mut hand = vec![vec![0.0; 14]; 14];
        // Weak gradient rows: G_kl = Σ_e b_{e,k} n_{e,l} (|e| = 1, |K| = 1).
        let mut g = vec![vec![0.0; 14]; 4];
        for (e, n) in normals.iter().enumerate() {
            for k in 0..2 {
                for l in 0..2 {
                    g[2 * k + l][6 + 2 * e + k] += n[l];
                }
            }
        }
        let sym = |k: usize, l: usize| -> Vec<f64> { (0..14).map(|i| 0.5 * (g[2 * k + l][i] + g[2 * l + k][i])).collect() };
        for k in 0..2 {
            for l in 0..2 {
                let d = sym(k, l);
                for i in 0..14 {
                    for j in 0..14 {
                        hand[i][j] += 2.0 * d[i] * d[j];
                    }
                }
            }
        }
        // Stabilizer: Q_b of u0 on each edge is its edge mean; the scaled
        // monomials about (0.5,0.5) with scale √2 have edge means:
        let ev = |e: usize| -> [f64; 3] {
            match e {
                0 => [1.0, 0.0, -0.5 / diam],
                1 => [1.0, 0.5 / diam, 0.0],
                2 => [1.0, 0.0, 0.5 / diam],
                _ => [1.0, -0.5 / diam, 0.0],
            }
        };
        for e in 0..4 {
            for k in 0..2 {
                let mut row = vec![0.0; 14];
                for (j, v) in ev(e).iter().enumerate() {
                    row[3 * k + j] = *v;
                }
                row[6 + 2 * e + k] = -1.0;
                for i in 0..14 {
                    for j in 0..14 {
                        hand[i][j] += row[i] * row[j] / h_k;
                    }
                }
            }
        }
        // Fixed boundary traces sit after interiors in the combined
        // numbering; edge order in the fixed block follows the edge list.
        let cell_edges = &s.mesh.cells[0].edges;
        let mut perm = vec![0usize; 14];
        for i in 0..6 {
            perm[i] = i;
        }
        for (le, &e) in cell_edges.iter().enumerate() {
            let start = match s.dofs.edges[e].start {
                crate::wgspace::Slot::Fixed(i) => 6 + i,
                crate::wgspace::Slot::Free(i) => i,
            };
            perm[6 + 2 * le] = start;
            perm[6 + 2 * le + 1] = start + 1;
        }
        for i in 0..14 {
            for j in 0..14 {
                assert!((a[(perm[i], perm[j])] - hand[i][j]).abs() < 1e-12, "({i},{j}) {} vs {}", a[(perm[i], perm[j])], hand[i][j]);
            }
        }
    }

    #[test]
    fn b_annihilates_divergence_free_fields() {
        let s = space(4, WgParams::default());
        let ops = all_cell_operators(&s);
        let b = assemble_b_h(&s, &ops);
        let v = s.project_qh_full(|_, p| [p[0].sin() * p[1].cos(), -p[0].cos() * p[1].sin()]);
        let r = b.matvec(&v.combined());
        assert!(r.iter().all(|x| x.abs() < 1e-12), "{:?}", r.iter().fold(0f64, |m, x| m.max(x.abs())));
    }

    #[test]
    fn b_single_edge_flux() {
        // Only one Stokes interior edge trace set: b_h(v, 1_K) = -∫_e v_b·n.
        let s = space(2, WgParams::default());
        let ops = all_cell_operators(&s);
        let b = assemble_b_h(&s, &ops);
        let e = s.mesh.edges.iter().position(|e| e.class == EdgeClass::InteriorStokes).unwrap();
        let mut v = WgFunction::zeros(&s.dofs);
        v.set_edge_coefficients(&s, e, &[2.0, 0.0, -1.0, 0.0]);
        let edge = &s.mesh.edges[e];
        let flux = (2.0 * edge.normal[0] - edge.normal[1]) * edge.length;
        let r = b.matvec(&v.combined());
        let left = edge.left;
        assert!((r[s.dofs.pressure_start[left]] + flux).abs() < 1e-12);
        let right = edge.right.unwrap();
        assert!((r[s.dofs.pressure_start[right]] - flux).abs() < 1e-12);
    }

    #[test]
    fn rhs_zero_and_constant_moments() {
        let s = space(1, WgParams::default());
        let (f, g) = assemble_rhs(&s, &|_, _| [0.0, 0.0], &|_, _| 0.0);
        assert!(f.iter().chain(&g).all(|&x| x == 0.0));
        let (f, _) = assemble_rhs(&s, &|_, _| [1.0, 0.0], &|_, _| 0.0);
        for c in 0..2 {
            let st = s.dofs.cell_start[c];
            // Moments of (1, (x-xc)/h, (y-yc)/h) over a rectangle about its centroid.
            assert!((f[st] - s.mesh.cells[c].area).abs() < 1e-12);
            assert!(f[st + 1].abs() < 1e-12 && f[st + 2].abs() < 1e-12);
            assert!(f[st + 3..st + 6].iter().all(|x| x.abs() < 1e-15));
        }
        assert!(f[s.dofs.cell_len.iter().sum::<usize>()..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn elimination_is_idempotent_and_sized() {
        let s = space(2, WgParams::default());
        let ops = all_cell_operators(&s);
        let mut sys = SaddleSystem::assemble(&s, &ops, &|_, p| [p[0], 1.0], &|_, _| 0.0);
        sys.set_boundary_values((0..s.dofs.n_fixed).map(|i| i as f64 * 0.1).collect()).unwrap();
        let first = sys.apply_boundary_conditions().clone();
        let second = sys.apply_boundary_conditions().clone();
        assert_eq!(first.a, second.a);
        assert_eq!(first.f, second.f);
        assert_eq!(first.a.nrows, s.dofs.n_free);
        assert!(first.a.asymmetry() <= 1e-12 * first.a.max_abs());
        let (m, rhs) = sys.augmented();
        assert_eq!(m.nrows, s.dofs.n_free + s.dofs.n_pressure + 1);
        assert_eq!(rhs.len(), m.nrows);
        assert!(m.asymmetry() <= 1e-12 * m.max_abs());
        let mut buf = Vec::new();
        sys.export_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), m.nnz() + 1);
    }

    #[test]
    fn assembly_is_deterministic_across_thread_counts() {
        let s = space(4, WgParams::default());
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a1 = one.install(|| assemble_a_h(&s, &all_cell_operators(&s)));
        let a4 = four.install(|| assemble_a_h(&s, &all_cell_operators(&s)));
        assert_eq!(a1, a4);
    }
}
