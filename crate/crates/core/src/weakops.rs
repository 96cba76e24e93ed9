//! Discrete weak partial derivatives and the weak gradient, divergence and
//! strain built from them.
//!
//! For `v = {v0, vb}` on a cell `K`, the weak partial `G_kl ∈ P_beta(K)` is
//! defined by
//!
//! ```text
//! (G_kl, ψ)_K = -(v0_k, ∂_l ψ)_K + <vb_k n_l, ψ>_∂K   for all ψ ∈ P_beta(K),
//! ```
//!
//! with `n` the outward normal of `K`. On Darcy edges `vb = s n_e`. Each
//! partial is stored as a linear map from the cell's local coefficient
//! vector (see [`LocalLayout`](crate::wgspace::LocalLayout)) to the
//! coefficients of `G_kl` in the cell's `P_beta` basis.

use faer::Mat;
use rayon::prelude::*;

use crate::mesh::Region;
use crate::polyquad::{cell_dim, Basis};
use crate::wgspace::{TraceKind, WgFunction, WgSpace};
use crate::{Result, WgError};

#[derive(Debug, Clone)]
pub struct CellOperators {
    /// `G_00, G_01, G_10, G_11`, each `dim P_beta × local length`.
    pub partials: [Mat<f64>; 4],
    /// `G_00 + G_11`.
    pub divergence: Mat<f64>,
}

impl CellOperators {
    pub fn partial(&self, k: usize, l: usize) -> &Mat<f64> {
        &self.partials[2 * k + l]
    }

    /// `(G_kl + G_lk) / 2`.
    pub fn strain(&self, k: usize, l: usize) -> Mat<f64> {
        let a = self.partial(k, l);
        let b = self.partial(l, k);
        Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + b[(i, j)]))
    }
}

pub fn cell_operators(space: &WgSpace, cell: usize) -> CellOperators {
    let mesh = &space.mesh;
    let layout = space.dofs.layout(cell);
    let psi = space.beta_basis(cell);
    let phi = space.velocity_basis(cell);
    let nbeta = cell_dim(space.params.beta);
    let na = layout.interior_dim;
    let mut r: [Mat<f64>; 4] = std::array::from_fn(|_| Mat::zeros(nbeta, layout.len));

    let rule = &space.cell_rules[cell];
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        let gp = psi.grad(p);
        let fv = phi.eval(p);
        for k in 0..2 {
            for l in 0..2 {
                let m = &mut r[2 * k + l];
                for i in 0..nbeta {
                    let dl = w * gp[i][l];
                    for j in 0..na {
                        m[(i, k * na + j)] -= dl * fv[j];
                    }
                }
            }
        }
    }

    for (local, &e) in mesh.cells[cell].edges.iter().enumerate() {
        let n = mesh.outward_normal(cell, local);
        let ne = mesh.edges[e].normal;
        let chi = space.edge_basis(e);
        let off = layout.edge_offsets[local];
        let rule = &space.edge_rules[e];
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let ps = psi.eval(p);
            let cs = chi.eval(p);
            let nb = cs.len();
            for k in 0..2 {
                for l in 0..2 {
                    let m = &mut r[2 * k + l];
                    for i in 0..nbeta {
                        let base = w * n[l] * ps[i];
                        match layout.edge_kinds[local] {
                            TraceKind::Vector => {
                                for j in 0..nb {
                                    m[(i, off + k * nb + j)] += base * cs[j];
                                }
                            }
                            TraceKind::Normal => {
                                for j in 0..nb {
                                    m[(i, off + j)] += base * ne[k] * cs[j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let inv = space.beta_mass_inv(cell);
    let partials = r.map(|m| inv * &m);
    let divergence = &partials[0] + &partials[3];
    CellOperators {
        partials,
        divergence,
    }
}

pub fn all_cell_operators(space: &WgSpace) -> Vec<CellOperators> {
    (0..space.mesh.cells.len())
        .into_par_iter()
        .map(|c| cell_operators(space, c))
        .collect()
}

fn apply(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

/// Weak gradient coefficients `[G_00, G_01, G_10, G_11]`; Stokes cells only.
pub fn weak_gradient(space: &WgSpace, ops: &CellOperators, cell: usize, v: &WgFunction) -> Result<[Vec<f64>; 4]> {
    if space.region(cell) == Region::Darcy {
        return Err(WgError::DarcyGradient(cell));
    }
    let x = v.local(space, cell);
    Ok(std::array::from_fn(|i| apply(&ops.partials[i], &x)))
}

pub fn weak_divergence(space: &WgSpace, ops: &CellOperators, cell: usize, v: &WgFunction) -> Vec<f64> {
    apply(&ops.divergence, &v.local(space, cell))
}

/// Symmetric part of the weak gradient; Stokes cells only.
pub fn weak_strain(space: &WgSpace, ops: &CellOperators, cell: usize, v: &WgFunction) -> Result<[Vec<f64>; 4]> {
    let g = weak_gradient(space, ops, cell, v)?;
    let off: Vec<f64> = g[1].iter().zip(&g[2]).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok([g[0].clone(), off.clone(), off, g[3].clone()])
}
