//! Weak Galerkin discretization of the coupled Darcy-Stokes problem.
//!
//! The Stokes side is discretized with fully vector-valued interior and
//! edge-trace unknowns, the Darcy side with vector interior unknowns and
//! scalar normal traces. Interface edges carry a single shared vector trace,
//! so normal-velocity continuity across the interface holds structurally,
//! and the Beavers-Joseph-Saffman slip law enters through an edge term.
//!
//! Pipeline: [`mesh`] → [`wgspace`] → [`weakops`] → [`assembly`] →
//! [`solver`], with [`mms`] supplying the manufactured test problem, error
//! norms and convergence tables.

pub mod assembly;
pub mod error;
pub mod mesh;
pub mod mms;
pub mod polyquad;
pub mod solver;
pub mod sparse;
pub mod weakops;
pub mod wgspace;

pub use error::{Result, WgError};

/// 2D point or vector.
pub type Point = [f64; 2];
