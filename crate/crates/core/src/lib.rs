//! Fixed-mesh 2D multiphase continuum solver.
//!
//! The materials (soil, water) flow through a structured Eulerian grid. A
//! stabilized equal-order flow solver carries the momentum and continuity
//! equations with a history-dependent extra stress; a penalty-regularized
//! level set tracks material interfaces; rigid structures couple to the grid
//! through cutting-point velocity constraints enforced with Lagrange
//! multipliers; and the stress history is advected through the fixed mesh by
//! a convected non-local averaging pass, then updated by a rate- and
//! softening-dependent return map.

pub mod error;
pub mod history;
pub mod levelset;
pub mod linsys;
pub mod mesh;
pub mod ns;
pub mod plasticity;
pub mod rigid;
pub mod scenario;

pub use error::{Result, SimError};
