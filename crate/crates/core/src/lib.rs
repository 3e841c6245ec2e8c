//! Geometric-algebraic multigrid on tri-section spacetrees.

pub mod adaptivity;
pub mod compression;
pub mod discretization;
pub mod lattice;
pub mod operators;
pub mod scalar;
pub mod solvers;
pub mod spacetree;

pub use scalar::Real;

/// Double precision vertex payload.
pub type Record64 = solvers::VertexRecord<f64>;
/// Single precision vertex payload.
pub type Record32 = solvers::VertexRecord<f32>;
/// Double precision solver tree.
pub type Tree64 = spacetree::Spacetree<Record64>;
/// Single precision solver tree.
pub type Tree32 = spacetree::Spacetree<Record32>;
