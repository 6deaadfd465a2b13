//! Numerics for linear dynamics on sequence spaces.
//!
//! Vectors are finite-support real sequences indexed by ℤ ([`spaces::SeqVec`]), measured by
//! graded seminorm families (ℓ^p, c₀, s(ℤ), Köthe echelon spaces, ω(ℤ)). On top of that sit
//! bilateral weighted shifts, generalized-hyperbolic certificates, shadowing-point synthesis,
//! conjugacy series and the radial homeomorphisms used for topological stability.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod conjugacy;
pub mod error;
pub mod hyperbolicity;
pub mod operators;
pub mod shadowing;
pub mod spaces;

pub use error::{Error, Result};
