//! Distributionally robust free-energy policy engine.
//!
//! The crate computes soft-max policies that minimize the worst-case
//! variational free energy over a KL ball of environment models around a
//! trained model, together with the tooling needed to exercise it: a
//! navigation benchmark, an ambiguity-unaware baseline, brute-force oracles
//! for the scalar dual, and a convex cost-reconstruction fit.

pub mod ambiguity;
pub mod belief;
pub mod navsim;
pub mod densities;
pub mod error;
pub mod oracle;
pub mod policy;
pub mod provenance;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use error::{DrFreeError, Result};
pub use rng::Rng;
