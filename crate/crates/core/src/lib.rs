//! Hyperbolic combinatorial SMC for Bayesian phylogenetics.
//!
//! Sequences are embedded in the Poincaré disk, then particle systems build
//! trees bottom-up by merging pairs of roots and proposing each parent's
//! embedding from a wrapped normal centred on the geodesic between the
//! children. Branch lengths are hyperbolic distances. The log marginal
//! likelihood estimate is differentiable in the leaf embeddings, proposal
//! covariance and substitution-model parameters.

pub mod real;
pub mod geometry;
pub mod error;
pub mod wrapped_normal;

#[cfg(test)]
mod testutil;

pub use error::Error;
pub mod alignment;
pub mod evo;
pub mod embed;
pub mod smc;
pub mod grad;
pub mod train;
