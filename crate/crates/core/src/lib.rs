//! Kernel-smoothing estimation of integrals from Markov-chain designs.
//!
//! Given locations `X_1, ..., X_n` visited by a Markov chain whose stationary
//! law is unknown, together with observations `phi(X_i)`, the integral of
//! `phi` over a bounded domain is estimated by weighting each observation
//! with the inverse of a kernel density estimate taken at its location:
//!
//! ```text
//! I_ks = n^-1 * sum_i phi(X_i) / pi_hat(X_i)
//! ```
//!
//! Isolated points get large weights, crowded points small ones. The crate
//! also carries the design generators, split-chain regeneration diagnostics,
//! a replication harness for simulation studies and a small pipeline for
//! averaging scattered ocean observations over latitude bands.
//!
//! The O(n^2) kernel sums run on rayon when the `parallel` feature is on
//! (the default); with it off, or after [`parallel::set_sequential`], every
//! loop runs on the calling thread. Results are identical either way.

pub mod bandwidth;
pub mod chains;
pub mod density;
mod error;
pub mod geo;
pub mod integrate;
pub mod kernels;
mod neighbors;
pub mod parallel;
pub mod quadrature;
pub mod regen;
pub mod study;

pub use bandwidth::{Bandwidth, Provenance};
pub use chains::{ChainConfig, ChainKind, ChainRun};
pub use density::{Design, DensityField};
pub use error::{Error, Result};
pub use integrate::{Domain, EstimateReport, EstimatorOptions, LabeledSample, Method};
pub use kernels::{KernelFamily, KernelForm, KernelSpec};
