//! Byzantine-robust federated learning with data commitments.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: datasets, CSV ingestion, synthetic blobs and Non-IID partitioning.
//! - [`model`]: multiclass logistic regression and a one-hidden-layer MLP,
//!   trained locally with Adam.
//! - [`commitment`]: m-nearest-neighbor data commitments, 1-D Wasserstein
//!   distances and Data Credit scoring.
//! - [`aggregation`]: FedAverage, Krum, Multi-Krum and the credit-gated
//!   FedCom rule.
//! - [`attacks`]: label flipping, surrogate-ascent poisoning, Gaussian and
//!   Krum model poisoning.
//! - [`sim`]: configuration, the round loop, and metrics persistence.
//! - [`oracle`]: brute-force reference implementations used for
//!   cross-checking.

pub mod aggregation;
pub mod attacks;
pub mod commitment;
pub mod data;
mod error;
pub mod model;
pub mod oracle;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
