//! Unsupervised invariant representation learning toolkit.
//!
//! Data observed across several environments shares one generative mechanism
//! but shifts in distribution from environment to environment. This crate
//! provides two ways to recover the stable part of such data without labels,
//! plus the machinery to evaluate them:
//!
//! - [`pica`] — a linear method that projects data onto directions whose
//!   second moment is identical across environments (plus a probabilistic
//!   variant that recovers the planted mixing matrices of a linear-Gaussian
//!   model from population covariances).
//! - [`viae`] — a variational autoencoder whose latent space is factorized
//!   into an environment-invariant block and a per-environment block, with
//!   one encoder per training environment, an environment-blind decoder,
//!   and orthogonal per-environment latent priors.
//! - [`scm`] — the linear-Gaussian multi-environment simulator used to
//!   sanity-check both, with closed-form population statistics.
//! - [`datasets`] — MNIST IDX ingestion, the SMNIST / SCMNIST environment
//!   dataset builders, a small binary tensor container, and PGM/PPM export.
//! - [`transfer`] — moving samples between environments through the
//!   factorized latent space, scored by deterministic pixel-rule oracles.
//! - [`probes`] — the four linear probes that measure how cleanly latent
//!   information separates into invariant and environmental parts.
//! - [`nn`] — the minimal dense-network substrate (forward, hand-coded
//!   backprop with a finite-difference contract, Adam).
//!
//! Everything is 64-bit, single-threaded, and deterministic per seed.

pub mod datasets;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod pica;
pub mod probes;
pub mod rng;
pub mod scm;
pub mod transfer;
pub mod viae;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scm::LabeledBatch;
