//! Diagnostic classification models for small samples.
//!
//! The crate covers five models (DINA, DINO, RRUM, CRUM, LCDM), three
//! estimators (EM marginal maximum likelihood, Metropolis-within-Gibbs MCMC
//! and nonparametric Hamming classification), a data generator and a
//! factorial Monte Carlo study harness.

pub mod datagen;
pub mod em;
mod layout;
pub mod optim;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod io;
pub mod matrix;
pub mod mcmc;
pub mod metrics;
pub mod models;
pub mod np;
pub mod profile;
pub mod qmatrix;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::BinaryMatrix;
pub use models::{ItemParams, ModelKind, SlipGuess};
pub use profile::{enumerate_profiles, AttributeProfile, ProfileSpace};
pub use qmatrix::{validate_q, QMatrix, ValidityReport};
