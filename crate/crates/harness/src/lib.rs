//! Experiment orchestration: dataset generation, training, imputation
//! benchmarks and latent exports, shared by the `kvae` binary and tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod patterns;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use patterns::DropPattern;
