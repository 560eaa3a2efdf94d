//! Quantized-feedback codebook design for a secure cellular downlink sharing
//! spectrum with a D2D pair.

pub mod backend;
pub mod cdi;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod metrics;
pub mod montecarlo;
pub mod noisy;
pub mod pso;
pub mod quad;
pub mod registry;
pub mod runner;

pub use error::{Error, Result};
