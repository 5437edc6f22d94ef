//! Link-level simulator and trainer for SVD-embedded deep-autoencoder MIMO
//! communication over 2x2 Rayleigh flat-fading channels.
//!
//! The crate covers the full experiment pipeline: closed-form 2x2 complex
//! SVD and the frozen precoding/pre-processing layers built from it, a
//! from-scratch dense-network engine with Adam and finite-difference
//! verification, the per-channel stochastic training schedule, Monte Carlo
//! BER/SER evaluation, and a classical SVD + adaptive-QAM baseline for
//! comparison curves.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod dae;
pub mod error;
pub mod evaluator;
pub mod linalg;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
