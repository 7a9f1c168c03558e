//! Desk-scale facies history matching: an object-based channel generator, a
//! from-scratch convolutional VAE, a single-phase tracer-flow forward model,
//! and an ensemble smoother (multiple data assimilation) that updates latent
//! vectors and reconstructs facies through the decoder.

pub mod error;
pub mod geomodel;
pub mod flowsim;
pub mod neuralgen;
pub mod rng;

pub use error::{Error, Result};
