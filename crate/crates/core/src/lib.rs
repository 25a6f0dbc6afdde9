//! Multi-user mmWave hybrid precoding.
//!
//! The crate covers the whole pipeline: geometric channel synthesis on
//! uniform planar arrays, quantized steering-vector codebooks, the
//! exhaustive zero-forcing sum-rate search, training-set generation, a
//! small convolutional regression network that predicts analog phases from
//! a noisy channel, and Monte Carlo sweeps comparing all of them.

pub mod beamformer;
mod binio;
pub mod codebook;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
