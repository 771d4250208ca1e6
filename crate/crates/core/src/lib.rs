//! Variational autoencoders for implied-volatility surfaces.
//!
//! The crate trains VAEs on FX volatility surfaces sampled on a fixed
//! maturity × delta lattice, completes partially observed surfaces by
//! calibrating latent codes, generates synthetic surfaces screened for static
//! arbitrage, and provides a Heston baseline for comparison.

pub mod arbitrage;
pub mod calibration;
pub mod datagen;
pub mod error;
pub mod heston;
pub mod interp;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod surfaces;
pub mod vae;

pub use error::{Result, VolError};
