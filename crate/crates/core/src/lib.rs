//! Core numerics for cross-species text-to-motion generation.
//!
//! Everything here is pure computation over in-memory values: the unified
//! 25-joint skeleton, the 76-wide frame features, a procedural multi-species
//! dataset, the trainable models (bone-length graph VAE, convolutional motion
//! autoencoder, recurrent morphology critic, masked flow-matching generator),
//! and the evaluation metrics. File formats, configuration and the command
//! line live in the `xspecies` crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cgae;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod features;
pub mod generator;
pub mod geom;
pub mod gradcheck;
pub mod linalg;
pub mod math;
pub mod mcm;
pub mod metrics;
pub mod motion_ae;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod skeleton;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
