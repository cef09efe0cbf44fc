//! Simulation and training toolkit for diffractive optical networks whose
//! layers are phase-only masks with quantized phase levels.
//!
//! The crate covers the full loop: scalar quantizers with smooth surrogates
//! ([`quantizers`]), scalar free-space propagation between layers ([`optics`]),
//! the multi-layer network with a hand-written adjoint backward pass
//! ([`network`]), task losses and image metrics ([`objectives`]), dataset
//! loading and batching ([`data`]), the two-stage full-precision +
//! quantization-aware training pipeline ([`training`]), and binary
//! serialization for fields and checkpoints ([`formats`]).

pub mod data;
pub mod error;
pub mod formats;
pub mod network;
pub mod objectives;
pub mod optics;
pub mod quantizers;
pub mod training;

pub use error::{Error, Result};
