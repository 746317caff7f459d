//! Authentic-speaker recognition from converted voices with hierarchical
//! NetVLAD aggregation.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the pipeline and the tests.

pub mod data;
pub mod dsp;
pub mod error;
pub mod kv;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod traineval;
pub mod vlad;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Spectrogram32 = dsp::Spectrogram<f32>;
pub type Waveform32 = dsp::Waveform<f32>;
