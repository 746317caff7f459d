//! The four encoder variants assembled from `nn` and `vlad` primitives.

pub mod config;
pub mod encoder;

pub use config::{EncoderConfig, Variant, HIERARCHICAL_TAPS};
pub use encoder::{
    aggregate_dim, build_encoder, hvlad_combine, trunk_output_dims, ForwardOutput, ModelParams, Tape,
};
