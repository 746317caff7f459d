//! Deterministic numerical core: tensors, layers with hand-written backward
//! passes, Adam, gradient checking and checkpoint I/O.

pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{batchnorm2d, batchnorm2d_backward, BatchNormCache, Mode};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use conv::{conv2d, conv2d_backward, Conv2dSpec};
pub use gradcheck::{grad_check, relative_error, Coordinates, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{
    linear, linear_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax_cross_entropy, Pool2dSpec,
};
pub use params::ParamStore;
pub use tensor::Tensor;
