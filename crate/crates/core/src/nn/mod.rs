//! Minimal dense numerical kernel: matrices, layers, batch normalization,
//! Adam and finite-difference gradient checking.

pub mod adam;
pub mod batchnorm;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod params;

pub use adam::Adam;
pub use batchnorm::{BatchNorm, BatchNormCache, Mode};
pub use gradcheck::{grad_check, Differentiable, GradCheck, GradCheckReport};
pub use layers::{
    l2_normalize, l2_normalize_backward, relu, relu_backward, sigmoid, softmax, softmax_backward,
    DenseLayer, Init,
};
pub use matrix::Matrix;
pub use params::{ParamBlock, ParamBlockMut, ParamSet};
