//! Two-stage wound assessment: convolutional classifiers for five wound
//! variables, fused with clinician variables in a gradient-boosted heal/no-heal
//! classifier.

pub mod augment;
mod error;
pub mod explain;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type MultiTaskModel32 = vision::MultiTaskModel<f32>;
pub type MultiTaskModel64 = vision::MultiTaskModel<f64>;
pub type Stage1Models32 = vision::Stage1Models<f32>;
pub type Stage1Models64 = vision::Stage1Models<f64>;
