//! Stage-1 image classifiers for the five wound variables.

mod backbone;
mod io;
mod model;
mod predict;
mod schema;
mod train;

pub use backbone::{Backbone, BackboneConfig, BackboneMode, BlockSpec, ConvBlock};
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION};
pub use model::{Head, MultiTaskModel, Normalization};
pub use predict::{argmax, head_distributions, Stage1Models, VariablePrediction, WoundVariablePrediction};
pub use schema::{HeadKind, LabelSchema, Task, WoundLabels, BINARY_CLASSES};
pub use train::{evaluate_loss, train, EpochLoss, LabeledSample, LossWeights, TrainConfig, TrainedModel};
