//! Hand-differentiated layers, activations and losses.
//!
//! Every layer has a pure functional form (used by the gradient checks) and a
//! stateful wrapper that caches what its backward pass needs.

mod activation;
pub mod gradcheck;
mod conv;
mod dense;
mod init;
mod loss;
mod pool;

pub use activation::{relu, sigmoid, softmax, Relu};
pub use conv::{conv2d, conv2d_backward, conv_output_dim, Conv2d, ConvGrads};
pub use dense::{dense, dense_backward, Dense, DenseGrads};
pub use init::he_uniform;
pub use loss::{
    binary_cross_entropy, binary_cross_entropy_with_logits, cross_entropy, softmax_cross_entropy,
};
pub use pool::{global_avg_pool, global_avg_pool_backward, GlobalAvgPool, MaxPool2d};
