//! A from-scratch CNN training engine built around a dual-input architecture:
//! an image and its gradient form (`dx + dy` per pixel) flow through one
//! weight-shared convolutional trunk, and the two flattened feature vectors
//! are summed before the dense classifier.
//!
//! Module map:
//!
//! - [`tensor`]: dense row-major tensors and primitive ops.
//! - [`layers`]: conv, relu, maxpool, dropout, batchnorm, flatten, dense and
//!   softmax cross-entropy, each with a hand-written backward pass.
//! - [`gradinput`]: the parameter-free image-gradient transform.
//! - [`models`]: baseline and dual-path networks, parameter counting, checkpoints.
//! - [`data`]: MNIST / CIFAR binary loaders, a synthetic toy set, seeded batching.
//! - [`train`]: SGD with momentum, training and evaluation loops, the two-arm
//!   experiment runner and the finite-difference gradient-check suite.

pub mod data;
pub mod error;
pub mod gradinput;
pub mod layers;
mod linalg;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::Mode;
pub use models::{DatasetKind, Network, Topology};
pub use tensor::{Scalar, Shape, Tensor};
