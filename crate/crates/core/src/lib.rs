//! Training-free neural architecture scoring.
//!
//! Untrained candidate networks are run forward on a small minibatch. The
//! flattened activation outputs and the classifier inputs are compared across
//! images with RBF kernels, and the network score is the log-determinant of the
//! Kronecker product of the two Gram matrices. Kernel bandwidths are detected
//! automatically from a handful of probe networks.

pub mod data;
pub mod error;
pub mod harness;
pub mod hda;
pub mod linalg;
pub mod nn;
pub mod score;
pub mod seed;
pub mod space;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
