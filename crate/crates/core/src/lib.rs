//! Sparse-from-scratch training of spiking neural networks.
//!
//! Networks of leaky integrate-and-fire layers start from an Erdős–Rényi
//! sparse topology and stay sparse throughout training. Periodically, each
//! layer (or each neuron's fan-in) is scored with the PQ index, a norm-ratio
//! compressibility measure, which sets how many connections to prune by
//! magnitude; pruned capacity is then partly or fully regrown where the
//! optimizer momentum is largest.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layer;
pub mod neuron;
pub mod rewire;
pub mod rng;
pub mod sparsity;
pub mod tensor;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
pub use layer::SparseLayer;
pub use rng::Rng;
pub use tensor::Tensor;
