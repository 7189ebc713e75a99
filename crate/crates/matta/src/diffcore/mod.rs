//! Numerical substrate: dense f64 tensors, a reverse-mode tape, and a
//! deterministic splittable RNG.

mod graph;
mod rng;
mod tensor;

pub use graph::{Activation, Gradients, Graph, NodeId};
pub use rng::Rng;
pub use tensor::Tensor;
