//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! the trainable entries of the [`ParamStore`] the graph was built against.
//! One graph serves one forward pass; build a fresh graph per sample.
//!
//! Parameters are borrowed, not copied, so graphs over the same frozen store
//! can be built concurrently on different threads.

mod gradcheck;
mod graph;
mod lstm;
mod params;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use lstm::LstmWeights;
pub use params::{Gradients, ParamId, ParamStore};

pub type Mat = ndarray::Array2<f64>;
