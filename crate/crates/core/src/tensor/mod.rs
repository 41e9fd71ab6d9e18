//! Dense tensors with a small reverse-mode autodiff tape.
//!
//! Everything the fusion models and the autoencoder compute goes through
//! [`Graph`]. Shapes are rank 1 or 2; matrix products run on
//! `matrixmultiply`.

mod array;
mod check;
mod graph;
mod layers;
mod params;
mod real;

pub use array::Tensor;
pub use check::{finite_diff_check, finite_diff_check_extended, FdReport, Objective};
pub use graph::{attention, gelu, Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use params::{ParamId, ParamSet};
pub use real::Real;
