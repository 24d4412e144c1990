//! Hierarchical partition trees for directed graphs and the node and link
//! predictors built on top of them.

pub mod baseline;
pub mod config;
pub mod distill;
pub mod entropy;
pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod mi;
pub mod nn;
pub mod pipeline;
pub mod predict;
pub mod propagation;
pub mod rng;
pub mod synthetic;
pub mod tree;

pub use error::{EdenError, Result};
