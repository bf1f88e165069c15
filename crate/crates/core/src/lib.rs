//! Video scene graph generation at desk scale: hierarchical intra-frame
//! aggregation, windowed cyclic temporal attention, gated relation scoring,
//! focal-loss training and Recall@K evaluation, all on a small reverse-mode
//! `f64` tensor core.

pub mod checkpoint;
pub mod dataio;
pub mod features;
pub mod synth;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod hier;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod param;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
