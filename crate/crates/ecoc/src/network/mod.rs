//! Recurrent language model: autodiff graph, parameters, LSTM stack with
//! interchangeable output heads, losses, gradient checking, and evaluation.

pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod params;

pub use eval::{evaluate, sequence_perplexity, EvalOptions, EvalReport};
pub use gradcheck::finite_difference_check;
pub use graph::{Graph, NodeId};
pub use loss::{cross_entropy_loss, ecoc_codeword_loss, hierarchical_loss};
pub use model::{HeadKind, HsTree, LaneState, Model, ModelConfig};
pub use params::{Optimizer, Param, ParamId, ParamStore};
