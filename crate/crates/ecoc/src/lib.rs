//! Sequence prediction with error-correcting output codes.
//!
//! Instead of a softmax over the vocabulary, the decoder predicts `n` bits
//! and each token owns a contiguous interval of the `2^n` code space: the
//! interval start is the token's class codeword, the rest of the interval is
//! its error checks. The crate bundles everything needed to run the idea end
//! to end: codebook construction and interval scoring, a small reverse-mode
//! tensor core with a 2-layer LSTM and three decoder heads, exposure-bias
//! mitigation strategies (curriculum mixing, Gumbel-Softmax and Binary
//! Concrete relaxations), and a CLI for training and evaluation.

pub mod cli;
pub mod codebook;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod network;
pub mod sampling;
pub mod scalar;

pub use error::{Error, Result};

/// Default scalar precision for the toolkit.
pub type Float = f64;
