use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("code space too small: 2^{n_bits} < vocab size {vocab_size}")]
    CodeSpaceTooSmall { n_bits: usize, vocab_size: usize },
    #[error("code width {0} exceeds the 4096-bit limit")]
    CodeTooWide(usize),
    #[error("non-finite span weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("span weights sum to zero")]
    ZeroTotalWeight,
    #[error("token index {token} out of range (vocab size {vocab_size})")]
    TokenOutOfRange { token: usize, vocab_size: usize },
    #[error("codeword width mismatch: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },
    #[error("empty span [{lo}, {hi})")]
    EmptySpan { lo: String, hi: String },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("zero-norm embedding row for token {0}")]
    ZeroNormRow(usize),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("empty token stream")]
    EmptyStream,
    #[error("token stream too short: {len} tokens, need at least {need}")]
    StreamTooShort { len: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("NaN gradient in parameter {0}")]
    NanGradient(String),
    #[error("NaN loss at epoch {0}")]
    NanLoss(usize),
    #[error("non-deterministic loss closure: {0} vs {1}")]
    NonDeterministicClosure(f64, f64),
    #[error("sampling strategy {strategy} incompatible with {head} head")]
    StrategyHeadMismatch { strategy: String, head: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint/codebook mismatch: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
