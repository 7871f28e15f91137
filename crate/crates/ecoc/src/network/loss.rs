//! Scalar loss definitions shared by training and evaluation.

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::network::model::HsTree;
use crate::scalar::Scalar;

/// Codeword BCE against the max-likelihood witness inside the target's span.
/// Numerically this is exactly `-span_max_logprob` of the span.
pub fn ecoc_codeword_loss<S: Scalar>(
    bit_probs: &[S],
    target_token: usize,
    codebook: &Codebook,
) -> Result<S> {
    let score = codebook.token_span_max(bit_probs, target_token)?;
    Ok(-score.log_score)
}

/// `-ln probs[target]` over an (approximately) normalized distribution.
pub fn cross_entropy_loss<S: Scalar>(probs: &[S], target: usize) -> Result<S> {
    if target >= probs.len() {
        return Err(Error::TokenOutOfRange {
            token: target,
            vocab_size: probs.len(),
        });
    }
    let total: S = probs.iter().cloned().sum();
    if (total - S::one()).abs() > S::from_f64_lossy(1e-6) {
        return Err(Error::InvalidProbability(total.to_f64_lossy()));
    }
    Ok(-probs[target].max(S::from_f64_lossy(crate::codebook::EPS_P)).ln())
}

/// Two-factor path loss of the 2-level hierarchical softmax:
/// `-(ln p(class) + ln p(leaf | class))`.
pub fn hierarchical_loss<S: Scalar>(
    tree: &HsTree,
    root_probs: &[S],
    child_probs: &[S],
    target: usize,
) -> Result<S> {
    let (class, leaf) = tree.class_of(target);
    if class >= root_probs.len() || leaf >= child_probs.len() {
        return Err(Error::TokenOutOfRange {
            token: target,
            vocab_size: root_probs.len() * child_probs.len(),
        });
    }
    let eps = S::from_f64_lossy(crate::codebook::EPS_P);
    Ok(-(root_probs[class].max(eps).ln() + child_probs[leaf].max(eps).ln()))
}
