//! Perplexity and code-level metrics over a token stream.

use crate::codebook::{token_distribution, Codebook, Codeword, ScoreMode};
use crate::corpus::batchify;
use crate::error::{Error, Result};
use crate::network::graph::Graph;
use crate::network::model::{HeadKind, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub bptt: usize,
    /// Also compute the (much more expensive) max-mode ECOC perplexity,
    /// which needs the full normalized token distribution per position.
    pub max_mode: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch_size: 1,
            bptt: 35,
            max_mode: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Softmax/hierarchical: exact model perplexity. ECOC: sum-mode
    /// (marginal-mass) perplexity.
    pub perplexity: f64,
    /// Max-mode ECOC perplexity, when requested.
    pub perplexity_max: Option<f64>,
    /// Fraction of positions whose thresholded bit prediction decodes to the
    /// target token (ECOC heads only).
    pub hamming_accuracy: Option<f64>,
    /// Mean Hamming distance from the thresholded prediction to the target
    /// span (ECOC heads only).
    pub mean_hamming: Option<f64>,
    pub n_tokens: usize,
}

/// Run the model over `stream` (no dropout) and aggregate per-token negative
/// log likelihoods into perplexity.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    codebook: Option<&Codebook>,
    stream: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let is_ecoc = matches!(model.cfg.head, HeadKind::Ecoc { .. });
    let codebook = match (is_ecoc, codebook) {
        (true, None) => return Err(Error::Config("ECOC evaluation needs a codebook".into())),
        (true, Some(cb)) => Some(cb),
        (false, _) => None,
    };
    let batches = batchify(stream, opts.batch_size, opts.bptt)?;
    let mut states = vec![model.zero_state(); opts.batch_size];

    let mut nll = 0.0f64;
    let mut nll_max = 0.0f64;
    let mut hits = 0usize;
    let mut hamming_total = 0usize;
    let mut count = 0usize;

    for batch in &batches {
        for lane in 0..batch.batch_size() {
            let mut g = Graph::new();
            let mut nodes = model.state_nodes(&mut g, &states[lane]);
            for t in 0..batch.len() {
                let x = model.embed(&mut g, batch.inputs[lane][t]);
                let (next, out) = model.step(&mut g, x, &nodes, None)?;
                nodes = next;
                let target = batch.targets[lane][t];
                match model.cfg.head {
                    HeadKind::Ecoc { .. } => {
                        let cb = codebook.unwrap();
                        let z = model.head_logits(&mut g, out)?;
                        let probs_node = g.sigmoid(z);
                        let probs = g.value(probs_node).to_vec();
                        nll -= cb.token_span_mass(&probs, target)?.to_f64_lossy();
                        if opts.max_mode {
                            let dist = token_distribution(&probs, cb, ScoreMode::Max)?;
                            nll_max -= dist[target].to_f64_lossy();
                        }
                        let bits: Vec<bool> =
                            probs.iter().map(|p| p.to_f64_lossy() > 0.5).collect();
                        let predicted = Codeword::from_bits(&bits)?;
                        if cb.decode(&predicted)? == target {
                            hits += 1;
                        }
                        let (lo, hi) = cb.span(target)?;
                        hamming_total +=
                            crate::codebook::span_min_hamming(&predicted, lo, hi, cb.mapping())?;
                    }
                    HeadKind::FullSoftmax => {
                        let z = model.head_logits(&mut g, out)?;
                        let loss = g.ce_with_logits(z, target)?;
                        nll += g.scalar(loss).to_f64_lossy();
                    }
                    HeadKind::Hierarchical => {
                        let tree = *model.tree().unwrap();
                        let (class, leaf) = tree.class_of(target);
                        let rz = model.root_logits(&mut g, out)?;
                        let rl = g.ce_with_logits(rz, class)?;
                        let cz = model.child_logits(&mut g, out, class)?;
                        let cl = g.ce_with_logits(cz, leaf)?;
                        nll += g.scalar(rl).to_f64_lossy() + g.scalar(cl).to_f64_lossy();
                    }
                }
                count += 1;
            }
            states[lane] = model.read_state(&g, &nodes);
        }
    }

    let report = EvalReport {
        perplexity: (nll / count as f64).exp(),
        perplexity_max: if is_ecoc && opts.max_mode {
            Some((nll_max / count as f64).exp())
        } else {
            None
        },
        hamming_accuracy: if is_ecoc {
            Some(hits as f64 / count as f64)
        } else {
            None
        },
        mean_hamming: if is_ecoc {
            Some(hamming_total as f64 / count as f64)
        } else {
            None
        },
        n_tokens: count,
    };
    Ok(report)
}

/// Perplexity of a corpus slice; ECOC heads score in the requested mode.
pub fn sequence_perplexity<S: Scalar>(
    model: &Model<S>,
    codebook: Option<&Codebook>,
    stream: &[usize],
    mode: ScoreMode,
    opts: &EvalOptions,
) -> Result<f64> {
    let opts = EvalOptions {
        max_mode: mode == ScoreMode::Max,
        ..*opts
    };
    let report = evaluate(model, codebook, stream, &opts)?;
    Ok(match mode {
        ScoreMode::Max => report.perplexity_max.unwrap_or(report.perplexity),
        ScoreMode::Sum => report.perplexity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, MappingMode, OrderingSpec};
    use crate::network::model::ModelConfig;

    fn zeroed(head: HeadKind, vocab: usize) -> Model<f64> {
        let mut m = Model::new(
            ModelConfig {
                vocab_size: vocab,
                dim: 4,
                layers: 2,
                dropout: 0.0,
                head,
            },
            3,
        );
        for p in m.store.iter_mut() {
            for v in p.value.iter_mut() {
                *v = 0.0;
            }
        }
        m
    }

    #[test]
    fn untrained_softmax_perplexity_is_vocab_size() {
        let m = zeroed(HeadKind::FullSoftmax, 10);
        let stream: Vec<usize> = (0..64).map(|i| i % 10).collect();
        let r = evaluate(&m, None, &stream, &EvalOptions::default()).unwrap();
        assert!((r.perplexity - 10.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_bits_give_span_fraction_perplexity() {
        let m = zeroed(HeadKind::Ecoc { n_bits: 5 }, 10);
        let cb = build_codebook(
            10,
            5,
            &OrderingSpec::Identity,
            &(1..=10).map(|i| i as f64).collect::<Vec<_>>(),
            MappingMode::Binary,
        )
        .unwrap();
        let stream: Vec<usize> = (0..64).map(|i| i % 10).collect();
        let r = evaluate(&m, Some(&cb), &stream, &EvalOptions::default()).unwrap();
        // Zero weights -> all bit probs 0.5 -> p(token) = width / 32.
        let mut expect = 0.0f64;
        let mut n = 0usize;
        let batches = batchify(&stream, 1, 35).unwrap();
        for b in &batches {
            for &t in &b.targets[0] {
                let w = cb.span_width(t).unwrap();
                let w: f64 = format!("{w}").parse().unwrap();
                expect += -(w / 32.0).ln();
                n += 1;
            }
        }
        let expect = (expect / n as f64).exp();
        assert!((r.perplexity - expect).abs() < 1e-9);
        assert!(r.perplexity >= 1.0);
        assert!(r.hamming_accuracy.is_some());
    }

    #[test]
    fn ecoc_needs_a_codebook() {
        let m = zeroed(HeadKind::Ecoc { n_bits: 5 }, 10);
        let stream: Vec<usize> = (0..16).collect::<Vec<_>>().iter().map(|&i| i % 10).collect();
        assert!(matches!(
            evaluate(&m, None, &stream, &EvalOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_slice_is_an_error() {
        let m = zeroed(HeadKind::FullSoftmax, 10);
        assert!(matches!(
            evaluate(&m, None, &[], &EvalOptions::default()),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn evaluation_is_repeatable() {
        let m = Model::<f64>::new(
            ModelConfig {
                vocab_size: 12,
                dim: 6,
                layers: 2,
                dropout: 0.0,
                head: HeadKind::Hierarchical,
            },
            7,
        );
        let stream: Vec<usize> = (0..80).map(|i| (i * 5) % 12).collect();
        let a = evaluate(&m, None, &stream, &EvalOptions::default()).unwrap();
        let b = evaluate(&m, None, &stream, &EvalOptions::default()).unwrap();
        assert_eq!(a.perplexity, b.perplexity);
        assert!(a.perplexity >= 1.0);
    }
}
