//! Exposure-bias mitigation: curriculum mixture schedules, scheduled
//! sampling, latent codeword mixing, and the differentiable relaxations
//! (Binary Concrete, Gumbel-Softmax) with temperature annealing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::{Codebook, Codeword};
use crate::error::{Error, Result};
use crate::network::graph::{Graph, NodeId};
use crate::network::model::{HeadKind, Model};
use crate::scalar::Scalar;

/// Floor of the annealed relaxation temperature.
pub const TAU_MIN: f64 = 0.01;
/// Ceiling of the annealed relaxation temperature.
pub const TAU_MAX: f64 = 2.5;
/// Candidate count for relaxed-codeword-to-embedding conversion.
pub const DEFAULT_CANDIDATES: usize = 5;

const U_CLAMP: f64 = 1e-12;

/// How the per-bit mixing probability varies across codeword positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerBitProfile {
    /// Every bit mixes with the same probability.
    Uniform,
    /// Leftmost (most significant) bits mix at half the scheduled rate,
    /// ramping linearly up to the full rate at the least significant bit.
    SignificanceRamp,
}

/// Sigmoidal curriculum over epochs: starts near zero and saturates at
/// `tau_max` by the final epoch.
#[derive(Debug, Clone, Copy)]
pub struct MixtureSchedule {
    pub tau_max: f64,
    pub delta: f64,
    pub total_epochs: usize,
    pub per_bit_profile: PerBitProfile,
}

impl MixtureSchedule {
    pub fn new(
        tau_max: f64,
        delta: f64,
        total_epochs: usize,
        per_bit_profile: PerBitProfile,
    ) -> Result<Self> {
        if !(tau_max > 0.0 && tau_max <= 1.0) {
            return Err(Error::Config(format!(
                "mixture tau_max must lie in (0, 1], got {tau_max}"
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::Config(format!(
                "mixture delta must be positive, got {delta}"
            )));
        }
        Ok(MixtureSchedule {
            tau_max,
            delta,
            total_epochs,
            per_bit_profile,
        })
    }

    /// A schedule that never mixes: plain teacher forcing.
    pub fn off(total_epochs: usize) -> Self {
        MixtureSchedule {
            tau_max: 1.0,
            delta: 1.0,
            total_epochs,
            per_bit_profile: PerBitProfile::Uniform,
        }
    }

    pub fn value(&self, epoch: usize) -> f64 {
        schedule_value(self, epoch)
    }

    /// Per-bit mixing probabilities at `epoch` for an `n_bits`-wide code.
    pub fn per_bit(&self, epoch: usize, n_bits: usize) -> Vec<f64> {
        let p = self.value(epoch);
        match self.per_bit_profile {
            PerBitProfile::Uniform => vec![p; n_bits],
            PerBitProfile::SignificanceRamp => (0..n_bits)
                .map(|i| {
                    let t = if n_bits > 1 {
                        i as f64 / (n_bits - 1) as f64
                    } else {
                        1.0
                    };
                    p * (0.5 + 0.5 * t)
                })
                .collect(),
        }
    }
}

/// Input mixing strategy used while training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    TeacherForcing,
    ScheduledSampling,
    /// Curriculum latent-variable mixture sampling: per-bit Bernoulli mix of
    /// the decoded prediction's bits with the target codeword's bits.
    Clvms,
    /// Mix target bits with predicted bit probabilities, then feed a soft
    /// convex combination of candidate token embeddings.
    SoftMixture { k: usize, tau: f64 },
    /// Differentiable per-bit relaxation (requires an ECOC head).
    BinaryConcrete,
    /// Differentiable path relaxation (requires a hierarchical head).
    GumbelSoftmax,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::TeacherForcing => "teacher_forcing",
            Strategy::ScheduledSampling => "scheduled_sampling",
            Strategy::Clvms => "clvms",
            Strategy::SoftMixture { .. } => "soft_mixture",
            Strategy::BinaryConcrete => "binary_concrete",
            Strategy::GumbelSoftmax => "gumbel_softmax",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Strategy::SoftMixture { k, tau } = self.strategy {
            if k < 1 {
                return Err(Error::Config("soft_mixture needs k >= 1".into()));
            }
            if !(TAU_MIN..=TAU_MAX).contains(&tau) {
                return Err(Error::Config(format!(
                    "soft_mixture temperature must lie in [{TAU_MIN}, {TAU_MAX}], got {tau}"
                )));
            }
        }
        Ok(())
    }
}

/// p(epoch) = tau_max / (1 + exp(-(epoch - N/2)/delta)).
pub fn schedule_value(schedule: &MixtureSchedule, epoch: usize) -> f64 {
    let n = schedule.total_epochs as f64;
    let e = (epoch as f64).min(n);
    if schedule.total_epochs == 0 {
        return schedule.tau_max / 2.0;
    }
    schedule.tau_max / (1.0 + (-(e - n / 2.0) / schedule.delta).exp())
}

/// Sigmoidal temperature rise from TAU_MIN toward TAU_MAX over training.
pub fn anneal_temperature(epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return (TAU_MIN + TAU_MAX) / 2.0;
    }
    let n = total as f64;
    let e = (epoch as f64).min(n);
    let s = 1.0 / (1.0 + (-(e - n / 2.0) / (n / 20.0)).exp());
    TAU_MIN + (TAU_MAX - TAU_MIN) * s
}

/// A deterministic RNG stream keyed by purpose, lane, and step, so that
/// reordering unrelated draws cannot perturb a given stream.
pub fn rng_for(seed: u64, purpose: &str, lane: u64, step: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&lane.to_le_bytes());
    key[24..32].copy_from_slice(&step.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn clamped_uniform(rng: &mut impl Rng) -> f64 {
    rng.gen::<f64>().clamp(U_CLAMP, 1.0 - U_CLAMP)
}

/// G = -ln(-ln U).
pub fn sample_gumbel(rng: &mut impl Rng) -> f64 {
    -(-clamped_uniform(rng).ln()).ln()
}

/// L = ln U - ln(1 - U).
pub fn sample_logistic(rng: &mut impl Rng) -> f64 {
    let u = clamped_uniform(rng);
    u.ln() - (1.0 - u).ln()
}

/// Per-bit Bernoulli mix: bit c comes from `predicted` with probability
/// `p_vec[c]`, otherwise from `target`.
pub fn mix_codeword_bits(
    predicted: &Codeword,
    target: &Codeword,
    p_vec: &[f64],
    rng: &mut impl Rng,
) -> Result<Codeword> {
    if predicted.n_bits() != target.n_bits() {
        return Err(Error::WidthMismatch {
            left: predicted.n_bits(),
            right: target.n_bits(),
        });
    }
    if p_vec.len() != predicted.n_bits() {
        return Err(Error::WidthMismatch {
            left: p_vec.len(),
            right: predicted.n_bits(),
        });
    }
    for &p in p_vec {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
    }
    let bits: Vec<bool> = (0..predicted.n_bits())
        .map(|c| {
            if rng.gen::<f64>() < p_vec[c] {
                predicted.bit(c)
            } else {
                target.bit(c)
            }
        })
        .collect();
    Codeword::from_bits(&bits)
}

/// Threshold bit probabilities at 0.5 into a codeword.
pub fn threshold_bits<S: Scalar>(bit_probs: &[S]) -> Result<Codeword> {
    let bits: Vec<bool> = bit_probs.iter().map(|p| p.to_f64_lossy() > 0.5).collect();
    Codeword::from_bits(&bits)
}

/// Indices of the `k` least confident bits (|p - 0.5| smallest), most
/// ambiguous first, ties broken by position.
fn least_confident_bits<S: Scalar>(bit_probs: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bit_probs.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (bit_probs[a].to_f64_lossy() - 0.5).abs();
        let db = (bit_probs[b].to_f64_lossy() - 0.5).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

fn flip_bit(base: &Codeword, i: usize) -> Codeword {
    let mut bits = base.bits();
    bits[i] = !bits[i];
    Codeword::from_bits(&bits).expect("width preserved")
}

/// Factorial (independent-Bernoulli) log-score of `codeword` under per-bit
/// probabilities, with probabilities clamped away from {0, 1}.
pub fn factorial_log_score<S: Scalar>(bit_probs: &[S], codeword: &Codeword) -> f64 {
    let mut s = 0.0;
    for (i, p) in bit_probs.iter().enumerate() {
        let p = p.to_f64_lossy().clamp(U_CLAMP, 1.0 - U_CLAMP);
        s += if codeword.bit(i) { p.ln() } else { (1.0 - p).ln() };
    }
    s
}

/// Soft argmax over codeword candidates: flip each of the `k` least confident
/// bits of the thresholded prediction, decode each candidate, and return the
/// temperature-softmax-weighted average of the decoded tokens' embeddings.
///
/// `embeddings` is a row-major vocab_size x dim table.
pub fn soft_codeword_embedding<S: Scalar>(
    bit_probs: &[S],
    codebook: &Codebook,
    embeddings: &[S],
    dim: usize,
    k: usize,
    tau: f64,
) -> Result<Vec<S>> {
    if bit_probs.len() != codebook.n_bits() {
        return Err(Error::WidthMismatch {
            left: bit_probs.len(),
            right: codebook.n_bits(),
        });
    }
    if k < 1 || k > codebook.n_bits() {
        return Err(Error::Config(format!(
            "candidate count k={k} must lie in [1, n_bits={}]",
            codebook.n_bits()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let base = threshold_bits(bit_probs)?;
    let candidates: Vec<Codeword> = least_confident_bits(bit_probs, k)
        .into_iter()
        .map(|i| flip_bit(&base, i))
        .collect();
    let tokens: Vec<usize> = candidates
        .iter()
        .map(|c| codebook.decode(c))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| factorial_log_score(bit_probs, c) / tau)
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut out = vec![S::zero(); dim];
    for (t, e) in tokens.iter().zip(&exps) {
        let w = S::from_f64_lossy(e / z);
        let row = &embeddings[t * dim..(t + 1) * dim];
        for (o, &r) in out.iter_mut().zip(row) {
            *o = *o + w * r;
        }
    }
    Ok(out)
}

/// softmax((log alpha + G)/tau) with fixed Gumbel noise.
pub fn gumbel_softmax_relaxed<S: Scalar>(logits: &[S], noise: &[f64], tau: f64) -> Vec<S> {
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l.to_f64_lossy() + g) / tau)
        .collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| S::from_f64_lossy(e / z)).collect()
}

/// Draw Gumbel noise and return the relaxed categorical sample.
pub fn gumbel_softmax_sample<S: Scalar>(logits: &[S], tau: f64, rng: &mut impl Rng) -> Vec<S> {
    let noise: Vec<f64> = (0..logits.len()).map(|_| sample_gumbel(rng)).collect();
    gumbel_softmax_relaxed(logits, &noise, tau)
}

/// Z = sigmoid((log alpha + L)/tau) with fixed logistic noise.
pub fn binary_concrete_relaxed(log_alpha: f64, noise: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (-(log_alpha + noise) / tau).exp())
}

/// Draw logistic noise and return the relaxed Bernoulli sample.
pub fn binary_concrete_sample(log_alpha: f64, tau: f64, rng: &mut impl Rng) -> f64 {
    binary_concrete_relaxed(log_alpha, sample_logistic(rng), tau)
}

fn require_ecoc<'a>(
    strategy: &Strategy,
    head: &HeadKind,
    codebook: Option<&'a Codebook>,
) -> Result<&'a Codebook> {
    if !matches!(head, HeadKind::Ecoc { .. }) {
        return Err(Error::StrategyHeadMismatch {
            strategy: strategy.name().to_string(),
            head: head.name().to_string(),
        });
    }
    codebook.ok_or_else(|| Error::Config("latent mixing needs a codebook".into()))
}

/// Greedy next-token choice from the model outputs at the previous step:
/// thresholded-bit decoding for ECOC heads, argmax for softmax heads, and
/// argmax root then leaf for hierarchical heads.
pub fn argmax_token<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    codebook: Option<&Codebook>,
    prev_out: NodeId,
) -> Result<usize> {
    match model.cfg.head {
        HeadKind::Ecoc { .. } => {
            let cb = codebook
                .ok_or_else(|| Error::Config("argmax decoding needs a codebook".into()))?;
            let z = model.head_logits(g, prev_out)?;
            let bits: Vec<bool> = g.value(z).iter().map(|v| v.to_f64_lossy() > 0.0).collect();
            cb.decode(&Codeword::from_bits(&bits)?)
        }
        HeadKind::FullSoftmax => {
            let z = model.head_logits(g, prev_out)?;
            Ok(argmax(g.value(z)))
        }
        HeadKind::Hierarchical => {
            let tree = *model.tree().expect("hierarchical model has a tree");
            let rz = model.root_logits(g, prev_out)?;
            let class = argmax(g.value(rz));
            let cz = model.child_logits(g, prev_out, class)?;
            let leaf = argmax(g.value(cz));
            let (lo, hi) = tree.class_range(class);
            Ok((lo + leaf).min(hi - 1))
        }
    }
}

fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Weighted embedding of `tokens`, with weights = softmax of `score_nodes`.
/// Gradient flows through the scores and into the embedding rows.
fn weighted_embedding<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    tokens: &[usize],
    score_nodes: Vec<NodeId>,
) -> Result<NodeId> {
    let stacked = g.stack_scalars(score_nodes)?;
    let weights = g.softmax_row(stacked);
    let rows: Vec<NodeId> = tokens.iter().map(|&t| model.embed(g, t)).collect();
    let table = g.concat_rows(rows)?;
    g.matmul(weights, table)
}

/// Produce the input embedding node for step t from the model's outputs at
/// step t-1 and the gold token, according to the configured strategy.
///
/// `prev_out` is the top-layer LSTM output at t-1; `None` (sequence start)
/// always falls back to the gold embedding. A schedule value of exactly zero
/// short-circuits to teacher forcing without consuming randomness, so a
/// disabled schedule reproduces teacher-forcing runs bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn next_input<S: Scalar>(
    cfg: &SamplerConfig,
    schedule: &MixtureSchedule,
    epoch: usize,
    g: &mut Graph<S>,
    model: &Model<S>,
    codebook: Option<&Codebook>,
    prev_out: Option<NodeId>,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    cfg.validate()?;
    let p = schedule.value(epoch);
    let prev_out = match (cfg.strategy, prev_out, p) {
        (Strategy::TeacherForcing, _, _) | (_, None, _) => return Ok(model.embed(g, target)),
        (_, Some(_), p) if p == 0.0 => return Ok(model.embed(g, target)),
        (_, Some(out), _) => out,
    };

    match cfg.strategy {
        Strategy::TeacherForcing => unreachable!("handled above"),
        Strategy::ScheduledSampling => {
            let token = if rng.gen::<f64>() < p {
                argmax_token(g, model, codebook, prev_out)?
            } else {
                target
            };
            Ok(model.embed(g, token))
        }
        Strategy::Clvms => {
            let cb = require_ecoc(&cfg.strategy, &model.cfg.head, codebook)?;
            let z = model.head_logits(g, prev_out)?;
            let bits: Vec<bool> = g.value(z).iter().map(|v| v.to_f64_lossy() > 0.0).collect();
            let predicted = Codeword::from_bits(&bits)?;
            let gold = cb.encode(target)?;
            let p_vec = schedule.per_bit(epoch, cb.n_bits());
            let mixed = mix_codeword_bits(&predicted, &gold, &p_vec, rng)?;
            let token = cb.decode(&mixed)?;
            Ok(model.embed(g, token))
        }
        Strategy::SoftMixture { k, tau } => {
            let cb = require_ecoc(&cfg.strategy, &model.cfg.head, codebook)?;
            let z = model.head_logits(g, prev_out)?;
            let qn = g.sigmoid(z);
            let q = g.value(qn).to_vec();
            let gold = cb.encode(target)?;
            let p_vec = schedule.per_bit(epoch, cb.n_bits());
            let mixed: Vec<S> = (0..cb.n_bits())
                .map(|c| {
                    if rng.gen::<f64>() < p_vec[c] {
                        q[c]
                    } else if gold.bit(c) {
                        S::one()
                    } else {
                        S::zero()
                    }
                })
                .collect();
            let emb = model.store.get(model.embedding_param());
            let v = soft_codeword_embedding(&mixed, cb, &emb.value, emb.cols, k, tau)?;
            Ok(g.constant(1, v.len(), v))
        }
        Strategy::BinaryConcrete => {
            let cb = require_ecoc(&cfg.strategy, &model.cfg.head, codebook)?;
            let n = cb.n_bits();
            let tau = anneal_temperature(epoch, schedule.total_epochs);
            let z = model.head_logits(g, prev_out)?;
            let noise: Vec<S> = (0..n)
                .map(|_| S::from_f64_lossy(sample_logistic(rng)))
                .collect();
            let noise = g.constant(1, n, noise);
            let noisy = g.add(z, noise)?;
            let scaled = g.scale(noisy, S::from_f64_lossy(1.0 / tau));
            let relaxed = g.sigmoid(scaled);
            // Per-dimension Bernoulli(p_c): keep the relaxed bit with
            // probability p_c, otherwise pin it to the target bit (clamped
            // away from {0,1} so log-scores stay finite).
            let gold = cb.encode(target)?;
            let p_vec = schedule.per_bit(epoch, n);
            let mut keep = vec![S::zero(); n];
            let mut pinned = vec![S::zero(); n];
            for c in 0..n {
                if rng.gen::<f64>() < p_vec[c] {
                    keep[c] = S::one();
                } else {
                    pinned[c] =
                        S::from_f64_lossy(if gold.bit(c) { 1.0 - 1e-6 } else { 1e-6 });
                }
            }
            let keep = g.constant(1, n, keep);
            let pinned = g.constant(1, n, pinned);
            let kept = g.mul(keep, relaxed)?;
            let mixed = g.add(kept, pinned)?;

            let q = g.value(mixed).to_vec();
            let mut candidates = vec![threshold_bits(&q)?];
            for i in least_confident_bits(&q, DEFAULT_CANDIDATES.min(n).saturating_sub(1)) {
                candidates.push(flip_bit(&candidates[0], i));
            }
            let tokens: Vec<usize> = candidates
                .iter()
                .map(|c| cb.decode(c))
                .collect::<Result<_>>()?;
            let ln_q = g.ln(mixed);
            let om = g.one_minus(mixed);
            let ln_1q = g.ln(om);
            let scores: Vec<NodeId> = candidates
                .iter()
                .map(|cand| {
                    let on: Vec<S> = (0..n)
                        .map(|i| if cand.bit(i) { S::one() } else { S::zero() })
                        .collect();
                    let off: Vec<S> = on.iter().map(|&b| S::one() - b).collect();
                    let on = g.constant(1, n, on);
                    let off = g.constant(1, n, off);
                    let a = g.mul(on, ln_q)?;
                    let b = g.mul(off, ln_1q)?;
                    let s = g.add(a, b)?;
                    Ok(g.sum_all(s))
                })
                .collect::<Result<_>>()?;
            weighted_embedding(g, model, &tokens, scores)
        }
        Strategy::GumbelSoftmax => {
            if !matches!(model.cfg.head, HeadKind::Hierarchical) {
                return Err(Error::StrategyHeadMismatch {
                    strategy: cfg.strategy.name().to_string(),
                    head: model.cfg.head.name().to_string(),
                });
            }
            if rng.gen::<f64>() >= p {
                return Ok(model.embed(g, target));
            }
            let tree = *model.tree().expect("hierarchical model has a tree");
            let tau = anneal_temperature(epoch, schedule.total_epochs);
            let rz = model.root_logits(g, prev_out)?;
            let c = tree.n_classes();
            let noise: Vec<S> = (0..c)
                .map(|_| S::from_f64_lossy(sample_gumbel(rng)))
                .collect();
            let noise = g.constant(1, c, noise);
            let noisy = g.add(rz, noise)?;
            let scaled = g.scale(noisy, S::from_f64_lossy(1.0 / tau));
            // Top-k classes by relaxed score; each contributes its most
            // probable leaf token, weighted by a softmax restricted to the
            // chosen classes (still differentiable through the root logits).
            let vals = g.value(scaled).to_vec();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap().then(a.cmp(&b)));
            order.truncate(DEFAULT_CANDIDATES.min(c));
            let mut tokens = Vec::with_capacity(order.len());
            let mut scores = Vec::with_capacity(order.len());
            for &class in &order {
                let cz = model.child_logits(g, prev_out, class)?;
                let leaf = argmax(g.value(cz));
                let (lo, hi) = tree.class_range(class);
                tokens.push((lo + leaf).min(hi - 1));
                let slice = g.slice_cols(scaled, class, 1)?;
                scores.push(g.sum_all(slice));
            }
            weighted_embedding(g, model, &tokens, scores)
        }
    }
}

/// Hamming distance between the thresholded prediction and a reference
/// codeword (diagnostic helper).
pub fn thresholded_hamming<S: Scalar>(bit_probs: &[S], reference: &Codeword) -> Result<usize> {
    let t = threshold_bits(bit_probs)?;
    crate::codebook::hamming(&t, reference)
}
