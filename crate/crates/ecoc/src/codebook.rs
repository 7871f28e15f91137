//! ECOC codebooks over an integer code space.
//!
//! A codebook partitions the `n`-bit code space `[0, 2^n)` into one
//! contiguous half-open interval ("span") per token. The span start is the
//! token's class codeword; the remaining codes in the span act as error
//! checks. Keeping spans as intervals instead of enumerated spare codewords
//! means the structure stays `O(vocab)` even for 4096-bit codes, and decoding
//! is a binary search over span boundaries.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{log_add_exp, Scalar};

/// Hard cap on code width; spans keep the codebook itself small but the
/// per-bit decoder head still has one unit per bit.
pub const MAX_BITS: usize = 4096;

/// Probabilities are clamped into `[EPS_P, 1 - EPS_P]` before taking logs.
pub const EPS_P: f64 = 1e-12;

/// How integer span positions map to bit patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingMode {
    /// Plain base-2 representation.
    Binary,
    /// Reflected Gray code: adjacent integers differ in exactly one bit.
    Gray,
}

impl MappingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MappingMode::Binary => "binary",
            MappingMode::Gray => "gray",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(MappingMode::Binary),
            "gray" => Some(MappingMode::Gray),
            _ => None,
        }
    }
}

/// How tokens are arranged along the code space before spans are carved out.
#[derive(Debug, Clone)]
pub enum OrderingSpec {
    /// Keep vocabulary index order.
    Identity,
    /// Seeded uniform permutation.
    Random { seed: u64 },
    /// Sort by span weight, descending; ties by ascending token index.
    ByWeightDesc,
}

/// An `n_bits`-wide bit vector. Bit 0 is the most significant bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codeword {
    n_bits: usize,
    value: BigUint,
}

impl Codeword {
    pub fn from_value(n_bits: usize, value: BigUint) -> Result<Self> {
        if n_bits > MAX_BITS {
            return Err(Error::CodeTooWide(n_bits));
        }
        if value.bits() as usize > n_bits {
            return Err(Error::ShapeMismatch(format!(
                "value needs {} bits, codeword width is {}",
                value.bits(),
                n_bits
            )));
        }
        Ok(Codeword { n_bits, value })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut value = BigUint::zero();
        for &b in bits {
            value <<= 1u32;
            if b {
                value |= BigUint::one();
            }
        }
        Codeword::from_value(bits.len(), value)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Bit at position `i`, where `i = 0` is the most significant bit.
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.n_bits);
        self.value.bit((self.n_bits - 1 - i) as u64)
    }

    /// Bits MSB-first.
    pub fn bits(&self) -> Vec<bool> {
        (0..self.n_bits).map(|i| self.bit(i)).collect()
    }

    pub fn to_bit_string(&self) -> String {
        let mut s = String::with_capacity(self.n_bits);
        for i in 0..self.n_bits {
            s.push(if self.bit(i) { '1' } else { '0' });
        }
        s
    }
}

/// Number of differing bit positions between two equal-width codewords.
pub fn hamming(a: &Codeword, b: &Codeword) -> Result<usize> {
    if a.n_bits != b.n_bits {
        return Err(Error::WidthMismatch {
            left: a.n_bits,
            right: b.n_bits,
        });
    }
    Ok((&a.value ^ &b.value).count_ones() as usize)
}

fn gray_encode(v: &BigUint) -> BigUint {
    v ^ (v >> 1u32)
}

fn gray_decode(g: &BigUint, n_bits: usize) -> BigUint {
    let mut v = BigUint::zero();
    let mut prev = false;
    for i in (0..n_bits as u64).rev() {
        let b = g.bit(i) ^ prev;
        if b {
            v.set_bit(i, true);
        }
        prev = b;
    }
    v
}

/// Best (max mode) factorial score of one span.
#[derive(Debug, Clone)]
pub struct SpanScore<S: Scalar> {
    pub token: usize,
    pub log_score: S,
    pub witness: Option<Codeword>,
}

/// Partition of the code space into per-token spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    n_bits: usize,
    mapping: MappingMode,
    /// `vocab_size + 1` boundaries; span at position `p` is
    /// `[boundaries[p], boundaries[p+1])`.
    boundaries: Vec<BigUint>,
    /// Span position -> token index.
    token_order: Vec<usize>,
    /// Token index -> span position.
    position_of: Vec<usize>,
}

/// Construct a codebook by cumsum-allocating span widths proportional to
/// `span_weights`, then repairing any zero-width span so every token keeps at
/// least its class codeword.
pub fn build_codebook<S: Scalar>(
    vocab_size: usize,
    n_bits: usize,
    ordering: &OrderingSpec,
    span_weights: &[S],
    mapping: MappingMode,
) -> Result<Codebook> {
    if vocab_size < 2 {
        return Err(Error::Config(format!(
            "vocab size {vocab_size} too small for a codebook (need >= 2)"
        )));
    }
    if n_bits > MAX_BITS {
        return Err(Error::CodeTooWide(n_bits));
    }
    let total: BigUint = BigUint::one() << n_bits;
    if total < BigUint::from(vocab_size) {
        return Err(Error::CodeSpaceTooSmall { n_bits, vocab_size });
    }
    if span_weights.len() != vocab_size {
        return Err(Error::ShapeMismatch(format!(
            "{} span weights for vocab size {}",
            span_weights.len(),
            vocab_size
        )));
    }
    let mut weights = Vec::with_capacity(vocab_size);
    for (i, w) in span_weights.iter().enumerate() {
        let w = w.to_f64_lossy();
        if !w.is_finite() {
            return Err(Error::NonFiniteWeight(i));
        }
        if w < 0.0 {
            return Err(Error::Config(format!("negative span weight at index {i}")));
        }
        weights.push(w);
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }

    let token_order = match ordering {
        OrderingSpec::Identity => (0..vocab_size).collect::<Vec<_>>(),
        OrderingSpec::Random { seed } => {
            let mut order: Vec<usize> = (0..vocab_size).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            order.shuffle(&mut rng);
            order
        }
        OrderingSpec::ByWeightDesc => {
            let mut order: Vec<usize> = (0..vocab_size).collect();
            order.sort_by(|&a, &b| {
                weights[b]
                    .partial_cmp(&weights[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order
        }
    };

    // Boundary p = floor(cumsum_p * 2^n), computed as a 64-bit fixed-point
    // fraction times the exact BigUint code count.
    let mut boundaries = Vec::with_capacity(vocab_size + 1);
    boundaries.push(BigUint::zero());
    let mut cum = 0.0f64;
    for p in 0..vocab_size - 1 {
        cum += weights[token_order[p]] / sum;
        let b = if cum >= 1.0 {
            total.clone()
        } else if cum <= 0.0 {
            BigUint::zero()
        } else {
            let frac = (cum * 18446744073709551616.0) as u128; // * 2^64
            (&total * BigUint::from(frac)) >> 64u32
        };
        let b = if b < boundaries[p] {
            boundaries[p].clone()
        } else {
            b
        };
        boundaries.push(b);
    }
    boundaries.push(total);

    repair_zero_spans(&mut boundaries);

    let mut position_of = vec![0usize; vocab_size];
    for (p, &t) in token_order.iter().enumerate() {
        position_of[t] = p;
    }
    let cb = Codebook {
        n_bits,
        mapping,
        boundaries,
        token_order,
        position_of,
    };
    debug_assert!(cb.check_partition().is_ok());
    Ok(cb)
}

/// Left-to-right pass: a zero-width span takes one code from the widest
/// other span (preferring an adjacent one), shifting the boundaries in
/// between by one.
fn repair_zero_spans(boundaries: &mut [BigUint]) {
    let v = boundaries.len() - 1;
    let width = |bs: &[BigUint], p: usize| &bs[p + 1] - &bs[p];
    for p in 0..v {
        if width(boundaries, p) >= BigUint::one() {
            continue;
        }
        let two = BigUint::from(2u32);
        let mut donor = None;
        // Adjacent donors first.
        let mut best = BigUint::one();
        if p > 0 && width(boundaries, p - 1) >= two {
            best = width(boundaries, p - 1);
            donor = Some(p - 1);
        }
        if p + 1 < v && width(boundaries, p + 1) >= two && width(boundaries, p + 1) > best {
            donor = Some(p + 1);
        }
        if donor.is_none() {
            let mut best = two.clone();
            for q in 0..v {
                let w = width(boundaries, q);
                if w >= best {
                    best = w;
                    donor = Some(q);
                }
            }
        }
        let q = donor.expect("2^n >= vocab guarantees a donor span");
        if q < p {
            for b in boundaries.iter_mut().take(p + 1).skip(q + 1) {
                *b -= 1u32;
            }
        } else {
            for b in boundaries.iter_mut().take(q + 1).skip(p + 1) {
                *b += 1u32;
            }
        }
    }
}

impl Codebook {
    /// Rebuild from persisted parts, validating the partition invariants.
    pub fn from_parts(
        n_bits: usize,
        mapping: MappingMode,
        boundaries: Vec<BigUint>,
        token_order: Vec<usize>,
    ) -> Result<Self> {
        if boundaries.len() != token_order.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} boundaries for {} tokens",
                boundaries.len(),
                token_order.len()
            )));
        }
        let vocab_size = token_order.len();
        let mut position_of = vec![usize::MAX; vocab_size];
        for (p, &t) in token_order.iter().enumerate() {
            if t >= vocab_size || position_of[t] != usize::MAX {
                return Err(Error::ShapeMismatch(
                    "token order is not a permutation".into(),
                ));
            }
            position_of[t] = p;
        }
        let cb = Codebook {
            n_bits,
            mapping,
            boundaries,
            token_order,
            position_of,
        };
        cb.check_partition()?;
        Ok(cb)
    }

    fn check_partition(&self) -> Result<()> {
        if !self.boundaries[0].is_zero() {
            return Err(Error::ShapeMismatch("first boundary must be 0".into()));
        }
        let total: BigUint = BigUint::one() << self.n_bits;
        if *self.boundaries.last().unwrap() != total {
            return Err(Error::ShapeMismatch("last boundary must be 2^n".into()));
        }
        for p in 0..self.vocab_size() {
            if self.boundaries[p + 1] <= self.boundaries[p] {
                return Err(Error::EmptySpan {
                    lo: self.boundaries[p].to_string(),
                    hi: self.boundaries[p + 1].to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn mapping(&self) -> MappingMode {
        self.mapping
    }

    pub fn vocab_size(&self) -> usize {
        self.token_order.len()
    }

    pub fn token_order(&self) -> &[usize] {
        &self.token_order
    }

    /// Half-open integer interval owned by `token`.
    pub fn span(&self, token: usize) -> Result<(&BigUint, &BigUint)> {
        if token >= self.vocab_size() {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size(),
            });
        }
        let p = self.position_of[token];
        Ok((&self.boundaries[p], &self.boundaries[p + 1]))
    }

    pub fn span_width(&self, token: usize) -> Result<BigUint> {
        let (lo, hi) = self.span(token)?;
        Ok(hi - lo)
    }

    /// Class codeword: the bit pattern of the token's span start.
    pub fn encode(&self, token: usize) -> Result<Codeword> {
        let (lo, _) = self.span(token)?;
        let value = match self.mapping {
            MappingMode::Binary => lo.clone(),
            MappingMode::Gray => gray_encode(lo),
        };
        Codeword::from_value(self.n_bits, value)
    }

    /// Every code in a token's span decodes to that token.
    pub fn decode(&self, codeword: &Codeword) -> Result<usize> {
        if codeword.n_bits != self.n_bits {
            return Err(Error::WidthMismatch {
                left: codeword.n_bits,
                right: self.n_bits,
            });
        }
        let v = match self.mapping {
            MappingMode::Binary => codeword.value.clone(),
            MappingMode::Gray => gray_decode(&codeword.value, self.n_bits),
        };
        // partition_point: first boundary strictly greater than v, minus 1.
        let p = self.boundaries.partition_point(|b| *b <= v) - 1;
        Ok(self.token_order[p.min(self.vocab_size() - 1)])
    }

    /// Max-mode score of `token`'s span under the given bit probabilities.
    pub fn token_span_max<S: Scalar>(&self, bit_probs: &[S], token: usize) -> Result<SpanScore<S>> {
        let (lo, hi) = self.span(token)?;
        let (log_score, witness) = span_max_logprob(bit_probs, lo, hi, self.mapping)?;
        Ok(SpanScore {
            token,
            log_score,
            witness: Some(witness),
        })
    }

    /// Log of the total factorial mass inside `token`'s span.
    pub fn token_span_mass<S: Scalar>(&self, bit_probs: &[S], token: usize) -> Result<S> {
        let (lo, hi) = self.span(token)?;
        span_log_mass(bit_probs, lo, hi, self.mapping)
    }
}

/// Scoring mode for [`token_distribution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Max over codes in each span, then explicit normalization.
    Max,
    /// Exact marginal mass per span; normalized by construction.
    Sum,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Max => "max",
            ScoreMode::Sum => "sum",
        }
    }
}

/// Per-token log probabilities (vocabulary index order) induced by the
/// factorial bit distribution.
pub fn token_distribution<S: Scalar>(
    bit_probs: &[S],
    codebook: &Codebook,
    mode: ScoreMode,
) -> Result<Vec<S>> {
    let v = codebook.vocab_size();
    let mut out = Vec::with_capacity(v);
    match mode {
        ScoreMode::Sum => {
            for t in 0..v {
                out.push(codebook.token_span_mass(bit_probs, t)?);
            }
        }
        ScoreMode::Max => {
            for t in 0..v {
                out.push(codebook.token_span_max(bit_probs, t)?.log_score);
            }
            let z = crate::scalar::log_sum_exp(&out);
            for x in out.iter_mut() {
                *x = *x - z;
            }
        }
    }
    Ok(out)
}

fn clamped_logs<S: Scalar>(bit_probs: &[S]) -> Result<Vec<(S, S)>> {
    let eps = S::from_f64_lossy(EPS_P);
    let one = S::one();
    bit_probs
        .iter()
        .map(|&p| {
            if !(p >= S::zero() && p <= one) {
                return Err(Error::InvalidProbability(p.to_f64_lossy()));
            }
            let p = p.max(eps).min(one - eps);
            Ok((p.ln(), (one - p).ln()))
        })
        .collect()
}

// Digit DP over the span's underlying integers, MSB first. State is
// (tight at lower bound, tight at upper bound, previous integer bit); the
// previous bit matters only in Gray mode where codeword bit i is
// v_i XOR v_{i-1}.
const N_STATES: usize = 8;

fn state_index(tl: bool, th: bool, prev: bool) -> usize {
    (tl as usize) << 2 | (th as usize) << 1 | prev as usize
}

fn span_bounds(lo: &BigUint, hi: &BigUint, n_bits: usize) -> Result<(BigUint, BigUint)> {
    if hi <= lo {
        return Err(Error::EmptySpan {
            lo: lo.to_string(),
            hi: hi.to_string(),
        });
    }
    let total: BigUint = BigUint::one() << n_bits;
    if *hi > total {
        return Err(Error::ShapeMismatch(format!(
            "span end {hi} exceeds code space 2^{n_bits}"
        )));
    }
    Ok((lo.clone(), hi - 1u32))
}

/// Exact `max` over all codes in `[lo, hi)` of the factorial log probability,
/// with the achieving codeword. `O(n_bits)`.
pub fn span_max_logprob<S: Scalar>(
    bit_probs: &[S],
    lo: &BigUint,
    hi: &BigUint,
    mapping: MappingMode,
) -> Result<(S, Codeword)> {
    let n = bit_probs.len();
    let logs = clamped_logs(bit_probs)?;
    let (low, high) = span_bounds(lo, hi, n)?;

    #[derive(Clone)]
    struct St<S> {
        score: S,
        bits: Vec<bool>,
    }
    let mut states: Vec<Option<St<S>>> = vec![None; N_STATES];
    states[state_index(true, true, false)] = Some(St {
        score: S::zero(),
        bits: Vec::with_capacity(n),
    });

    for i in 0..n {
        let lo_bit = low.bit((n - 1 - i) as u64);
        let hi_bit = high.bit((n - 1 - i) as u64);
        let mut next: Vec<Option<St<S>>> = vec![None; N_STATES];
        for tl in [false, true] {
            for th in [false, true] {
                for prev in [false, true] {
                    let cur = match &states[state_index(tl, th, prev)] {
                        Some(s) => s.clone(),
                        None => continue,
                    };
                    for b in [false, true] {
                        if tl && !b && lo_bit {
                            continue;
                        }
                        if th && b && !hi_bit {
                            continue;
                        }
                        let cw_bit = match mapping {
                            MappingMode::Binary => b,
                            MappingMode::Gray => b ^ prev,
                        };
                        let score = cur.score + if cw_bit { logs[i].0 } else { logs[i].1 };
                        let ntl = tl && b == lo_bit;
                        let nth = th && b == hi_bit;
                        let slot = &mut next[state_index(ntl, nth, b)];
                        let better = match slot {
                            None => true,
                            // Ties break toward the span start (smaller value).
                            Some(st) => {
                                score > st.score
                                    || (score == st.score && lex_less(&cur.bits, b, &st.bits))
                            }
                        };
                        if better {
                            let mut bits = cur.bits.clone();
                            bits.push(b);
                            *slot = Some(St { score, bits });
                        }
                    }
                }
            }
        }
        states = next;
    }

    let mut best: Option<St<S>> = None;
    for st in states.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => {
                st.score > b.score || (st.score == b.score && st.bits < b.bits)
            }
        };
        if better {
            best = Some(st);
        }
    }
    let best = best.expect("nonempty span always yields a path");
    let mut v = BigUint::zero();
    for &b in &best.bits {
        v <<= 1u32;
        if b {
            v |= BigUint::one();
        }
    }
    let cw_value = match mapping {
        MappingMode::Binary => v,
        MappingMode::Gray => gray_encode(&v),
    };
    Ok((best.score, Codeword::from_value(n, cw_value)?))
}

fn lex_less(prefix: &[bool], last: bool, other: &[bool]) -> bool {
    let n = other.len();
    for i in 0..n {
        let a = if i + 1 == n { last } else { prefix[i] };
        if a != other[i] {
            return !a;
        }
    }
    false
}

/// Log of the summed factorial mass over all codes in `[lo, hi)`, via the
/// same digit DP in log-sum-exp arithmetic.
pub fn span_log_mass<S: Scalar>(
    bit_probs: &[S],
    lo: &BigUint,
    hi: &BigUint,
    mapping: MappingMode,
) -> Result<S> {
    let n = bit_probs.len();
    let logs = clamped_logs(bit_probs)?;
    let (low, high) = span_bounds(lo, hi, n)?;

    let ninf = S::neg_infinity();
    let mut states = [ninf; N_STATES];
    states[state_index(true, true, false)] = S::zero();

    for i in 0..n {
        let lo_bit = low.bit((n - 1 - i) as u64);
        let hi_bit = high.bit((n - 1 - i) as u64);
        let mut next = [ninf; N_STATES];
        for tl in [false, true] {
            for th in [false, true] {
                for prev in [false, true] {
                    let cur = states[state_index(tl, th, prev)];
                    if cur == ninf {
                        continue;
                    }
                    for b in [false, true] {
                        if tl && !b && lo_bit {
                            continue;
                        }
                        if th && b && !hi_bit {
                            continue;
                        }
                        let cw_bit = match mapping {
                            MappingMode::Binary => b,
                            MappingMode::Gray => b ^ prev,
                        };
                        let score = cur + if cw_bit { logs[i].0 } else { logs[i].1 };
                        let slot = &mut next[state_index(tl && b == lo_bit, th && b == hi_bit, b)];
                        *slot = log_add_exp(*slot, score);
                    }
                }
            }
        }
        states = next;
    }
    Ok(crate::scalar::log_sum_exp(&states))
}

/// Minimum Hamming distance from `target` to any code in `[lo, hi)`, by the
/// same digit DP with integer agreement costs.
pub fn span_min_hamming(
    target: &Codeword,
    lo: &BigUint,
    hi: &BigUint,
    mapping: MappingMode,
) -> Result<usize> {
    let n = target.n_bits();
    let (low, high) = span_bounds(lo, hi, n)?;
    let mut states = [usize::MAX; N_STATES];
    states[state_index(true, true, false)] = 0;
    for i in 0..n {
        let lo_bit = low.bit((n - 1 - i) as u64);
        let hi_bit = high.bit((n - 1 - i) as u64);
        let mut next = [usize::MAX; N_STATES];
        for tl in [false, true] {
            for th in [false, true] {
                for prev in [false, true] {
                    let cur = states[state_index(tl, th, prev)];
                    if cur == usize::MAX {
                        continue;
                    }
                    for b in [false, true] {
                        if tl && !b && lo_bit {
                            continue;
                        }
                        if th && b && !hi_bit {
                            continue;
                        }
                        let cw_bit = match mapping {
                            MappingMode::Binary => b,
                            MappingMode::Gray => b ^ prev,
                        };
                        let cost = cur + (cw_bit != target.bit(i)) as usize;
                        let slot = &mut next[state_index(tl && b == lo_bit, th && b == hi_bit, b)];
                        *slot = (*slot).min(cost);
                    }
                }
            }
        }
        states = next;
    }
    Ok(states.into_iter().min().unwrap())
}

// ---------------------------------------------------------------------------
// Persistence: `ecoc-codebook v1` line format.
// ---------------------------------------------------------------------------

/// Serialize in span order: header, then `<token>\t<start>\t<end>` per line.
pub fn save_codebook(codebook: &Codebook, tokens: &[String], path: &Path) -> Result<()> {
    if tokens.len() != codebook.vocab_size() {
        return Err(Error::ShapeMismatch(format!(
            "{} tokens for vocab size {}",
            tokens.len(),
            codebook.vocab_size()
        )));
    }
    let mut out = String::new();
    writeln!(
        out,
        "ecoc-codebook v1 n_bits={} mode={} vocab={}",
        codebook.n_bits,
        codebook.mapping.as_str(),
        codebook.vocab_size()
    )
    .unwrap();
    for p in 0..codebook.vocab_size() {
        writeln!(
            out,
            "{}\t{}\t{}",
            tokens[codebook.token_order[p]],
            codebook.boundaries[p],
            codebook.boundaries[p + 1]
        )
        .unwrap();
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// A loaded codebook file: tokens in span order plus the raw partition.
/// `codebook.token_order` is rebuilt against the caller's vocabulary with
/// [`LoadedCodebook::bind`].
pub struct LoadedCodebook {
    pub n_bits: usize,
    pub mapping: MappingMode,
    /// Token strings in span order.
    pub tokens: Vec<String>,
    /// `vocab + 1` span boundaries.
    pub boundaries: Vec<BigUint>,
}

impl LoadedCodebook {
    /// Rebuild a [`Codebook`] whose token indices come from `index_of`.
    pub fn bind(&self, index_of: impl Fn(&str) -> Option<usize>) -> Result<Codebook> {
        let mut token_order = Vec::with_capacity(self.tokens.len());
        for tok in &self.tokens {
            match index_of(tok) {
                Some(i) => token_order.push(i),
                None => {
                    return Err(Error::Incompatible(format!(
                        "codebook token {tok:?} not in vocabulary"
                    )))
                }
            }
        }
        Codebook::from_parts(self.n_bits, self.mapping, self.boundaries.clone(), token_order)
    }

    /// Identity-indexed codebook: token i = i-th line of the file.
    pub fn into_codebook(self) -> Result<(Vec<String>, Codebook)> {
        let order: Vec<usize> = (0..self.tokens.len()).collect();
        let cb = Codebook::from_parts(self.n_bits, self.mapping, self.boundaries, order)?;
        Ok((self.tokens, cb))
    }
}

pub fn load_codebook(path: &Path) -> Result<LoadedCodebook> {
    let pathstr = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: pathstr.clone(),
        line,
        msg,
    };
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))??;
    let mut n_bits = None;
    let mut mapping = None;
    let mut vocab = None;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("ecoc-codebook") || fields.next() != Some("v1") {
        return Err(parse_err(1, format!("bad header {header:?}")));
    }
    for field in fields {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("bad header field {field:?}")))?;
        match k {
            "n_bits" => {
                n_bits = Some(v.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?)
            }
            "mode" => {
                mapping =
                    Some(MappingMode::parse(v).ok_or_else(|| {
                        parse_err(1, format!("unknown mapping mode {v:?}"))
                    })?)
            }
            "vocab" => vocab = Some(v.parse::<usize>().map_err(|e| parse_err(1, e.to_string()))?),
            _ => return Err(parse_err(1, format!("unknown header key {k:?}"))),
        }
    }
    let (n_bits, mapping, vocab) = match (n_bits, mapping, vocab) {
        (Some(n), Some(m), Some(v)) => (n, m, v),
        _ => return Err(parse_err(1, "header missing n_bits/mode/vocab".into())),
    };

    let mut tokens = Vec::with_capacity(vocab);
    let mut boundaries = vec![BigUint::zero()];
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        let mut parts = line.split('\t');
        let (tok, start, end) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(s), Some(e), None) => (t, s, e),
            _ => return Err(parse_err(lineno, "expected 3 tab-separated fields".into())),
        };
        let start: BigUint = start
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad integer {start:?}")))?;
        let end: BigUint = end
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad integer {end:?}")))?;
        if start != *boundaries.last().unwrap() {
            return Err(parse_err(lineno, "span start does not continue partition".into()));
        }
        tokens.push(tok.to_string());
        boundaries.push(end);
    }
    if tokens.len() != vocab {
        return Err(parse_err(
            tokens.len() + 1,
            format!("header says vocab={} but found {} spans", vocab, tokens.len()),
        ));
    }
    Ok(LoadedCodebook {
        n_bits,
        mapping,
        tokens,
        boundaries,
    })
}
