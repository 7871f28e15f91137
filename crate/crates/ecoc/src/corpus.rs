//! Tokenization, vocabulary construction and truncated-BPTT batching.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token <-> index map with frequency counts. Index 0 is `<unk>`, index 1 is
/// `<eos>`, real tokens follow in descending frequency (ties by first
/// occurrence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const EOS: usize = 1;

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, folding unknowns into `<unk>`.
    pub fn index_or_unk(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(Self::UNK)
    }

    /// Most frequent real token (skipping the specials).
    pub fn most_frequent(&self) -> usize {
        if self.len() > 2 {
            2
        } else {
            Self::UNK
        }
    }

    /// FNV-1a over the token list; pairs checkpoints with codebooks.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(out, "{t}\t{c}").unwrap();
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (t, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected <token>\\t<count>".into(),
            })?;
            tokens.push(t.to_string());
            counts.push(c.parse::<u64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.lines().flat_map(|line| {
        line.split_whitespace().chain(std::iter::once(EOS_TOKEN))
    })
}

/// Whitespace tokenization with newline-as-`<eos>`; tokens below `min_count`
/// or beyond `max_size` fold into `<unk>`.
pub fn build_vocab(text: &str, min_count: u64, max_size: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut n_tokens = 0usize;
    let mut eos_count = 0u64;
    for tok in tokenize(text) {
        n_tokens += 1;
        if tok == EOS_TOKEN {
            eos_count += 1;
            continue;
        }
        let next_id = first_seen.len();
        first_seen.entry(tok).or_insert(next_id);
        *counts.entry(tok).or_insert(0) += 1;
    }
    if n_tokens == 0 {
        return Err(Error::EmptyStream);
    }

    let mut order: Vec<&str> = counts.keys().copied().collect();
    order.sort_by_key(|t| (std::cmp::Reverse(counts[t]), first_seen[t]));

    let mut tokens = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
    let mut kept_counts = vec![0u64, eos_count];
    let mut unk_count = 0u64;
    for t in order {
        let c = counts[t];
        if c >= min_count && tokens.len() < max_size.saturating_add(2) {
            tokens.push(t.to_string());
            kept_counts.push(c);
        } else {
            unk_count += c;
        }
    }
    kept_counts[Vocabulary::UNK] = unk_count;
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        tokens,
        counts: kept_counts,
        index,
    })
}

/// Map text to a stream of vocabulary indices (newline becomes `<eos>`).
pub fn index_stream(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    tokenize(text).map(|t| vocab.index_or_unk(t)).collect()
}

/// One truncated-BPTT window. `targets[b][t]` is the token following
/// `inputs[b][t]` in the underlying stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpttBatch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl BpttBatch {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, |r| r.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split `stream` into `batch_size` contiguous segments (remainder dropped)
/// and cut consecutive `bptt_len` windows; the last window may be shorter.
pub fn batchify(stream: &[usize], batch_size: usize, bptt_len: usize) -> Result<Vec<BpttBatch>> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::Config("batch_size and bptt_len must be >= 1".into()));
    }
    if stream.len() < batch_size * 2 {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            need: batch_size * 2,
        });
    }
    let seg_len = stream.len() / batch_size;
    let usable = seg_len - 1; // targets need one token of lookahead
    let segments: Vec<&[usize]> = (0..batch_size)
        .map(|b| &stream[b * seg_len..(b + 1) * seg_len])
        .collect();
    let mut batches = Vec::new();
    let mut t = 0;
    while t < usable {
        let len = bptt_len.min(usable - t);
        let inputs = segments.iter().map(|s| s[t..t + len].to_vec()).collect();
        let targets = segments
            .iter()
            .map(|s| s[t + 1..t + 1 + len].to_vec())
            .collect();
        batches.push(BpttBatch { inputs, targets });
        t += len;
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_specials() {
        let v = build_vocab("a a b\n", 1, usize::MAX).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "<eos>", "a", "b"]);
        assert_eq!(v.count(v.lookup("a").unwrap()), 2);
        assert_eq!(v.count(Vocabulary::EOS), 1);
    }

    #[test]
    fn min_count_folds_into_unk() {
        let v = build_vocab("a a b", 2, usize::MAX).unwrap();
        assert_eq!(v.lookup("b"), None);
        assert_eq!(v.index_or_unk("b"), Vocabulary::UNK);
        assert_eq!(v.count(Vocabulary::UNK), 1);
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let v = build_vocab("a a b", 1, 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "<eos>", "a"]);
        assert_eq!(v.index_or_unk("b"), Vocabulary::UNK);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(build_vocab("", 1, 10), Err(Error::EmptyStream)));
    }

    #[test]
    fn frequency_ties_break_by_first_occurrence() {
        let v = build_vocab("z q z q", 1, usize::MAX).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "<eos>", "z", "q"]);
    }

    #[test]
    fn vocab_build_is_idempotent() {
        let text = "the cat sat\nthe dog ran\nthe cat ran\n";
        let a = build_vocab(text, 1, usize::MAX).unwrap();
        let b = build_vocab(text, 1, usize::MAX).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab("a a b c c c\n", 1, usize::MAX).unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn batchify_segment_arithmetic() {
        let stream: Vec<usize> = (0..101).collect();
        let batches = batchify(&stream, 5, 7).unwrap();
        // 101 / 5 = 20 per segment, 1 dropped; usable length 19 -> 7,7,5.
        assert_eq!(
            batches.iter().map(|b| b.len()).collect::<Vec<_>>(),
            vec![7, 7, 5]
        );
        assert_eq!(batches[0].batch_size(), 5);
        // Second segment starts at 20.
        assert_eq!(batches[0].inputs[1][0], 20);
    }

    #[test]
    fn targets_are_inputs_shifted_by_one() {
        let stream: Vec<usize> = (0..40).collect();
        for b in batchify(&stream, 2, 6).unwrap() {
            for lane in 0..b.batch_size() {
                for t in 0..b.len() {
                    assert_eq!(b.targets[lane][t], b.inputs[lane][t] + 1);
                }
            }
        }
    }

    #[test]
    fn consecutive_batches_reconstruct_segments() {
        let stream: Vec<usize> = (0..97).map(|i| i * 3 % 50).collect();
        let batch_size = 4;
        let batches = batchify(&stream, batch_size, 5).unwrap();
        let seg_len = stream.len() / batch_size;
        for lane in 0..batch_size {
            let mut rebuilt: Vec<usize> = Vec::new();
            for b in &batches {
                rebuilt.extend_from_slice(&b.inputs[lane]);
            }
            rebuilt.push(*batches.last().unwrap().targets[lane].last().unwrap());
            assert_eq!(rebuilt, stream[lane * seg_len..(lane + 1) * seg_len]);
        }
    }

    #[test]
    fn too_short_stream_is_an_error() {
        let stream: Vec<usize> = (0..5).collect();
        assert!(matches!(
            batchify(&stream, 3, 4),
            Err(Error::StreamTooShort { .. })
        ));
    }
}
