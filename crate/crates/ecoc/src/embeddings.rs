//! Word vectors behind codebook ordering: external text-format embeddings or
//! a PPMI-SVD fallback derived from the training corpus.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Per-token dense vectors aligned with vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    /// Fraction of vocabulary tokens found in the source file (1.0 for
    /// derived embeddings).
    coverage: f64,
}

impl EmbeddingMatrix {
    pub fn new(vectors: Vec<Vec<f64>>, coverage: f64) -> Result<Self> {
        let dim = vectors.first().map_or(0, |v| v.len());
        for (i, row) in vectors.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has width {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::ShapeMismatch(format!("non-finite entry in row {i}")));
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            vectors,
            coverage,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.vectors[token]
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn save(&self, tokens: &[String], path: &Path) -> Result<()> {
        let mut out = String::new();
        for (t, row) in tokens.iter().zip(&self.vectors) {
            out.push_str(t);
            for x in row {
                out.push(' ');
                out.push_str(&format!("{x}"));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Cosine similarities of every token to one query token, with the
/// descending-score permutation.
#[derive(Debug, Clone)]
pub struct SimilarityRanking {
    pub query_token: usize,
    /// Cosine similarity per token (vocabulary index order).
    pub scores: Vec<f64>,
    /// Token indices sorted by descending score, ties by ascending index.
    pub order: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Rank all tokens by cosine similarity to `query`. Zero-norm rows score 0;
/// a zero-norm query is an error.
pub fn cosine_rank(emb: &EmbeddingMatrix, query: usize) -> Result<SimilarityRanking> {
    if query >= emb.len() {
        return Err(Error::TokenOutOfRange {
            token: query,
            vocab_size: emb.len(),
        });
    }
    let q = emb.row(query);
    let qn = norm(q);
    if qn == 0.0 {
        return Err(Error::ZeroNormRow(query));
    }
    let scores: Vec<f64> = (0..emb.len())
        .map(|t| {
            let r = emb.row(t);
            let rn = norm(r);
            if rn == 0.0 {
                0.0
            } else {
                (dot(q, r) / (qn * rn)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..emb.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(SimilarityRanking {
        query_token: query,
        scores,
        order,
    })
}

/// Load a whitespace-separated text embedding file (`<token> <f1> ... <fd>`
/// per line). Vocabulary tokens missing from the file get a deterministic
/// seeded random row scaled to the mean norm of the present rows, so cosine
/// ranking stays well-defined.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix> {
    let text = std::fs::read_to_string(path)?;
    let pathstr = path.display().to_string();
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let tok = fields.next().unwrap();
        let mut row = Vec::new();
        for f in fields {
            row.push(f.parse::<f64>().map_err(|_| Error::Parse {
                path: pathstr.clone(),
                line: lineno,
                msg: format!("unparseable number {f:?}"),
            })?);
        }
        if row.is_empty() {
            return Err(Error::Parse {
                path: pathstr.clone(),
                line: lineno,
                msg: "line has no vector components".into(),
            });
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Parse {
                    path: pathstr.clone(),
                    line: lineno,
                    msg: format!("dimension {} differs from {}", row.len(), d),
                })
            }
            _ => {}
        }
        if let Some(idx) = vocab.lookup(tok) {
            rows[idx] = Some(row);
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        path: pathstr.clone(),
        line: 1,
        msg: "no embedding rows in file".into(),
    })?;
    let present = rows.iter().flatten().count();
    let coverage = present as f64 / vocab.len() as f64;
    let mean_norm = if present > 0 {
        rows.iter().flatten().map(|r| norm(r)).sum::<f64>() / present as f64
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = rows
        .into_iter()
        .map(|r| match r {
            Some(r) => r,
            None => {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = norm(&v).max(1e-12);
                for x in v.iter_mut() {
                    *x *= mean_norm / n;
                }
                v
            }
        })
        .collect();
    EmbeddingMatrix::new(vectors, coverage)
}

/// Windowed symmetric co-occurrence counts as a dense matrix (row-major).
fn cooccurrence(stream: &[usize], vocab_size: usize, window: usize) -> Vec<f64> {
    let mut m = vec![0.0f64; vocab_size * vocab_size];
    for (i, &w) in stream.iter().enumerate() {
        for d in 1..=window {
            if i + d >= stream.len() {
                break;
            }
            let c = stream[i + d];
            m[w * vocab_size + c] += 1.0;
            m[c * vocab_size + w] += 1.0;
        }
    }
    m
}

/// Positive pointwise mutual information of a co-occurrence matrix, in place.
fn ppmi(m: &mut [f64], vocab_size: usize) {
    let total: f64 = m.iter().sum();
    if total == 0.0 {
        return;
    }
    let row_sums: Vec<f64> = (0..vocab_size)
        .map(|r| m[r * vocab_size..(r + 1) * vocab_size].iter().sum())
        .collect();
    for r in 0..vocab_size {
        for c in 0..vocab_size {
            let x = &mut m[r * vocab_size + c];
            if *x > 0.0 && row_sums[r] > 0.0 && row_sums[c] > 0.0 {
                *x = (*x * total / (row_sums[r] * row_sums[c])).ln().max(0.0);
            } else {
                *x = 0.0;
            }
        }
    }
}

/// Corpus-derived embeddings: symmetric windowed co-occurrence -> PPMI ->
/// rank-`dim` factorization by seeded randomized subspace iteration.
/// Deterministic given the seed.
pub fn ppmi_svd_embeddings(
    stream: &[usize],
    vocab: &Vocabulary,
    window: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let v = vocab.len();
    if window < 1 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    if dim > v {
        return Err(Error::Config(format!("dim {dim} exceeds vocab size {v}")));
    }
    if stream.len() < window + 1 {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            need: window + 1,
        });
    }
    let mut m = cooccurrence(stream, v, window);
    ppmi(&mut m, v);

    // Subspace iteration on the symmetric PPMI matrix: Q spans the top-dim
    // eigenvectors, embeddings are the rows of M projected onto Q.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..v).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut q);
    for _ in 0..8 {
        let mut next: Vec<Vec<f64>> = q
            .iter()
            .map(|col| mat_vec(&m, v, col))
            .collect();
        orthonormalize(&mut next);
        q = next;
    }
    let projected: Vec<Vec<f64>> = (0..v)
        .map(|r| {
            let row = &m[r * v..(r + 1) * v];
            q.iter().map(|col| dot(row, col)).collect()
        })
        .collect();
    EmbeddingMatrix::new(projected, 1.0)
}

fn mat_vec(m: &[f64], v: usize, x: &[f64]) -> Vec<f64> {
    (0..v).map(|r| dot(&m[r * v..(r + 1) * v], x)).collect()
}

/// Modified Gram-Schmidt; zero (or dependent) columns are replaced with unit
/// basis vectors so the basis always has full rank.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    let n = cols.first().map_or(0, |c| c.len());
    for i in 0..cols.len() {
        for j in 0..i {
            let proj = dot(&cols[i], &cols[j]);
            let prev = cols[j].clone();
            for (x, p) in cols[i].iter_mut().zip(prev) {
                *x -= proj * p;
            }
        }
        let nrm = norm(&cols[i]);
        if nrm < 1e-12 {
            for (k, x) in cols[i].iter_mut().enumerate() {
                *x = if k == i % n { 1.0 } else { 0.0 };
            }
        } else {
            for x in cols[i].iter_mut() {
                *x /= nrm;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn loads_full_coverage_file() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab("the cat", 1, usize::MAX).unwrap();
        let p = write_file(
            &dir,
            "emb.txt",
            "the 0.1 0.2\ncat 0.3 0.4\n<unk> 1 0\n<eos> 0 1\n",
        );
        let emb = load_embeddings(&p, &vocab, 0).unwrap();
        assert_eq!(emb.dim(), 2);
        assert_eq!(emb.coverage(), 1.0);
        assert_eq!(emb.row(vocab.lookup("the").unwrap()), &[0.1, 0.2]);
    }

    #[test]
    fn missing_tokens_get_seeded_fallback_rows() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab("the cat", 1, usize::MAX).unwrap();
        let p = write_file(&dir, "emb.txt", "the 0.6 0.8\n");
        let a = load_embeddings(&p, &vocab, 7).unwrap();
        let b = load_embeddings(&p, &vocab, 7).unwrap();
        assert!(a.coverage() < 1.0);
        assert_eq!(a, b);
        // Fallback rows are scaled to the mean norm of present rows (1.0 here).
        let cat = a.row(vocab.lookup("cat").unwrap());
        assert!((norm(cat) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab("the", 1, usize::MAX).unwrap();
        let p = write_file(&dir, "emb.txt", "the 0.1 x\n");
        match load_embeddings(&p, &vocab, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab("the cat", 1, usize::MAX).unwrap();
        let p = write_file(&dir, "emb.txt", "the 0.1 0.2\ncat 0.3\n");
        match load_embeddings(&p, &vocab, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn cosine_identities() {
        let emb = EmbeddingMatrix::new(
            vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0], vec![0.0, 0.0]],
            1.0,
        )
        .unwrap();
        let r = cosine_rank(&emb, 0).unwrap();
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert!((r.scores[1] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.scores[2], 0.0); // orthogonal
        assert_eq!(r.scores[3], 0.0); // zero-norm row
        assert_eq!(r.order[0], 0);
    }

    #[test]
    fn zero_norm_query_is_an_error() {
        let emb = EmbeddingMatrix::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap();
        assert!(matches!(cosine_rank(&emb, 0), Err(Error::ZeroNormRow(0))));
    }

    #[test]
    fn ranking_is_scale_invariant() {
        let base = vec![
            vec![1.0, 2.0, -0.5],
            vec![0.4, 0.1, 0.9],
            vec![-1.0, 0.3, 0.2],
            vec![2.0, 2.0, 2.0],
        ];
        let a = EmbeddingMatrix::new(base.clone(), 1.0).unwrap();
        let scaled = base
            .iter()
            .map(|r| r.iter().map(|x| x * 7.5).collect())
            .collect();
        let b = EmbeddingMatrix::new(scaled, 1.0).unwrap();
        assert_eq!(cosine_rank(&a, 3).unwrap().order, cosine_rank(&b, 3).unwrap().order);
    }

    #[test]
    fn save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab("a b", 1, usize::MAX).unwrap();
        let emb = EmbeddingMatrix::new(
            vec![vec![0.5, -1.25], vec![3.0, 0.0], vec![1.0, 2.0], vec![0.25, 0.125]],
            1.0,
        )
        .unwrap();
        let p = dir.path().join("emb.txt");
        emb.save(vocab.tokens(), &p).unwrap();
        let loaded = load_embeddings(&p, &vocab, 0).unwrap();
        assert_eq!(loaded.coverage(), 1.0);
        for t in 0..vocab.len() {
            assert_eq!(loaded.row(t), emb.row(t));
        }
    }

    #[test]
    fn cooccurrence_is_symmetric() {
        let vocab = build_vocab("a b a b", 1, usize::MAX).unwrap();
        let stream = crate::corpus::index_stream("a b a b", &vocab);
        let m = cooccurrence(&stream, vocab.len(), 1);
        let v = vocab.len();
        let a = vocab.lookup("a").unwrap();
        let b = vocab.lookup("b").unwrap();
        assert_eq!(m[a * v + b], m[b * v + a]);
        assert!(m[a * v + b] > 0.0);
    }

    #[test]
    fn ppmi_entries_are_nonnegative() {
        let vocab = build_vocab("a b c a b c a a", 1, usize::MAX).unwrap();
        let stream = crate::corpus::index_stream("a b c a b c a a", &vocab);
        let mut m = cooccurrence(&stream, vocab.len(), 2);
        ppmi(&mut m, vocab.len());
        assert!(m.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn ppmi_svd_shapes_and_determinism() {
        let text = "the cat sat on the mat\nthe dog sat on the log\n";
        let vocab = build_vocab(text, 1, usize::MAX).unwrap();
        let stream = crate::corpus::index_stream(text, &vocab);
        let a = ppmi_svd_embeddings(&stream, &vocab, 2, 4, 13).unwrap();
        let b = ppmi_svd_embeddings(&stream, &vocab, 2, 4, 13).unwrap();
        assert_eq!(a.len(), vocab.len());
        assert_eq!(a.dim(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn ppmi_svd_rejects_short_corpus() {
        let vocab = build_vocab("a", 1, usize::MAX).unwrap();
        assert!(matches!(
            ppmi_svd_embeddings(&[2], &vocab, 3, 1, 0),
            Err(Error::StreamTooShort { .. })
        ));
    }
}
