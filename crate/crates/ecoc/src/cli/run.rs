//! Command implementations: build-codebook, train, eval, sample.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::cli::checkpoint::Checkpoint;
use crate::cli::config::RunConfig;
use crate::cli::metrics::MetricsRecord;
use crate::codebook::{
    build_codebook, hamming, load_codebook, save_codebook, Codebook, MappingMode, OrderingSpec,
};
use crate::corpus::{batchify, build_vocab, index_stream, Vocabulary};
use crate::embeddings::{cosine_rank, load_embeddings, ppmi_svd_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::network::eval::{evaluate, EvalOptions, EvalReport};
use crate::network::graph::Graph;
use crate::network::model::{HeadKind, Model, ModelConfig};
use crate::network::params::Optimizer;
use crate::sampling::{
    anneal_temperature, argmax_token, next_input, rng_for, threshold_bits, MixtureSchedule,
    PerBitProfile, SamplerConfig, Strategy,
};

pub const CONFIG_FILE: &str = "resolved.config";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CODEBOOK_FILE: &str = "codebook.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SEPARATION_FILE: &str = "separation.txt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

fn parse_strategy(cfg: &RunConfig) -> Result<Strategy> {
    Ok(match cfg.strategy.as_str() {
        "teacher_forcing" => Strategy::TeacherForcing,
        "scheduled_sampling" => Strategy::ScheduledSampling,
        "clvms" => Strategy::Clvms,
        "soft_mixture" => Strategy::SoftMixture {
            k: cfg.mix_k,
            tau: cfg.mix_tau,
        },
        "binary_concrete" => Strategy::BinaryConcrete,
        "gumbel_softmax" => Strategy::GumbelSoftmax,
        other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
    })
}

fn parse_profile(cfg: &RunConfig) -> Result<PerBitProfile> {
    Ok(match cfg.per_bit_profile.as_str() {
        "uniform" => PerBitProfile::Uniform,
        "significance_ramp" => PerBitProfile::SignificanceRamp,
        other => return Err(Error::Config(format!("unknown per_bit_profile {other:?}"))),
    })
}

fn schedule_for(cfg: &RunConfig) -> Result<MixtureSchedule> {
    MixtureSchedule::new(
        cfg.tau_max,
        cfg.resolved_delta(),
        cfg.epochs,
        parse_profile(cfg)?,
    )
}

/// Corpus text, vocabulary, and integer streams shared by the commands.
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Option<Vec<usize>>,
}

pub fn prepare_corpus(cfg: &RunConfig) -> Result<PreparedCorpus> {
    let train_text = std::fs::read_to_string(&cfg.train_path)?;
    let vocab = build_vocab(&train_text, cfg.vocab_min_count as u64, cfg.vocab_max)?;
    let train = index_stream(&train_text, &vocab);
    let valid = index_stream(&std::fs::read_to_string(&cfg.valid_path)?, &vocab);
    let test = if cfg.test_path.is_empty() {
        None
    } else {
        Some(index_stream(
            &std::fs::read_to_string(&cfg.test_path)?,
            &vocab,
        ))
    };
    Ok(PreparedCorpus {
        vocab,
        train,
        valid,
        test,
    })
}

fn embeddings_for_ordering(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    train: &[usize],
) -> Result<EmbeddingMatrix> {
    if !cfg.embeddings_path.is_empty() {
        load_embeddings(Path::new(&cfg.embeddings_path), vocab, cfg.seed)
    } else if cfg.embedding_fallback {
        ppmi_svd_embeddings(
            train,
            vocab,
            cfg.embedding_window,
            cfg.embedding_dim.min(vocab.len()),
            cfg.seed,
        )
    } else {
        Err(Error::Config(
            "ordering=embedding needs embeddings_path or embedding_fallback=true".into(),
        ))
    }
}

/// Ordering spec and per-token span weights for the configured codebook.
pub fn ordering_and_weights(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    train: &[usize],
) -> Result<(OrderingSpec, Vec<f64>)> {
    match cfg.ordering.as_str() {
        "unigram" => {
            let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c.max(1)) as f64).collect();
            Ok((OrderingSpec::ByWeightDesc, weights))
        }
        "random" => Ok((
            OrderingSpec::Random {
                seed: cfg.ordering_seed,
            },
            vec![1.0; vocab.len()],
        )),
        "embedding" => {
            let emb = embeddings_for_ordering(cfg, vocab, train)?;
            let query = if cfg.query_token.is_empty() {
                vocab.most_frequent()
            } else {
                vocab.lookup(&cfg.query_token).ok_or_else(|| {
                    Error::Config(format!(
                        "query_token {:?} is not in the vocabulary",
                        cfg.query_token
                    ))
                })?
            };
            let ranking = cosine_rank(&emb, query)?;
            // Softmax of similarity: the query (self-similarity 1) gets the
            // largest weight, and similar tokens sort adjacently.
            let m = ranking.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = ranking.scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            Ok((
                OrderingSpec::ByWeightDesc,
                exps.iter().map(|e| e / z).collect(),
            ))
        }
        other => Err(Error::Config(format!("unknown ordering {other:?}"))),
    }
}

pub fn build_codebook_for(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    train: &[usize],
) -> Result<Codebook> {
    let n_bits = cfg.resolved_n_bits(vocab.len());
    let mapping = MappingMode::parse(&cfg.mapping)
        .ok_or_else(|| Error::Config(format!("unknown mapping {:?}", cfg.mapping)))?;
    let (ordering, weights) = ordering_and_weights(cfg, vocab, train)?;
    build_codebook(vocab.len(), n_bits, &ordering, &weights, mapping)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&x, &y| v[x].partial_cmp(&v[y]).unwrap().then(x.cmp(&y)));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        let x = ra[i] - mean;
        let y = rb[i] - mean;
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

fn separation_report(cfg: &RunConfig, codebook: &Codebook, weights: &[f64]) -> Result<String> {
    let v = codebook.vocab_size();
    let mut out = String::new();
    // Span-width histogram, bucketed by bit length of the width.
    let mut hist: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    let mut widths = Vec::with_capacity(v);
    for t in 0..v {
        let w = codebook.span_width(t)?;
        *hist.entry(w.bits()).or_insert(0) += 1;
        let wf: f64 = w.to_string().parse().unwrap_or(f64::MAX);
        widths.push(wf);
    }
    for (bits, count) in &hist {
        writeln!(out, "width_bits={bits} count={count}").unwrap();
    }
    // Sampled minimum pairwise Hamming distance between class codewords.
    let pairs = 2000.min(v * (v - 1) / 2);
    let mut rng = rng_for(cfg.seed, "separation", 0, 0);
    let mut min_h = usize::MAX;
    for _ in 0..pairs {
        let a = rng.gen_range(0..v);
        let mut b = rng.gen_range(0..v);
        while b == a {
            b = rng.gen_range(0..v);
        }
        let h = hamming(&codebook.encode(a)?, &codebook.encode(b)?)?;
        min_h = min_h.min(h);
    }
    writeln!(out, "min_pairwise_hamming={min_h} pairs={pairs}").unwrap();
    writeln!(
        out,
        "spearman_width_vs_weight={:.6}",
        spearman(&widths, weights)
    )
    .unwrap();
    Ok(out)
}

fn init_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.resolved_out_dir()?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(out)
}

pub fn run_build_codebook(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = init_out_dir(cfg)?;
    let corpus = prepare_corpus(cfg)?;
    let (_, weights) = ordering_and_weights(cfg, &corpus.vocab, &corpus.train)?;
    let codebook = build_codebook_for(cfg, &corpus.vocab, &corpus.train)?;
    corpus.vocab.save(&out.join(VOCAB_FILE))?;
    save_codebook(&codebook, corpus.vocab.tokens(), &out.join(CODEBOOK_FILE))?;
    let report = separation_report(cfg, &codebook, &weights)?;
    std::fs::write(out.join(SEPARATION_FILE), &report)?;
    print!("{report}");
    Ok(out)
}

fn head_kind(cfg: &RunConfig, vocab_size: usize) -> Result<HeadKind> {
    Ok(match cfg.head.as_str() {
        "ecoc" => HeadKind::Ecoc {
            n_bits: cfg.resolved_n_bits(vocab_size),
        },
        "softmax" => HeadKind::FullSoftmax,
        "hierarchical" => HeadKind::Hierarchical,
        other => return Err(Error::Config(format!("unknown head {other:?}"))),
    })
}

fn step_loss(
    g: &mut Graph<f64>,
    model: &Model<f64>,
    codebook: Option<&Codebook>,
    out: crate::network::graph::NodeId,
    target: usize,
) -> Result<crate::network::graph::NodeId> {
    match model.cfg.head {
        HeadKind::Ecoc { n_bits } => {
            let cb = codebook.expect("ecoc training carries a codebook");
            let z = model.head_logits(g, out)?;
            let probs: Vec<f64> = g.value(z).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            let (lo, hi) = cb.span(target)?;
            // Maximum-likelihood codeword in the target span is the bit
            // target: the model may settle on any error-check code it likes.
            let (_, witness) = crate::codebook::span_max_logprob::<f64>(
                &probs,
                lo,
                hi,
                cb.mapping(),
            )?;
            let bits: Vec<f64> = (0..n_bits)
                .map(|i| if witness.bit(i) { 1.0 } else { 0.0 })
                .collect();
            g.bce_with_logits(z, bits)
        }
        HeadKind::FullSoftmax => {
            let z = model.head_logits(g, out)?;
            g.ce_with_logits(z, target)
        }
        HeadKind::Hierarchical => {
            let tree = *model.tree().expect("hierarchical model has a tree");
            let (class, leaf) = tree.class_of(target);
            let rz = model.root_logits(g, out)?;
            let rl = g.ce_with_logits(rz, class)?;
            let cz = model.child_logits(g, out, class)?;
            let cl = g.ce_with_logits(cz, leaf)?;
            g.add(rl, cl)
        }
    }
}

pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub best_valid_ppl: f64,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = init_out_dir(cfg)?;
    let corpus = prepare_corpus(cfg)?;
    let vocab_hash = corpus.vocab.hash();
    corpus.vocab.save(&out.join(VOCAB_FILE))?;

    let head = head_kind(cfg, corpus.vocab.len())?;
    let codebook = if matches!(head, HeadKind::Ecoc { .. }) {
        let cb = build_codebook_for(cfg, &corpus.vocab, &corpus.train)?;
        save_codebook(&cb, corpus.vocab.tokens(), &out.join(CODEBOOK_FILE))?;
        Some(cb)
    } else {
        None
    };

    let strategy = parse_strategy(cfg)?;
    let schedule = schedule_for(cfg)?;
    let sampler = SamplerConfig {
        strategy,
        seed: cfg.seed,
    };
    sampler.validate()?;

    let mut model = Model::<f64>::new(
        ModelConfig {
            vocab_size: corpus.vocab.len(),
            dim: cfg.dim,
            layers: cfg.layers,
            dropout: cfg.dropout,
            head,
        },
        cfg.seed,
    );
    let mut opt = match cfg.optimizer.as_str() {
        "sgd" => Optimizer::sgd(cfg.lr, cfg.clip),
        "adam" => Optimizer::adam(cfg.lr, cfg.clip),
        other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
    };

    let batches = batchify(&corpus.train, cfg.batch_size, cfg.bptt)?;
    let eval_opts = EvalOptions {
        batch_size: cfg.batch_size.min(4),
        bptt: cfg.bptt,
        max_mode: false,
    };

    let mut metrics: Vec<MetricsRecord> = Vec::new();
    let mut metrics_text = String::new();
    let mut best_ppl = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut lr = cfg.lr;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let p = schedule.value(epoch);
        let temperature = anneal_temperature(epoch, cfg.epochs);
        opt.set_learning_rate(lr);

        let mut states = vec![model.zero_state(); cfg.batch_size];
        let mut loss_sum = 0.0f64;
        let mut token_count = 0usize;
        let mut exposed = 0.0f64;
        let mut positions = 0usize;

        for (w, batch) in batches.iter().enumerate() {
            model.store.zero_grads();
            let mut window_loss = 0.0f64;
            for lane in 0..batch.batch_size() {
                let mut g = Graph::new();
                let mut nodes = model.state_nodes(&mut g, &states[lane]);
                let masks = if cfg.dropout > 0.0 {
                    let mut mrng =
                        rng_for(cfg.seed, "dropout", lane as u64, (epoch * batches.len() + w) as u64);
                    Some(model.sample_masks(&mut mrng))
                } else {
                    None
                };
                let mut prev_out = None;
                let mut terms = Vec::with_capacity(batch.len());
                for t in 0..batch.len() {
                    let step_id = ((epoch * batches.len() + w) * cfg.bptt + t) as u64;
                    let mut srng = rng_for(cfg.seed, "sampler", lane as u64, step_id);
                    let x = next_input(
                        &sampler,
                        &schedule,
                        epoch,
                        &mut g,
                        &model,
                        codebook.as_ref(),
                        prev_out,
                        batch.inputs[lane][t],
                        &mut srng,
                    )?;
                    if prev_out.is_some() && !matches!(strategy, Strategy::TeacherForcing) {
                        exposed += p;
                    }
                    positions += 1;
                    let (next, step_out) = model.step(&mut g, x, &nodes, masks.as_ref())?;
                    nodes = next;
                    prev_out = Some(step_out);
                    terms.push(step_loss(
                        &mut g,
                        &model,
                        codebook.as_ref(),
                        step_out,
                        batch.targets[lane][t],
                    )?);
                }
                let stacked = g.stack_scalars(terms)?;
                let mean = g.mean_all(stacked);
                let lane_loss = g.scale(mean, 1.0 / batch.batch_size() as f64);
                let lv = g.scalar(mean);
                if !lv.is_finite() {
                    return Err(Error::NanLoss(epoch));
                }
                window_loss += lv * batch.len() as f64;
                g.backward(lane_loss, &mut model.store)?;
                states[lane] = model.read_state(&g, &nodes);
            }
            model.store.check_finite_grads()?;
            opt.step(&mut model.store)?;
            loss_sum += window_loss / batch.batch_size() as f64;
            token_count += batch.len();
        }

        let train_loss = loss_sum / token_count as f64;
        let report = evaluate(&model, codebook.as_ref(), &corpus.valid, &eval_opts)?;
        let exposure = if positions == 0 {
            0.0
        } else {
            exposed / positions as f64
        };
        let seconds = t0.elapsed().as_secs_f64();
        let train_rec = MetricsRecord {
            epoch,
            split: "train".into(),
            loss: train_loss,
            perplexity: train_loss.exp(),
            schedule: p,
            temperature,
            exposure,
            hamming_accuracy: None,
            seconds,
        };
        let valid_rec = MetricsRecord {
            epoch,
            split: "valid".into(),
            loss: report.perplexity.ln(),
            perplexity: report.perplexity,
            schedule: p,
            temperature,
            exposure,
            hamming_accuracy: report.hamming_accuracy,
            seconds,
        };
        for rec in [&train_rec, &valid_rec] {
            println!("{}", rec.to_console_line());
            metrics_text.push_str(&rec.to_line());
            metrics_text.push('\n');
        }
        std::fs::write(out.join(METRICS_FILE), &metrics_text)?;
        metrics.push(train_rec);
        metrics.push(valid_rec);

        let ck = Checkpoint::from_model(&model, vocab_hash, epoch as u64, lr);
        ck.save(&out.join(format!("epoch-{epoch}.ckpt")))?;
        ck.save(&out.join(LAST_CKPT))?;
        if report.perplexity < best_ppl {
            best_ppl = report.perplexity;
            bad_epochs = 0;
            ck.save(&out.join(BEST_CKPT))?;
        } else {
            bad_epochs += 1;
            lr *= cfg.lr_decay;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        out_dir: out,
        records: metrics,
        best_valid_ppl: best_ppl,
    })
}

/// Load the artifacts a run directory holds for inference commands.
pub struct LoadedRun {
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
    pub codebook: Option<Codebook>,
    pub model: Model<f64>,
}

pub fn load_run(run_dir: &Path, checkpoint: &str) -> Result<LoadedRun> {
    let cfg = RunConfig::from_file(&run_dir.join(CONFIG_FILE))?;
    let vocab = Vocabulary::load(&run_dir.join(VOCAB_FILE))?;
    let ckpt_path = if Path::new(checkpoint).is_absolute() {
        PathBuf::from(checkpoint)
    } else {
        run_dir.join(checkpoint)
    };
    let ck = Checkpoint::load(&ckpt_path)?;
    if ck.vocab_hash != vocab.hash() {
        return Err(Error::Incompatible(format!(
            "checkpoint vocab hash {:#x} does not match vocabulary hash {:#x}",
            ck.vocab_hash,
            vocab.hash()
        )));
    }
    let model = ck.restore()?;
    let codebook = if let HeadKind::Ecoc { n_bits } = model.cfg.head {
        let loaded = load_codebook(&run_dir.join(CODEBOOK_FILE))?;
        if loaded.n_bits != n_bits {
            return Err(Error::Incompatible(format!(
                "codebook has {} bits, checkpoint expects {n_bits}",
                loaded.n_bits
            )));
        }
        Some(loaded.bind(|tok| vocab.lookup(tok))?)
    } else {
        None
    };
    Ok(LoadedRun {
        cfg,
        vocab,
        codebook,
        model,
    })
}

pub fn run_eval(run_dir: &Path, checkpoint: &str, split: &str) -> Result<EvalReport> {
    let run = load_run(run_dir, checkpoint)?;
    let path = match split {
        "train" => run.cfg.train_path.clone(),
        "valid" => run.cfg.valid_path.clone(),
        "test" => {
            if run.cfg.test_path.is_empty() {
                return Err(Error::Config("run has no test_path".into()));
            }
            run.cfg.test_path.clone()
        }
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    let stream = index_stream(&std::fs::read_to_string(&path)?, &run.vocab);
    let is_ecoc = run.codebook.is_some();
    let opts = EvalOptions {
        batch_size: run.cfg.batch_size.min(4),
        bptt: run.cfg.bptt,
        max_mode: is_ecoc,
    };
    let report = evaluate(&run.model, run.codebook.as_ref(), &stream, &opts)?;
    let mut line = format!(
        "split={split} tokens={} ppl_sum={:.6}",
        report.n_tokens, report.perplexity
    );
    if let Some(p) = report.perplexity_max {
        write!(line, " ppl_max={p:.6}").unwrap();
    }
    if let Some(h) = report.hamming_accuracy {
        write!(line, " hamming_accuracy={h:.6}").unwrap();
    }
    if let Some(h) = report.mean_hamming {
        write!(line, " mean_hamming={h:.6}").unwrap();
    }
    println!("{line}");
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Temperature,
}

#[allow(clippy::too_many_arguments)]
pub fn run_sample(
    run_dir: &Path,
    checkpoint: &str,
    prefix: &str,
    length: usize,
    decode: DecodeMode,
    temperature: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if length == 0 {
        return Err(Error::Config("sample length must be positive".into()));
    }
    if decode == DecodeMode::Temperature && !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let run = load_run(run_dir, checkpoint)?;
    let model = &run.model;
    let mut prefix_tokens: Vec<usize> = prefix
        .split_whitespace()
        .map(|t| run.vocab.index_or_unk(t))
        .collect();
    if prefix_tokens.is_empty() {
        prefix_tokens.push(Vocabulary::EOS);
    }

    let mut state = model.zero_state();
    let mut generated = Vec::with_capacity(length);
    let mut rng = rng_for(seed, "sample", 0, 0);
    let mut token_iter = prefix_tokens;

    for _ in 0..length {
        // One graph per step keeps memory flat for long generations.
        let mut g = Graph::new();
        let nodes = model.state_nodes(&mut g, &state);
        let mut out = None;
        let mut current = nodes;
        for &tok in &token_iter {
            let x = model.embed(&mut g, tok);
            let (next, o) = model.step(&mut g, x, &current, None)?;
            current = next;
            out = Some(o);
        }
        state = model.read_state(&g, &current);
        let out = out.expect("at least one input token");
        let next_token = match decode {
            DecodeMode::Greedy => argmax_token(&mut g, model, run.codebook.as_ref(), out)?,
            DecodeMode::Temperature => {
                sample_token(&mut g, model, run.codebook.as_ref(), out, temperature, &mut rng)?
            }
        };
        generated.push(run.vocab.token(next_token).to_string());
        token_iter = vec![next_token];
    }
    Ok(generated)
}

fn softmax_sample(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, e) in exps.iter().enumerate() {
        u -= e;
        if u <= 0.0 {
            return i;
        }
    }
    exps.len() - 1
}

fn sample_token(
    g: &mut Graph<f64>,
    model: &Model<f64>,
    codebook: Option<&Codebook>,
    out: crate::network::graph::NodeId,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    match model.cfg.head {
        HeadKind::Ecoc { .. } => {
            let cb = codebook.ok_or_else(|| Error::Config("sampling needs a codebook".into()))?;
            let z = model.head_logits(g, out)?;
            let bits: Vec<f64> = g
                .value(z)
                .iter()
                .map(|&l| {
                    let p = 1.0 / (1.0 + (-l / temperature).exp());
                    if rng.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            cb.decode(&threshold_bits(&bits)?)
        }
        HeadKind::FullSoftmax => {
            let z = model.head_logits(g, out)?;
            Ok(softmax_sample(g.value(z), temperature, rng))
        }
        HeadKind::Hierarchical => {
            let tree = *model.tree().expect("hierarchical model has a tree");
            let rz = model.root_logits(g, out)?;
            let class = softmax_sample(g.value(rz), temperature, rng);
            let cz = model.child_logits(g, out, class)?;
            let leaf = softmax_sample(g.value(cz), temperature, rng);
            let (lo, hi) = tree.class_range(class);
            Ok((lo + leaf).min(hi - 1))
        }
    }
}
