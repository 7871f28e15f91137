//! Flat key=value run configuration with flag overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUT_ROOT_ENV: &str = "ECOC_OUT_ROOT";

macro_rules! run_config {
    ($( $field:ident : $ty:ty = $default:expr, $help:expr; )*) => {
        /// Everything a run needs, resolvable from a config file plus
        /// `key=value` overrides.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            /// Apply one `key=value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| {
                            Error::Config(format!("bad value for {key}: {value:?} ({e})"))
                        })?;
                    })*
                    _ => {
                        return Err(Error::Config(format!("unknown config key: {key}")));
                    }
                }
                Ok(())
            }

            /// Canonical serialization; parsing it back yields an equal config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(
                    s.push_str(stringify!($field));
                    s.push_str(" = ");
                    s.push_str(&self.$field.to_string());
                    s.push('\n');
                )*
                s
            }

            pub fn known_keys() -> BTreeSet<&'static str> {
                [$(stringify!($field)),*].into_iter().collect()
            }
        }
    };
}

run_config! {
    train_path: String = String::new(), "training corpus (whitespace-tokenized text)";
    valid_path: String = String::new(), "validation corpus";
    test_path: String = String::new(), "test corpus";
    vocab_max: usize = 2000, "vocabulary cap including <unk>/<eos>";
    vocab_min_count: usize = 1, "minimum frequency for a vocabulary entry";
    head: String = "ecoc".to_string(), "output head: ecoc | softmax | hierarchical";
    n_bits: usize = 0, "code width; 0 means 4*ceil(log2 |V|)";
    ordering: String = "unigram".to_string(), "codebook ordering: unigram | random | embedding";
    mapping: String = "binary".to_string(), "integer-to-codeword mapping: binary | gray";
    query_token: String = String::new(), "similarity query for embedding ordering; empty = most frequent";
    embeddings_path: String = String::new(), "pretrained embeddings (word2vec text); empty = none";
    embedding_fallback: bool = true, "derive PPMI-SVD embeddings from the corpus when no file is given";
    embedding_window: usize = 5, "co-occurrence window for derived embeddings";
    embedding_dim: usize = 64, "dimension for derived embeddings";
    ordering_seed: u64 = 1, "seed for random ordering";
    dim: usize = 64, "embedding width = hidden width";
    layers: usize = 2, "LSTM layers";
    dropout: f64 = 0.2, "variational dropout rate";
    bptt: usize = 35, "truncated backpropagation window";
    batch_size: usize = 8, "parallel corpus lanes";
    optimizer: String = "sgd".to_string(), "sgd | adam";
    lr: f64 = 1.0, "learning rate";
    lr_decay: f64 = 0.5, "multiply lr by this after a non-improving epoch";
    clip: f64 = 0.25, "global gradient-norm clip";
    patience: usize = 3, "non-improving epochs before early stop";
    strategy: String = "teacher_forcing".to_string(), "input strategy: teacher_forcing | scheduled_sampling | clvms | soft_mixture | binary_concrete | gumbel_softmax";
    tau_max: f64 = 0.25, "asymptotic mixing probability";
    delta: f64 = 0.0, "schedule slope; 0 means epochs/20";
    per_bit_profile: String = "uniform".to_string(), "uniform | significance_ramp";
    mix_k: usize = 5, "candidate count for soft mixtures";
    mix_tau: f64 = 1.0, "soft-mixture temperature";
    epochs: usize = 10, "training epochs";
    seed: u64 = 42, "master seed";
    out_dir: String = String::new(), "output directory (joined to the env root when relative)";
}

impl RunConfig {
    /// Parse a flat key=value file; '#' starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override must be key=value, got {pair:?}")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The output directory with the env root applied.
    pub fn resolved_out_dir(&self) -> Result<PathBuf> {
        if self.out_dir.is_empty() {
            return Err(Error::Config("out_dir is required".into()));
        }
        let p = PathBuf::from(&self.out_dir);
        if p.is_absolute() {
            return Ok(p);
        }
        match std::env::var(OUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => Ok(PathBuf::from(root).join(p)),
            _ => Ok(p),
        }
    }

    /// Checks enum-ish fields and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        for (name, v, allowed) in [
            ("head", &self.head, &["ecoc", "softmax", "hierarchical"][..]),
            ("ordering", &self.ordering, &["unigram", "random", "embedding"][..]),
            ("mapping", &self.mapping, &["binary", "gray"][..]),
            ("optimizer", &self.optimizer, &["sgd", "adam"][..]),
            (
                "strategy",
                &self.strategy,
                &[
                    "teacher_forcing",
                    "scheduled_sampling",
                    "clvms",
                    "soft_mixture",
                    "binary_concrete",
                    "gumbel_softmax",
                ][..],
            ),
            (
                "per_bit_profile",
                &self.per_bit_profile,
                &["uniform", "significance_ramp"][..],
            ),
        ] {
            if !allowed.contains(&v.as_str()) {
                return Err(Error::Config(format!(
                    "{name} must be one of {allowed:?}, got {v:?}"
                )));
            }
        }
        for (name, path) in [
            ("train_path", &self.train_path),
            ("valid_path", &self.valid_path),
        ] {
            if path.is_empty() {
                return Err(Error::Config(format!("{name} is required")));
            }
            if !Path::new(path).exists() {
                return Err(Error::Config(format!("{name} does not exist: {path}")));
            }
        }
        if !self.test_path.is_empty() && !Path::new(&self.test_path).exists() {
            return Err(Error::Config(format!(
                "test_path does not exist: {}",
                self.test_path
            )));
        }
        if !self.embeddings_path.is_empty() && !Path::new(&self.embeddings_path).exists() {
            return Err(Error::Config(format!(
                "embeddings_path does not exist: {}",
                self.embeddings_path
            )));
        }
        if self.ordering == "embedding" && self.embeddings_path.is_empty() && !self.embedding_fallback
        {
            return Err(Error::Config(
                "ordering=embedding needs embeddings_path or embedding_fallback=true".into(),
            ));
        }
        if self.vocab_max < 3 {
            return Err(Error::Config("vocab_max must be at least 3".into()));
        }
        if self.dim == 0 || self.layers == 0 || self.bptt == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "dim, layers, bptt, and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.clip > 0.0) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        if !(self.tau_max > 0.0 && self.tau_max <= 1.0) {
            return Err(Error::Config(format!(
                "tau_max must lie in (0, 1], got {}",
                self.tau_max
            )));
        }
        Ok(())
    }

    /// Schedule slope with the `0 = epochs/20` default applied.
    pub fn resolved_delta(&self) -> f64 {
        if self.delta > 0.0 {
            self.delta
        } else {
            (self.epochs as f64 / 20.0).max(1e-6)
        }
    }

    /// Code width with the `0 = 4*ceil(log2 |V|)` default applied.
    pub fn resolved_n_bits(&self, vocab_size: usize) -> usize {
        if self.n_bits > 0 {
            self.n_bits
        } else {
            4 * (usize::BITS - (vocab_size - 1).leading_zeros()) as usize
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.set("head", "softmax").unwrap();
        cfg.set("lr", "0.375").unwrap();
        cfg.set("out_dir", "/tmp/run").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.config");
        std::fs::write(&p, cfg.to_text()).unwrap();
        let back = RunConfig::from_file(&p).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.to_text(), back.to_text());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("not_a_key", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("epochs", "many"), Err(Error::Config(_))));
        assert!(cfg.apply_overrides(["epochs=3", "lr=0.5"]).is_ok());
        assert_eq!(cfg.epochs, 3);
        assert!(matches!(
            cfg.apply_overrides(["epochs:3"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_catches_missing_files_and_bad_enums() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.txt");
        std::fs::write(&train, "a b c").unwrap();
        let mut cfg = RunConfig::default();
        cfg.train_path = train.display().to_string();
        cfg.valid_path = "/no/such/file".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.valid_path = cfg.train_path.clone();
        cfg.validate().unwrap();
        cfg.head = "giant".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_n_bits_matches_formula() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.resolved_n_bits(2000), 44); // 4 * 11
        assert_eq!(cfg.resolved_n_bits(8), 12); // 4 * 3
        assert_eq!(cfg.resolved_n_bits(9), 16); // 4 * 4
    }
}
