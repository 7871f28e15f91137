//! Line-delimited key=value metrics records.
//!
//! The metrics file holds only run-deterministic fields so identical runs
//! produce byte-identical files; wall-clock seconds are carried in the record
//! for console output but never written to disk.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub perplexity: f64,
    /// Mixing-schedule value in effect this epoch.
    pub schedule: f64,
    /// Relaxation temperature in effect this epoch.
    pub temperature: f64,
    /// Fraction of input positions fed from the model rather than gold.
    pub exposure: f64,
    /// ECOC heads: fraction of positions whose thresholded prediction
    /// decodes to the target token.
    pub hamming_accuracy: Option<f64>,
    /// Wall-clock seconds (console only; excluded from the metrics file).
    pub seconds: f64,
}

impl MetricsRecord {
    /// The deterministic on-disk line.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "epoch={} split={} loss={:.12e} ppl={:.12e} schedule={:.12e} temperature={:.12e} exposure={:.12e}",
            self.epoch, self.split, self.loss, self.perplexity, self.schedule,
            self.temperature, self.exposure,
        );
        if let Some(h) = self.hamming_accuracy {
            s.push_str(&format!(" hamming_accuracy={h:.12e}"));
        }
        s
    }

    /// The console line: the on-disk fields plus wall-clock seconds.
    pub fn to_console_line(&self) -> String {
        format!("{} seconds={:.2}", self.to_line(), self.seconds)
    }

    pub fn parse(line: &str, path: &str, lineno: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("field {field:?} is not key=value"),
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("missing field {k}"),
            })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("bad number for {k}: {e}"),
            })
        };
        Ok(MetricsRecord {
            epoch: num("epoch")? as usize,
            split: get("split")?,
            loss: num("loss")?,
            perplexity: num("ppl")?,
            schedule: num("schedule")?,
            temperature: num("temperature")?,
            exposure: num("exposure")?,
            hamming_accuracy: map
                .get("hamming_accuracy")
                .map(|v| v.parse::<f64>())
                .transpose()
                .map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: lineno,
                    msg: format!("bad hamming_accuracy: {e}"),
                })?,
            seconds: map
                .get("seconds")
                .map(|v| v.parse::<f64>().unwrap_or(0.0))
                .unwrap_or(0.0),
        })
    }
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRecord::parse(l, &p, i + 1))
        .collect()
}
