//! Binary checkpoint format: `ecoc-ckpt v1` magic, model shape, vocabulary
//! hash, and little-endian f64 parameter/optimizer tensors. Writing the same
//! state twice yields byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::model::{HeadKind, Model, ModelConfig};
use crate::network::params::ParamStore;

const MAGIC: &[u8] = b"ecoc-ckpt v1\n";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub vocab_hash: u64,
    pub epoch: u64,
    /// Learning rate in effect when the checkpoint was written.
    pub lr: f64,
    pub step_count: u64,
    pub params: Vec<SavedParam>,
}

#[derive(Debug, Clone)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

fn head_tag(head: &HeadKind) -> (u8, u64) {
    match head {
        HeadKind::Ecoc { n_bits } => (0, *n_bits as u64),
        HeadKind::FullSoftmax => (1, 0),
        HeadKind::Hierarchical => (2, 0),
    }
}

fn head_from_tag(tag: u8, n_bits: u64) -> Result<HeadKind> {
    match tag {
        0 => Ok(HeadKind::Ecoc {
            n_bits: n_bits as usize,
        }),
        1 => Ok(HeadKind::FullSoftmax),
        2 => Ok(HeadKind::Hierarchical),
        other => Err(Error::Incompatible(format!("unknown head tag {other}"))),
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model<f64>, vocab_hash: u64, epoch: u64, lr: f64) -> Self {
        Checkpoint {
            cfg: model.cfg.clone(),
            vocab_hash,
            epoch,
            lr,
            step_count: model.store.step_count,
            params: model
                .store
                .iter()
                .map(|p| SavedParam {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                    value: p.value.clone(),
                    adam_m: p.adam_m.clone(),
                    adam_v: p.adam_v.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild the model this checkpoint was taken from.
    pub fn restore(&self) -> Result<Model<f64>> {
        let mut model = Model::new(self.cfg.clone(), 0);
        if model.store.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} tensors, architecture has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        restore_store(&mut model.store, &self.params)?;
        model.store.step_count = self.step_count;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.vocab_hash.to_le_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.lr.to_le_bytes());
        buf.extend_from_slice(&self.step_count.to_le_bytes());
        let (tag, n_bits) = head_tag(&self.cfg.head);
        buf.push(tag);
        buf.extend_from_slice(&n_bits.to_le_bytes());
        for v in [self.cfg.vocab_size, self.cfg.dim, self.cfg.layers] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.cfg.dropout.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(p.rows as u64).to_le_bytes());
            buf.extend_from_slice(&(p.cols as u64).to_le_bytes());
            for arr in [&p.value, &p.adam_m, &p.adam_v] {
                debug_assert_eq!(arr.len(), p.rows * p.cols);
                for v in arr.iter() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        // Write-then-rename so readers never observe a torn checkpoint.
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::File::create(&tmp)?.write_all(&buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path,
        };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(Error::Incompatible(format!(
                "{} is not an ecoc-ckpt v1 file",
                path.display()
            )));
        }
        let vocab_hash = r.u64()?;
        let epoch = r.u64()?;
        let lr = r.f64()?;
        let step_count = r.u64()?;
        let tag = r.take(1)?[0];
        let n_bits = r.u64()?;
        let head = head_from_tag(tag, n_bits)?;
        let vocab_size = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let layers = r.u64()? as usize;
        let dropout = r.f64()?;
        let n_params = r.u64()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| r.corrupt("non-utf8 tensor name"))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| r.corrupt("tensor shape overflow"))?;
            let mut arrays = [Vec::new(), Vec::new(), Vec::new()];
            for arr in arrays.iter_mut() {
                arr.reserve(n);
                for _ in 0..n {
                    arr.push(r.f64()?);
                }
            }
            let [value, adam_m, adam_v] = arrays;
            params.push(SavedParam {
                name,
                rows,
                cols,
                value,
                adam_m,
                adam_v,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            cfg: ModelConfig {
                vocab_size,
                dim,
                layers,
                dropout,
                head,
            },
            vocab_hash,
            epoch,
            lr,
            step_count,
            params,
        })
    }
}

fn restore_store(store: &mut ParamStore<f64>, saved: &[SavedParam]) -> Result<()> {
    for (i, s) in saved.iter().enumerate() {
        let p = store.get_mut(crate::network::params::ParamId(i));
        if p.name != s.name || p.rows != s.rows || p.cols != s.cols {
            return Err(Error::Incompatible(format!(
                "tensor {} ({}x{}) does not match architecture tensor {} ({}x{})",
                s.name, s.rows, s.cols, p.name, p.rows, p.cols
            )));
        }
        p.value.clone_from(&s.value);
        p.adam_m.clone_from(&s.adam_m);
        p.adam_v.clone_from(&s.adam_v);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: &str) -> Error {
        Error::Incompatible(format!("corrupt checkpoint {}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
