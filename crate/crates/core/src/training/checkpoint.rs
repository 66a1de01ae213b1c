//! Binary checkpoint files.
//!
//! Layout: magic `MCSP1`, a little-endian `u32` byte count followed by a TOML
//! metadata block, then one record per parameter: `u32` name length, UTF-8
//! name, `u8` dtype tag, `u8` rank, `rank × u64` dims, little-endian payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, Domain};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 5] = b"MCSP1";

/// Everything but the arrays. Training randomness is derived from
/// `(seed, epoch, sample)` streams, so `seed` and `epoch` are the full rng state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub domains: Vec<Domain>,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Snapshot of the full run configuration, if the caller has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>, seed: u64, step: u64, epoch: u64) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                step,
                epoch,
                domains: model.domains().to_vec(),
                data: model.data.clone(),
                model: model.cfg.clone(),
                config: None,
            },
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model the checkpoint was taken from.
    pub fn to_model(&self) -> Result<Model<T>> {
        let mut model = Model::with_domains(
            &self.meta.model,
            &self.meta.data,
            &self.meta.domains,
            self.meta.seed,
        )?;
        let loaded = model.load_matching(&self.params, |_| true);
        if loaded != model.params.len() || loaded != self.params.len() {
            return Err(Error::validation(format!(
                "checkpoint holds {} arrays, model expects {}, {} matched",
                self.params.len(),
                model.params.len(),
                loaded
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = toml::to_string(&self.meta)
            .map_err(|e| Error::validation(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for (_, name, m) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(2);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &v in m.as_slice() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let meta_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let meta = r.take(meta_len).ok_or_else(|| bad("truncated metadata"))?;
        let meta = std::str::from_utf8(meta).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta: CheckpointMeta =
            toml::from_str(meta).map_err(|e| Error::format(path, format!("metadata: {e}")))?;
        let mut params = ParamSet::new();
        while r.pos < bytes.len() {
            let n = r.u32().ok_or_else(|| bad("truncated record"))? as usize;
            let name = r.take(n).ok_or_else(|| bad("truncated record name"))?;
            let name = std::str::from_utf8(name)
                .map_err(|_| bad("record name is not UTF-8"))?
                .to_string();
            let tag = r.take(1).ok_or_else(|| bad("truncated record"))?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| bad("unknown dtype tag"))?;
            let rank = r.take(1).ok_or_else(|| bad("truncated record"))?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64().ok_or_else(|| bad("truncated shape"))? as usize);
            }
            let (rows, cols) = match dims.as_slice() {
                [c] => (1, *c),
                [rr, c] => (*rr, *c),
                _ => return Err(bad("records must have rank 1 or 2")),
            };
            let payload = r
                .take(rows * cols * dtype.size())
                .ok_or_else(|| bad("truncated payload"))?;
            let values: Vec<T> = payload
                .chunks_exact(dtype.size())
                .map(|c| match dtype {
                    DType::F32 => T::of(f64::from(f32::read_le(c))),
                    DType::F64 => T::of(f64::read_le(c)),
                })
                .collect();
            if params.id(&name).is_some() {
                return Err(Error::format(path, format!("duplicate record {name}")));
            }
            params.add(name, Matrix::from_vec(rows, cols, values)?);
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
