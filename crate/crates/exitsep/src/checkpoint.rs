//! Weight checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "EXSP"  version: u32  records: u32
//! meta_len: u32  meta: JSON (model config, optional training state)
//! records × { name_len: u16  name  rank: u8  dims: u32 × rank  values: f64 × Πdims }
//! ```
//!
//! Optimizer moments, when present, are stored as ordinary records named
//! `optim.m/<param>` and `optim.v/<param>`.

use std::fs;
use std::path::Path;

use exitsep_core::optim::OptimState;
use exitsep_core::{ModelConfig, ParamSet, Separator, Tensor};
use serde::{Deserialize, Serialize};

use crate::audio::write_atomic;
use crate::config::ModelSection;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EXSP";
pub const VERSION: u32 = 1;

const M_PREFIX: &str = "optim.m/";
const V_PREFIX: &str = "optim.v/";

/// Progress needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub optim: OptimState,
    pub best_valid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelSection,
    freq_bins: usize,
    input_dim: usize,
    step: Option<u64>,
    best_valid: Option<f64>,
}

fn push_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn model(&self) -> Result<Separator> {
        Ok(Separator::bind(self.config, &self.params)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            model: ModelSection::from(&self.config),
            freq_bins: self.config.freq_bins,
            input_dim: self.config.input_dim,
            step: self.train.as_ref().map(|t| t.optim.step),
            best_valid: self.train.as_ref().and_then(|t| t.best_valid),
        };
        let meta = serde_json::to_vec(&meta).expect("checkpoint metadata serialises");
        let records = self.params.len() * if self.train.is_some() { 3 } else { 1 };
        let mut buf = Vec::with_capacity(16 + meta.len() + self.params.num_scalars() * 8 * 3);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(records as u32).to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        for (_, name, t) in self.params.iter() {
            push_record(&mut buf, name, t.shape(), t.data());
        }
        if let Some(train) = &self.train {
            for (prefix, moments) in [(M_PREFIX, &train.optim.m), (V_PREFIX, &train.optim.v)] {
                for ((_, name, t), m) in self.params.iter().zip(moments) {
                    push_record(&mut buf, &format!("{prefix}{name}"), t.shape(), m);
                }
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let records = r.u32()? as usize;
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
        let config = meta.model.to_config(meta.input_dim, meta.freq_bins);

        let mut params = ParamSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..records {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| format!("record name: {e}"))?.to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = r
                .take(n.checked_mul(8).ok_or("record too large")?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if let Some(rest) = name.strip_prefix(M_PREFIX) {
                m.push((rest.to_string(), data));
            } else if let Some(rest) = name.strip_prefix(V_PREFIX) {
                v.push((rest.to_string(), data));
            } else {
                let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
                params.add(name, t).map_err(|e| e.to_string())?;
            }
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let train = match meta.step {
            None => None,
            Some(step) => {
                let order = |mut xs: Vec<(String, Vec<f64>)>| -> std::result::Result<Vec<Vec<f64>>, String> {
                    if xs.len() != params.len() {
                        return Err(format!("{} moment records for {} parameters", xs.len(), params.len()));
                    }
                    params
                        .iter()
                        .map(|(_, name, t)| {
                            let i = xs.iter().position(|(n, _)| n == name).ok_or(format!("no moments for {name}"))?;
                            let (_, d) = xs.swap_remove(i);
                            if d.len() != t.len() {
                                return Err(format!("moment size mismatch for {name}"));
                            }
                            Ok(d)
                        })
                        .collect()
                };
                Some(TrainState {
                    optim: OptimState { m: order(m)?, v: order(v)?, step },
                    best_valid: meta.best_valid,
                })
            }
        };
        Ok(Checkpoint { config, params, train })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
