//! Binary checkpoint format.
//!
//! ```text
//! "BITCKPT1"
//! u64 LE   metadata length, then that many bytes of `key=value` lines
//!          (sorted; model config fields under `model.`)
//! u32 LE   tensor count
//! per tensor: u32 name length, name, u32 ndim, u64 dims.., u8 dtype, payload
//! 32 bytes SHA-256 of everything above
//! ```
//!
//! Model tensors are stored under their layout names; optimizer moments,
//! when present, as `adam.m` and `adam.v`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BITCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub optimizer: Option<OptimizerState>,
    /// Free-form string metadata (step, vocabulary hash, phase, ...).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Self {
            params,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.meta.get("step").and_then(|s| s.parse().ok()).unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = encode_meta(&self.meta, &self.params.config)?.into_bytes();

        let mut out = Vec::with_capacity(self.params.data.len() * 4 * 3 + meta.len() + 4096);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);

        let mut tensors: Vec<(&str, Vec<u64>, &[f32])> = self
            .params
            .layout
            .entries()
            .map(|(name, span)| {
                let dims = if span.rows == 1 {
                    vec![span.cols as u64]
                } else {
                    vec![span.rows as u64, span.cols as u64]
                };
                (name, dims, self.params.tensor(span))
            })
            .collect();
        if let Some(opt) = &self.optimizer {
            tensors.push(("adam.m", vec![opt.m.len() as u64], &opt.m));
            tensors.push(("adam.v", vec![opt.v.len() as u64], &opt.v));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(f32::DTYPE);
            for &v in data {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic or truncated header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let meta_len = r.u64()? as usize;
        let (meta, config) = decode_meta(r.take(meta_len)?)?;
        let mut params = ModelParams::<f32>::zeros(&config)
            .map_err(|e| Error::Checkpoint(format!("model_config: {e}")))?;

        let count = r.u32()? as usize;
        let mut seen = 0usize;
        let (mut m, mut v) = (None, None);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut numel = 1usize;
            for _ in 0..ndim {
                numel = numel
                    .checked_mul(r.u64()? as usize)
                    .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            }
            if r.take(1)?[0] != f32::DTYPE {
                return Err(Error::Checkpoint(format!("{name}: unsupported dtype")));
            }
            let payload = r.take(numel * f32::BYTES)?;
            let values: Vec<f32> = payload.chunks_exact(f32::BYTES).map(f32::read_le).collect();
            match name.as_str() {
                "adam.m" => m = Some(values),
                "adam.v" => v = Some(values),
                _ => {
                    let span = params
                        .layout
                        .find(&name)
                        .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
                    if span.len() != numel {
                        return Err(Error::Checkpoint(format!(
                            "{name}: {numel} values, layout expects {}",
                            span.len()
                        )));
                    }
                    params.data[span.range()].copy_from_slice(&values);
                    seen += 1;
                }
            }
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        if seen != params.layout.entries().count() {
            return Err(Error::Checkpoint("missing model tensors".into()));
        }
        let optimizer = match (m, v) {
            (Some(m), Some(v)) if m.len() == params.data.len() && v.len() == params.data.len() => {
                let step = meta.get("adam_step").and_then(|s| s.parse().ok()).unwrap_or(0);
                Some(OptimizerState { step, m, v })
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("inconsistent optimizer state".into())),
        };
        Ok(Self {
            params,
            optimizer,
            meta,
        })
    }

    /// Writes through a temporary sibling and renames, so a crash never
    /// leaves a half-written checkpoint under the final name.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = self.clone();
        if let Some(opt) = &self.optimizer {
            ck.meta.insert("adam_step".into(), opt.step.to_string());
        }
        let bytes = ck.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

const MODEL_PREFIX: &str = "model.";

fn encode_meta(meta: &BTreeMap<String, String>, config: &ModelConfig) -> Result<String> {
    let mut lines = BTreeMap::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') || k.starts_with(MODEL_PREFIX) {
            return Err(Error::Checkpoint(format!("metadata entry {k:?} cannot be stored")));
        }
        lines.insert(k.clone(), v.clone());
    }
    let serde_json::Value::Object(fields) =
        serde_json::to_value(config).map_err(|e| Error::Checkpoint(e.to_string()))?
    else {
        unreachable!("model config serializes to an object")
    };
    for (k, v) in fields {
        lines.insert(format!("{MODEL_PREFIX}{k}"), v.to_string());
    }
    Ok(lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect())
}

fn decode_meta(bytes: &[u8]) -> Result<(BTreeMap<String, String>, ModelConfig)> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Checkpoint("metadata is not utf-8".into()))?;
    let mut meta = BTreeMap::new();
    let mut fields = serde_json::Map::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("metadata line {line:?} lacks '='")))?;
        match k.strip_prefix(MODEL_PREFIX) {
            Some(field) => {
                let value = serde_json::from_str(v).map_err(|e| Error::Checkpoint(format!("{k}: {e}")))?;
                fields.insert(field.to_string(), value);
            }
            None => {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    }
    let config = serde_json::from_value(serde_json::Value::Object(fields))
        .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
    Ok((meta, config))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
