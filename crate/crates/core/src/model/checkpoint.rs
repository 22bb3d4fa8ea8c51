//! Self-describing parameter container.
//!
//! ```text
//! magic    "HDTCKPT\0"
//! version  u32
//! meta     u32 length + UTF-8 "key=value" lines
//! count    u32
//! entry    u32 name length, name, u8 dtype (0 f32, 1 f64), u8 rank,
//!          rank × u32 dims, payload
//! ```
//! All integers and payloads are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

use super::config::HdtConfig;
use super::hdt::Model;
use super::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"HDTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.to_f64_lossy() as f32).collect()),
            DType::F64 => Payload::F64(t.data().iter().map(|v| v.to_f64_lossy()).collect()),
        }
    }

    /// Converts to `T`; an `f32` payload read as `f64` is widened exactly.
    pub fn to_tensor<T: Real>(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let data = match self {
            Payload::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
        };
        Tensor::new(shape, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push(Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload: Payload::from_tensor(t),
        });
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?;
        e.payload.to_tensor(&e.shape)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(match e.payload.dtype() {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let mut metadata = Vec::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line '{line}'")))?;
            metadata.push((k.to_string(), v.to_string()));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8("dtype")?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = match dtype {
                0 => Payload::F32(
                    r.take(n * 4, &name)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => Payload::F64(
                    r.take(n * 8, &name)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => return Err(Error::Checkpoint(format!("entry '{name}': unknown dtype code {other}"))),
            };
            entries.push(Entry { name, shape, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { metadata, entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }

    /// Writes through a temporary file and rename, so an existing checkpoint
    /// is never left half-written.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    /// Model configuration stored under `model.*` keys.
    pub fn config(&self) -> Result<HdtConfig> {
        let mut cfg = HdtConfig::paper();
        let mut seen = false;
        for (k, v) in &self.metadata {
            if let Some(key) = k.strip_prefix("model.") {
                seen = true;
                if !cfg.set(key, v)? {
                    return Err(Error::Checkpoint(format!("unknown model key '{key}'")));
                }
            }
        }
        if !seen {
            return Err(Error::Checkpoint("no model configuration recorded".into()));
        }
        Ok(cfg)
    }
}

/// Checkpoint holding the model's configuration and parameters.
pub fn model_checkpoint<T: Real>(model: &Model<T>) -> Checkpoint {
    let mut ck = Checkpoint::default();
    for (k, v) in model.config().to_pairs() {
        ck.set_meta(format!("model.{k}"), v);
    }
    let m = model.manifest();
    ck.set_meta("manifest.head_path", m.head_path);
    ck.set_meta("manifest.local_path", m.local_path);
    ck.set_meta("manifest.total", m.total().to_string());
    let store = model.params();
    for (spec, t) in store.specs().iter().zip(store.tensors()) {
        ck.push(format!("param.{}", spec.name), t);
    }
    ck
}

/// Restores a model. With `expected`, the stored configuration must match it
/// field by field; the parameter manifest is always checked.
pub fn model_from_checkpoint<T: Real>(ck: &Checkpoint, expected: Option<&HdtConfig>) -> Result<Model<T>> {
    let stored = ck.config()?;
    let cfg = match expected {
        Some(exp) => {
            for ((k, a), (_, b)) in exp.to_pairs().iter().zip(stored.to_pairs()) {
                if *a != b {
                    return Err(Error::ManifestMismatch(format!("{k}: config has {a}, checkpoint has {b}")));
                }
            }
            exp.clone()
        }
        None => stored,
    };
    let mut model = Model::<T>::new(cfg, 0)?;
    let names: Vec<String> = model.params().specs().iter().map(|s| s.name.clone()).collect();
    let param_entries = ck.entries.iter().filter(|e| e.name.starts_with("param.")).count();
    if param_entries != names.len() {
        return Err(Error::ManifestMismatch(format!(
            "checkpoint has {param_entries} parameters, model expects {}",
            names.len()
        )));
    }
    let mut store: ParamStore<T> = model.params().clone();
    for (i, name) in names.iter().enumerate() {
        let e = ck
            .entry(&format!("param.{name}"))
            .ok_or_else(|| Error::ManifestMismatch(format!("missing parameter {name}")))?;
        if e.shape != store.specs()[i].shape {
            return Err(Error::ManifestMismatch(format!(
                "{name}: shape {:?} vs {:?}",
                store.specs()[i].shape, e.shape
            )));
        }
        store.set(i, e.payload.to_tensor(&e.shape)?)?;
    }
    *model.params_mut() = store;
    Ok(model)
}
