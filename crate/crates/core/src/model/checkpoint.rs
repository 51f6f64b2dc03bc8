//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CADNCKPT"
//! version      u32      currently 1
//! meta_len     u32      byte length of the metadata block
//! meta         utf-8    "key=value\n" lines; model checkpoints carry the
//!                       model configuration keys
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32
//!   name       utf-8
//!   ndim       u32
//!   dims       ndim × u64
//!   data       product(dims) × f64
//! ```
//!
//! Tensors are written in name order, so identical contents produce
//! identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"CADNCKPT";
pub const VERSION: u32 = 1;

/// Generic contents of a checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("checkpoint metadata is not utf-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Format(format!("bad metadata line '{line}'")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor '{name}': {e}")))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Container { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
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

pub fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (key, _) in cfg.clone().to_pairs() {
        let value = meta.get(key).ok_or_else(|| Error::Format(format!("checkpoint lacks '{key}'")))?;
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

impl ModelParams {
    pub fn to_container(&self) -> Container {
        let mut meta: BTreeMap<String, String> =
            self.config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        meta.insert("kind".into(), "model".into());
        Container { meta, tensors: self.tensors.clone() }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let config = config_from_meta(&c.meta)?;
        let params = ModelParams { config, tensors: c.tensors };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            n_filters: 6,
            segment_len: 4,
            hop: 2,
            spec_hidden: 3,
            noise_hidden: 2,
            speech_hidden: 2,
            enhance_dim: 3,
            classes: 3,
            window: 2,
            variant: Variant::CaAttLstm1,
        };
        let p = ModelParams::init(&cfg, 11).unwrap();
        let bytes = p.to_container().to_bytes();
        let back = ModelParams::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_container().to_bytes(), bytes);
    }

    #[test]
    fn corrupt_input_is_a_format_error() {
        assert!(matches!(Container::from_bytes(b"nope"), Err(Error::Format(_))));
        let mut bytes = Container::default().to_bytes();
        bytes.push(0);
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
        let c = Container { tensors: [("x".to_string(), Tensor::zeros(&[2]))].into(), ..Default::default() };
        let bytes = c.to_bytes();
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }
}
