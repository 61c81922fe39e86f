//! `WAMLCKPT` parameter files.
//!
//! Layout, little-endian: magic, `u32` version, `u32` length + UTF-8 config
//! echo, `u32` tensor count, then per tensor `u32` name length, name,
//! `u32 rows`, `u32 cols` and `rows * cols` `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::io::Reader;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WAMLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub echo: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, config: &ModelConfig, echo: &str) -> Self {
        let tensors = params
            .specs(&config.head)
            .into_iter()
            .zip(params.tensors())
            .map(|(spec, t)| (spec.name, t.clone()))
            .collect();
        Self {
            echo: echo.to_string(),
            tensors,
        }
    }

    pub fn into_params(self, node_count: usize, config: &ModelConfig) -> Result<ModelParams> {
        ModelParams::from_named(self.tensors, node_count, config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut buf, &self.echo);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let echo = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if !r.at_end() {
            return Err(Error::data("trailing bytes after checkpoint tensors"));
        }
        Ok(Self { echo, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}
