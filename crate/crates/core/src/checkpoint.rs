//! Binary checkpoint format (version 1), all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "GAPCKPT\0"
//! version  u32       1
//! config   u32 length + UTF-8 JSON of ModelConfig
//! count    u32       number of tensors
//! tensor*  u32 name length, UTF-8 name, u32 rows, u32 cols,
//!          rows*cols f64 values in row-major order
//! ```
//!
//! Tensors are written in parameter order, so identical models produce
//! identical files.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"GAPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, model.params.len());
    for (_, name, m) in model.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, m.rows);
        put_u32(&mut out, m.cols);
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    buf: &'b [u8],
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let cfg_json = r.string()?;
    let config: ModelConfig =
        serde_json::from_str(&cfg_json).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.id(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor `{name}`")));
        }
        store.add(name, Matrix::from_vec(rows, cols, data));
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(Model::from_params(config, store)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
