//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, u32 format version, u64-length-prefixed JSON
//! header (provenance + model config), then every tensor in parameter
//! declaration order as (u32 name length, name bytes, u32 rank, u64
//! extents, raw little-endian f64 data). Loading rebuilds the config from
//! the header and validates each tensor's name and shape against it, so a
//! checkpoint from a different architecture fails with the offending
//! tensor named rather than loading garbage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::Parameters;
use crate::numerics::tensor::Tensor;
use crate::provenance::{Provenance, FORMAT_VERSION};

const MAGIC: &[u8; 8] = b"DMTTSCKP";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkptHeader {
    pub provenance: Provenance,
    pub config: ModelConfig,
}

/// Serializes the model to `path`, refusing to overwrite unless `force`.
pub fn save_checkpoint(
    path: &Path,
    params: &Parameters,
    cfg: &ModelConfig,
    force: bool,
) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Checkpoint(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if !params.is_all_finite() {
        return Err(Error::Numeric("refusing to checkpoint non-finite parameters".into()));
    }
    let header = CkptHeader {
        provenance: Provenance::new(cfg, cfg.seed)?,
        config: cfg.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut buf = Vec::with_capacity(64 + header_json.len() + params.n_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    params.for_each_tensor(|name, t| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    });
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, returning the parameters alongside the header it
/// was saved with.
pub fn load_checkpoint(path: &Path) -> Result<(Parameters, CkptHeader)> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = cur.u64("header length")? as usize;
    let header: CkptHeader = serde_json::from_slice(cur.take(header_len, "header")?)?;
    header.config.validate()?;

    let mut params = Parameters::zeros(&header.config);
    let mut err: Option<Error> = None;
    params.for_each_tensor_mut(|name, t| {
        if err.is_some() {
            return;
        }
        if let Err(e) = read_tensor_into(&mut cur, name, t) {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if cur.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            buf.len() - cur.pos
        )));
    }
    Ok((params, header))
}

fn read_tensor_into(cur: &mut Cursor, want_name: &str, t: &mut Tensor) -> Result<()> {
    let name_len = cur.u32("tensor name length")? as usize;
    let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
        .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
    if name != want_name {
        return Err(Error::Checkpoint(format!(
            "expected tensor {want_name}, found {name}"
        )));
    }
    let rank = cur.u32("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.u64("tensor extent")? as usize);
    }
    if shape != t.shape() {
        return Err(Error::Checkpoint(format!(
            "tensor {want_name}: shape {:?} does not match config shape {:?}",
            shape,
            t.shape()
        )));
    }
    let raw = cur.take(t.numel() * 8, "tensor data")?;
    for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
        *dst = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(())
}
