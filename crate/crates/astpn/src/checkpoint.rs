//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian: magic `ASTP`, `u32` format version,
//! `u64` identity count, then one record per tensor until end of file:
//! `u32` name length, UTF-8 name, `u32` rank, `rank` x `u64` extents and the
//! raw `f64` payload.

use std::fs;
use std::path::Path;

use astpn_core::model::{AstpnParams, ModelConfig};
use astpn_core::Tensor;

use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"ASTP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub classes: usize,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(params: &AstpnParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.classes() as u64).to_le_bytes());
    for (name, t) in params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated file at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| "file too short for a checkpoint header")? != MAGIC {
        return Err("bad magic bytes, not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}, expected {VERSION}"));
    }
    let classes = r.u64()? as usize;
    let mut tensors = Vec::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| format!("tensor `{name}` extents overflow"))?;
        let data = r
            .take(numel)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| format!("tensor `{name}`: {e}"))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { classes, tensors })
}

pub fn decode(bytes: &[u8], path: &Path) -> AppResult<Checkpoint> {
    parse(bytes).map_err(|msg| AppError::Format {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn save(path: &Path, params: &AstpnParams) -> AppResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, encode(params)).map_err(|e| AppError::io(path, e))
}

pub fn read(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

impl Checkpoint {
    /// Builds parameters, checking every tensor against the architecture
    /// for `classes` identities.
    pub fn into_params_for(self, cfg: &ModelConfig, classes: usize, frame_hw: (usize, usize)) -> AppResult<AstpnParams> {
        let expected = AstpnParams::expected_shapes(cfg, classes, frame_hw);
        Ok(AstpnParams::from_named(self.tensors, &expected)?)
    }

    /// As [`Checkpoint::into_params_for`] with the stored identity count.
    pub fn into_params(self, cfg: &ModelConfig, frame_hw: (usize, usize)) -> AppResult<AstpnParams> {
        let k = self.classes;
        self.into_params_for(cfg, k, frame_hw)
    }
}

/// Reads a checkpoint and checks it against the architecture.
pub fn load(path: &Path, cfg: &ModelConfig, frame_hw: (usize, usize)) -> AppResult<AstpnParams> {
    read(path)?.into_params(cfg, frame_hw)
}
