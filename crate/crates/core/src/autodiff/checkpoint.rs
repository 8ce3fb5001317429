//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 8            | magic `SSDSCKPT`                          |
//! | 4            | version (`u32`, currently 1)              |
//! | 4            | affine layer count `L` (`u32`)            |
//! | 8 · L        | per layer: `out_dim: u32`, `in_dim: u32`  |
//! | 8 · params   | `f64` parameters in flattening order      |
//!
//! ReLU activations between affine layers are implied.

use std::io::Write;
use std::path::Path;

use super::mlp::{MlpArchitecture, MlpModel};
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"SSDSCKPT";
pub const VERSION: u32 = 1;

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let layouts = model.architecture().affine_layouts();
    let mut out = Vec::with_capacity(16 + 8 * layouts.len() + 8 * model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layouts.len() as u32).to_le_bytes());
    for l in &layouts {
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<MlpModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(CheckpointError::BadShapes("zero layers".into()));
    }
    let mut sizes = Vec::with_capacity(count + 1);
    for i in 0..count {
        let out_dim = r.u32()? as usize;
        let in_dim = r.u32()? as usize;
        if i == 0 {
            sizes.push(in_dim);
        } else if sizes[i] != in_dim {
            return Err(CheckpointError::BadShapes(format!(
                "layer {i} takes {in_dim} inputs but previous layer emits {}",
                sizes[i]
            )));
        }
        sizes.push(out_dim);
    }
    let arch = MlpArchitecture::new(sizes).map_err(|e| CheckpointError::BadShapes(e.to_string()))?;
    let n = arch.param_count();
    let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(MlpModel::from_params(arch, params).expect("count matches architecture"))
}

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MlpModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
