//! Checkpoint files: an 8-byte magic, a little-endian u32 format version,
//! a u64 header length, a JSON header, then every parameter as
//! little-endian f32 in layout order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{Layout, TensorInfo};
use super::scalar::Scalar;
use super::Model;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"POLYMTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: usize,
    tensors: Vec<TensorInfo>,
}

impl<S: Scalar> Model<S> {
    pub fn to_bytes(&self, step: usize) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            step,
            tensors: self.layout.tensors.clone(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for &p in &self.params {
            out.extend_from_slice(&(p.to_f64() as f32).to_le_bytes());
        }
        Ok(out)
    }

    /// Returns the model and the training step it was saved at.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let bad = |d: &str| Error::format("checkpoint", d.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if layout.tensors != header.tensors {
            return Err(bad("tensor table does not match the configuration"));
        }
        if r.len() != 4 * layout.total {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} parameter bytes, found {}", 4 * layout.total, r.len()),
            ));
        }
        let params = r
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok((Model::from_params(header.config, params)?, header.step))
    }

    pub fn save(&self, path: &Path, step: usize) -> Result<()> {
        let bytes = self.to_bytes(step)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
