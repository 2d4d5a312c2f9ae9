//! Checkpoint file: a single JSON header line followed by the parameter
//! vector as little-endian IEEE-754 `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{LayerLayout, NetworkSpec};
use super::network::FrozenNormLayer;
use super::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub layout: LayerLayout,
    pub seed: u64,
    pub stage: usize,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<FrozenNormLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamVector<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(4 * self.params.len());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let format = |offset: usize, message: String| Error::Format {
            source_name: source_name.to_string(),
            offset: offset as u64,
            message,
        };
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format(bytes.len(), "missing header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| format(0, format!("bad header: {e}")))?;
        header.layout.validate()?;
        if LayerLayout::from_spec(&header.spec)? != header.layout {
            return Err(format(0, "layout does not match network spec".into()));
        }
        let body = &bytes[newline + 1..];
        let expected = 4 * header.layout.total_len();
        if body.len() != expected {
            return Err(format(
                newline + 1 + body.len().min(expected),
                format!("expected {expected} parameter bytes, found {}", body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let params = ParamVector::from_values(Arc::new(header.layout.clone()), values)?;
        Ok(Self { header, params })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}
