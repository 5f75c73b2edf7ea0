//! Binary checkpoint: the magic `MSCRv1`, a little-endian u64 header length,
//! the JSON header, then every tensor as little-endian f64 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Parameterized, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"MSCRv1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model family, e.g. `crnn` or `segmenter`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    /// Training metric history.
    pub history: serde_json::Value,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// Snapshot every parameter of `model`, named `p<index>`.
    pub fn from_model(
        kind: &str,
        config: serde_json::Value,
        model: &impl Parameterized,
        history: serde_json::Value,
        extra: serde_json::Value,
    ) -> Self {
        let params = model.params();
        Self {
            header: CheckpointHeader {
                kind: kind.to_string(),
                config,
                tensors: params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| TensorEntry {
                        name: format!("p{i}"),
                        shape: p.value.shape().to_vec(),
                    })
                    .collect(),
                history,
                extra,
            },
            tensors: params.iter().map(|p| p.value.clone()).collect(),
        }
    }

    /// Copy the stored tensors into a model of the same architecture.
    pub fn restore_into(&self, model: &mut impl Parameterized) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {} parameters",
                self.tensors.len(),
                params.len()
            )));
        }
        for (i, (p, t)) in params.iter_mut().zip(&self.tensors).enumerate() {
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor p{i}: stored {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.header.tensors.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} tensors, {} supplied",
                self.header.tensors.len(),
                self.tensors.len()
            )));
        }
        for (entry, t) in self.header.tensors.iter().zip(&self.tensors) {
            if entry.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} declared {:?}, has {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
        }
        let header = serde_json::to_vec(&self.header)?;
        let total: usize = self.tensors.iter().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing MSCRv1 magic"));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[6..14]);
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let body = &bytes[14..];
        if body.len() < header_len {
            return Err(corrupt("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut blob = &body[header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if blob.len() < n * 8 {
                return Err(Error::Checkpoint(format!("truncated tensor {}", entry.name)));
            }
            let data = blob[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            blob = &blob[n * 8..];
            tensors.push(Tensor::new(&entry.shape, data)?);
        }
        if !blob.is_empty() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
