//! Versioned single-file checkpoint container.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic        8 bytes  "DHZCKPT\0"
//! version      u32
//! header_len   u64
//! body_len     u64
//! header       JSON (CheckpointMeta + tensor index)
//! body         raw tensor bytes, in index order
//! digest       SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DHZCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Iff,
}

/// Training progress and provenance stored with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Optimization steps taken so far.
    pub iteration: u64,
    /// Completed epochs within `phase`.
    pub epoch: u64,
    /// Position inside the current epoch.
    pub cursor: usize,
    pub phase: Phase,
    pub d_updates: u64,
    pub g_optimizer_steps: u64,
    pub d_optimizer_steps: u64,
    /// Digest of the model configuration the parameters belong to.
    pub config_hash: String,
    /// Model configuration (JSON) so a checkpoint is self-describing.
    pub model_config: serde_json::Value,
    /// Training configuration at the time of saving.
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorIndex {
    section: String,
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorIndex>,
}

/// Named tensor groups plus metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub sections: BTreeMap<String, Vec<(String, Tensor)>>,
}

fn dtype_tag(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::InvalidArgument(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::InvalidArgument(format!("unsupported checkpoint dtype {other:?}"))),
    })
}

fn tensor_from_bytes(bytes: &[u8], dtype: &str, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let bad = || Error::CheckpointIntegrity(format!("tensor byte length {} does not match shape {shape:?}", bytes.len()));
    let t = match dtype {
        "f32" => {
            if bytes.len() != n * 4 {
                return Err(bad());
            }
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        "f64" => {
            if bytes.len() != n * 8 {
                return Err(bad());
            }
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::CheckpointIntegrity(format!("unknown dtype tag {other:?}"))),
    };
    Ok(t)
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        let mut index = Vec::new();
        for (section, tensors) in &self.sections {
            for (name, t) in tensors {
                let bytes = tensor_bytes(t)?;
                index.push(TensorIndex {
                    section: section.clone(),
                    name: name.clone(),
                    dtype: dtype_tag(t.dtype())?.to_string(),
                    shape: t.dims().to_vec(),
                    offset: body.len() as u64,
                    len: bytes.len() as u64,
                });
                body.extend_from_slice(&bytes);
            }
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: index,
        })?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + body.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN {
            return Err(Error::CheckpointTruncated(format!("{} bytes is shorter than the fixed prefix", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::CheckpointIntegrity("bad magic bytes".into()));
        }
        let version = read_u32(bytes, 8);
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = read_u64(bytes, 12);
        let body_len = read_u64(bytes, 20);
        let expected = (PREFIX_LEN as u128) + header_len as u128 + body_len as u128 + DIGEST_LEN as u128;
        if (bytes.len() as u128) < expected {
            return Err(Error::CheckpointTruncated(format!("file has {} bytes, header declares {expected}", bytes.len())));
        }
        if (bytes.len() as u128) > expected {
            return Err(Error::CheckpointIntegrity(format!("{} trailing bytes", bytes.len() as u128 - expected)));
        }
        let payload_end = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..payload_end]);
        if digest.as_slice() != &bytes[payload_end..] {
            return Err(Error::CheckpointIntegrity("SHA-256 digest mismatch".into()));
        }
        let header_end = PREFIX_LEN + header_len as usize;
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
            .map_err(|e| Error::CheckpointIntegrity(format!("header: {e}")))?;
        if header.meta.format_version != version {
            return Err(Error::CheckpointIntegrity("header and prefix versions differ".into()));
        }
        let body = &bytes[header_end..payload_end];
        let mut sections: BTreeMap<String, Vec<(String, Tensor)>> = BTreeMap::new();
        for ti in header.tensors {
            let start = ti.offset as usize;
            let end = start
                .checked_add(ti.len as usize)
                .filter(|&e| e <= body.len())
                .ok_or_else(|| Error::CheckpointIntegrity(format!("tensor {} out of bounds", ti.name)))?;
            let t = tensor_from_bytes(&body[start..end], &ti.dtype, &ti.shape)?;
            sections.entry(ti.section).or_default().push((ti.name, t));
        }
        Ok(Self {
            meta: header.meta,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn section(&self, name: &str) -> Result<&[(String, Tensor)]> {
        self.sections
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::CheckpointIntegrity(format!("missing section {name}")))
    }

    /// Rejects checkpoints produced for a different model configuration.
    pub fn check_config_hash(&self, expected: &str) -> Result<()> {
        if self.meta.config_hash != expected {
            return Err(Error::CheckpointConfig {
                found: self.meta.config_hash.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's canonical JSON serialization.
pub fn json_digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
