//! Single-file weights archive.
//!
//! Layout: magic `PSEGW001`, little-endian u32 header length, JSON header,
//! then every tensor as little-endian f32 in header order.

use super::net::{NetworkConfig, UNet};
use super::params::ParamStore;
use super::{Result, SegError};
use crate::promptsim::GuidanceConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PSEGW001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epoch of the kept (best-validation) checkpoint, 1-based; 0 for untrained weights.
    pub epoch: usize,
    pub seed: u64,
    pub patch_size: [usize; 3],
    pub guidance: GuidanceConfig,
    pub train_loss: Vec<f64>,
    pub val_dice: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: NetworkConfig,
    pub params: ParamStore<f32>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    fingerprint: String,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> SegError {
    SegError::Weights(msg.into())
}

impl ModelWeights {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            fingerprint: self.fingerprint(),
            metadata: self.metadata.clone(),
            tensors: self.params.iter().map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses an archive; when `expected` is given its fingerprint must match the stored one.
    pub fn from_bytes(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a weights file (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        let actual = header.config.fingerprint();
        if actual != header.fingerprint {
            return Err(SegError::Fingerprint { expected: actual, found: header.fingerprint });
        }
        if let Some(cfg) = expected {
            let want = cfg.fingerprint();
            if want != header.fingerprint {
                return Err(SegError::Fingerprint { expected: want, found: header.fingerprint });
            }
        }
        let mut params = ParamStore::new();
        let mut at = 12 + hlen;
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = bytes.get(at..at + 4 * n).ok_or_else(|| corrupt(format!("truncated tensor {}", t.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(t.name, t.shape, data);
            at += 4 * n;
        }
        if at != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - at)));
        }
        UNet::build(&header.config)?.check_params(&params)?;
        Ok(ModelWeights { config: header.config, params, metadata: header.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| SegError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| SegError::Io { path: path.to_owned(), source })?;
        Self::from_bytes(&bytes, expected)
    }
}

pub fn save_weights(path: &Path, w: &ModelWeights) -> Result<()> {
    w.save(path)
}

pub fn load_weights(path: &Path, expected: Option<&NetworkConfig>) -> Result<ModelWeights> {
    ModelWeights::load(path, expected)
}
