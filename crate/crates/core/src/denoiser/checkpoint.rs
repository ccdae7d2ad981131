//! Single-file checkpoints.
//!
//! ```text
//! FRAMEFILL-CKPT\n
//! u64 little-endian header length
//! header (JSON): version, model config, schedule, digests, seed, tensor table
//! parameter blob: f32 little-endian, tensors in table order
//! ```

use std::fs;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::{UNetConfig, UNetDenoiser};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"FRAMEFILL-CKPT\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: UNetConfig,
    schedule_alphas: Vec<f64>,
    schedule_digest: String,
    seed: u64,
    config_digest: Option<String>,
    tensors: Vec<TensorEntry>,
    blob_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// A trained model together with the schedule it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNetDenoiser,
    pub schedule: NoiseSchedule,
    /// Training seed.
    pub seed: u64,
    pub config_digest: Option<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.parameters_f32()?;
        let mut blob = Vec::new();
        let mut tensors = Vec::with_capacity(params.len());
        for (name, shape, values) in params {
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry { name, shape });
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.config().clone(),
            schedule_alphas: self.schedule.alphas().to_vec(),
            schedule_digest: self.schedule.digest(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            tensors,
            blob_sha256: sha256_hex(&blob),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format("not a framefill checkpoint".into()))?;
        if rest.len() < 8 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < len {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&rest[..len])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointCompat(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let blob = &rest[len..];
        if sha256_hex(blob) != header.blob_sha256 {
            return Err(Error::Integrity(
                "checkpoint parameter digest mismatch".into(),
            ));
        }
        let schedule = NoiseSchedule::from_alphas(header.schedule_alphas)?;
        if schedule.digest() != header.schedule_digest {
            return Err(Error::Integrity(
                "checkpoint schedule digest mismatch".into(),
            ));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset + 4 * n;
            if end > blob.len() {
                return Err(Error::Integrity(
                    "checkpoint blob shorter than its table".into(),
                ));
            }
            let values = blob[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push((entry.name, entry.shape, values));
            offset = end;
        }
        if offset != blob.len() {
            return Err(Error::Integrity(
                "checkpoint blob longer than its table".into(),
            ));
        }
        let mut model = UNetDenoiser::from_parameters(header.model, DType::F32, tensors)?;
        model.set_schedule(&schedule);
        Ok(Self {
            model,
            schedule,
            seed: header.seed,
            config_digest: header.config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Check that this checkpoint can seed a model with `config` trained
    /// under `schedule`.
    pub fn check_compatible(&self, config: &UNetConfig, schedule: &NoiseSchedule) -> Result<()> {
        if self.model.config() != config {
            return Err(Error::CheckpointCompat(format!(
                "checkpoint model {:?} differs from configured model {:?}",
                self.model.config(),
                config
            )));
        }
        if self.schedule.digest() != schedule.digest() {
            return Err(Error::CheckpointCompat(
                "checkpoint was trained under a different noise schedule".into(),
            ));
        }
        Ok(())
    }
}
