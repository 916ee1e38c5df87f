use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{PolicyConfig, PolicyParams};
use super::train::{EpochStats, TrainConfig, Trainer};
use super::PolicyError;
use crate::nn::{Adam, Parameters};

pub const CHECKPOINT_FORMAT: &str = "i2a-policy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements within the parameter section.
    pub offset: usize,
}

/// JSON side of a checkpoint. The blob holds little-endian f32 parameters,
/// then the Adam first moments, then the second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub stats: Vec<EpochStats>,
    pub tensors: Vec<TensorEntry>,
    pub blob: String,
    pub sha256: String,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path, e: std::io::Error) -> PolicyError {
    PolicyError::Checkpoint(format!("{}: {e}", path.display()))
}

/// Writes `<path>` (manifest) and `<path>.bin` (blob). Each file is written
/// to a temporary name and renamed into place.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<CheckpointManifest, PolicyError> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    trainer.params.visit("", &mut |name, shape, data| {
        tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
    });
    let flat = trainer.params.flatten();
    let mut bytes = Vec::with_capacity(12 * flat.len());
    for section in [&flat, &trainer.adam.m, &trainer.adam.v] {
        for v in section.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        policy: trainer.policy,
        train: trainer.train,
        epoch: trainer.epoch,
        step: trainer.adam.step,
        stats: trainer.history.clone(),
        tensors,
        blob: blob
            .file_name()
            .expect("file name")
            .to_string_lossy()
            .into_owned(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    write_atomic(&blob, &bytes)?;
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    write_atomic(path, &json)?;
    Ok(manifest)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PolicyError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest, PolicyError> {
    let text = fs::read(path).map_err(|e| io_err(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)
        .map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Restores a trainer exactly as it was saved.
pub fn load_checkpoint(path: &Path) -> Result<Trainer, PolicyError> {
    let manifest = read_manifest(path)?;
    let blob = path.parent().unwrap_or(Path::new("")).join(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| io_err(&blob, e))?;
    if hex(&Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(PolicyError::ChecksumMismatch(blob));
    }
    let mut trainer = Trainer::new(manifest.policy, manifest.train)?;
    let n = trainer.params.num_parameters();
    if bytes.len() != 12 * n {
        return Err(PolicyError::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            blob.display(),
            12 * n,
            bytes.len()
        )));
    }
    let mut expected = Vec::new();
    let mut offset = 0;
    trainer.params.visit("", &mut |name, shape, data| {
        expected.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
    });
    if expected != manifest.tensors {
        return Err(PolicyError::Checkpoint(
            "tensor layout does not match the configuration".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    trainer.params.load_flat(&values[..n]);
    trainer.adam = Adam {
        config: manifest.train.adam,
        m: values[n..2 * n].to_vec(),
        v: values[2 * n..].to_vec(),
        step: manifest.step,
    };
    trainer.epoch = manifest.epoch;
    trainer.history = manifest.stats;
    Ok(trainer)
}

/// Parameters only, for evaluation.
pub fn load_policy(path: &Path) -> Result<(PolicyConfig, PolicyParams), PolicyError> {
    let t = load_checkpoint(path)?;
    Ok((t.policy, t.params))
}
