//! Demonstration datasets on disk.
//!
//! ```text
//! manifest.json
//! demos/<task>/<scene seed>.json
//! frames/<task>/<scene seed>_<step>.obs
//! goals/<task>/<scene seed>.obs
//! ```
//!
//! The manifest lists every file with its SHA-256. Nothing in the dataset
//! depends on wall-clock time, so regenerating with the same config rewrites
//! identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use i2a_core::benchmark::{
    collect_demonstrations, goal_context, Demonstration, GoalContext, GoalMode, TaskSpec,
    SEED_STRIDE,
};
use i2a_core::geometry::{Pose, SceneObservation};
use i2a_core::io::{read_observation, write_observation};
use i2a_core::synthesis::AdapterNoise;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::run::{read_file, sha256_hex, OutputDir};

pub const DATASET_FORMAT: &str = "i2a-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub variant: String,
    pub goal_mode: GoalMode,
    pub noise: AdapterNoise,
    pub entries: Vec<DatasetEntry>,
    /// Relative path to SHA-256 of every file except the manifest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub task_id: String,
    pub scene_seed: u64,
    pub record: String,
}

/// One demonstration with its goal conditioning. Frames live in separate
/// observation containers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub task_id: String,
    pub scene_seed: u64,
    pub demonstration: Demonstration,
    pub frames: Vec<String>,
    pub goal_observation: Option<String>,
    pub object_transform: Option<Pose>,
}

/// A loaded dataset entry.
pub struct LoadedDemo {
    pub spec: TaskSpec,
    pub demo: Demonstration,
    pub goal: GoalContext,
}

fn encode_observation(obs: &SceneObservation) -> Vec<u8> {
    let mut buf = Vec::new();
    write_observation(&mut buf, obs).expect("writing to memory");
    buf
}

/// Generates demonstrations and goal contexts for every task of `cfg`.
pub fn generate(cfg: &ExperimentConfig, out: &OutputDir) -> CliResult<DatasetManifest> {
    let variant = cfg.selected_variant();
    let mode = variant.goal_mode();
    let mut files = BTreeMap::new();
    let mut entries = Vec::new();
    let mut put = |rel: String, bytes: Vec<u8>| -> CliResult<String> {
        out.write(&rel, &bytes)?;
        files.insert(rel.clone(), sha256_hex(&bytes));
        Ok(rel)
    };
    for spec in cfg.task_specs() {
        let base = cfg.seed.wrapping_mul(SEED_STRIDE);
        let demos =
            collect_demonstrations(&spec, base, cfg.data.num_demos).map_err(anyhow::Error::from)?;
        for (scene_seed, demo) in demos {
            let goal = goal_context(&spec, &demo.ground_truth, scene_seed, mode, &variant.noise)
                .map_err(anyhow::Error::from)?;
            let task = &spec.task_id;
            let mut frames = Vec::new();
            for (t, obs) in demo.observations.iter().enumerate() {
                frames.push(put(
                    format!("frames/{task}/{scene_seed}_{t}.obs"),
                    encode_observation(obs),
                )?);
            }
            let goal_observation = match &goal.observation {
                Some(obs) => Some(put(
                    format!("goals/{task}/{scene_seed}.obs"),
                    encode_observation(obs),
                )?),
                None => None,
            };
            let record = DemoRecord {
                task_id: task.clone(),
                scene_seed,
                demonstration: demo,
                frames,
                goal_observation,
                object_transform: goal.object_transform,
            };
            let mut json = serde_json::to_vec_pretty(&record).map_err(anyhow::Error::from)?;
            json.push(b'\n');
            let rel = put(format!("demos/{task}/{scene_seed}.json"), json)?;
            entries.push(DatasetEntry {
                task_id: task.clone(),
                scene_seed,
                record: rel,
            });
        }
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: cfg.seed,
        variant: variant.name.clone(),
        goal_mode: mode,
        noise: variant.noise,
        entries,
        files,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(anyhow::Error::from)?;
    json.push(b'\n');
    out.write(MANIFEST_FILE, &json)?;
    Ok(manifest)
}

/// Byte offset of a serde_json error within `bytes`.
pub fn json_error_offset(bytes: &[u8], e: &serde_json::Error) -> u64 {
    if e.line() == 0 {
        return bytes.len() as u64;
    }
    let mut line = 1;
    for (i, b) in bytes.iter().enumerate() {
        if line == e.line() {
            return (i + e.column().saturating_sub(1)).min(bytes.len()) as u64;
        }
        if *b == b'\n' {
            line += 1;
        }
    }
    bytes.len() as u64
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::UnknownFormat {
        path: path.to_path_buf(),
        offset: json_error_offset(bytes, &e),
        reason: e.to_string(),
    })
}

/// Accepts a dataset directory or its manifest file.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let path = manifest_path(path);
    let bytes = read_file(&path)?;
    let manifest: DatasetManifest = parse_json(&path, &bytes)?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(CliError::UnknownFormat {
            path,
            offset: 0,
            reason: format!(
                "unsupported dataset {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    Ok(manifest)
}

/// Reads a dataset, verifying every checksum before decoding anything.
pub fn load(path: &Path) -> CliResult<(DatasetManifest, Vec<LoadedDemo>)> {
    let manifest_file = manifest_path(path);
    let root = manifest_file
        .parent()
        .unwrap_or(Path::new(""))
        .to_path_buf();
    let manifest = read_manifest(&manifest_file)?;
    let mut contents = BTreeMap::new();
    for (rel, sum) in &manifest.files {
        let p = root.join(rel);
        let bytes = read_file(&p)?;
        if &sha256_hex(&bytes) != sum {
            return Err(CliError::ChecksumMismatch { path: p });
        }
        contents.insert(rel.as_str(), bytes);
    }
    let fetch = |rel: &str| -> CliResult<&Vec<u8>> {
        contents.get(rel).ok_or_else(|| CliError::UnknownFormat {
            path: manifest_file.clone(),
            offset: 0,
            reason: format!("`{rel}` is not listed in the manifest"),
        })
    };
    let decode = |rel: &str| -> CliResult<SceneObservation> {
        read_observation(&fetch(rel)?[..]).map_err(|e| CliError::UnknownFormat {
            path: root.join(rel),
            offset: e.offset(),
            reason: e.to_string(),
        })
    };
    let mut demos = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let spec = TaskSpec::builtin(&entry.task_id).map_err(|e| CliError::UnknownFormat {
            path: manifest_file.clone(),
            offset: 0,
            reason: e.to_string(),
        })?;
        let record: DemoRecord = parse_json(&root.join(&entry.record), fetch(&entry.record)?)?;
        let mut demo = record.demonstration;
        demo.observations = record
            .frames
            .iter()
            .map(|f| decode(f))
            .collect::<CliResult<_>>()?;
        if demo.observations.len() != demo.actions.len() {
            return Err(CliError::UnknownFormat {
                path: root.join(&entry.record),
                offset: 0,
                reason: "frame count does not match the action count".into(),
            });
        }
        let goal = GoalContext {
            observation: record.goal_observation.as_deref().map(decode).transpose()?,
            object_transform: record.object_transform,
        };
        demos.push(LoadedDemo { spec, demo, goal });
    }
    Ok((manifest, demos))
}
