//! Output directories: the writer lock and run metadata.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use i2a_core::io::CONTAINER_VERSION;
use i2a_core::policy::CHECKPOINT_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::dataset::DATASET_VERSION;
use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".lock";
pub const RUN_FILE: &str = "run.json";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| CliError::io(&lock, e))?;
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(CliError::Locked {
                    dir: path.to_path_buf(),
                    lock,
                })
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.path.join(name)
    }

    /// Writes through a temporary file so readers never see partial output.
    pub fn write(&self, name: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn write_metadata(&self, meta: &RunMetadata) -> CliResult<()> {
        let mut json = serde_json::to_vec_pretty(meta).map_err(anyhow::Error::from)?;
        json.push(b'\n');
        self.write(RUN_FILE, &json).map(|_| ())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FormatVersions {
    pub i2a: &'static str,
    pub dataset: u32,
    pub checkpoint: u32,
    pub observation: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        Self {
            i2a: env!("CARGO_PKG_VERSION"),
            dataset: DATASET_VERSION,
            checkpoint: CHECKPOINT_VERSION,
            observation: CONTAINER_VERSION,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> CliResult<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&read_file(path)?),
        })
    }
}

/// Everything needed to repeat a command exactly.
#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub args: Vec<String>,
    pub config_sha256: Option<String>,
    pub config: Option<ExperimentConfig>,
    pub seed: u64,
    pub threads: usize,
    pub versions: FormatVersions,
    pub inputs: Vec<InputFile>,
    pub notes: Vec<&'static str>,
}

pub const TRAINING_NOTE: &str =
    "soft pose loss is applied to the clean-action estimate at every training step";

impl RunMetadata {
    pub fn new(command: &str, args: Vec<String>, config: Option<&ExperimentConfig>) -> Self {
        Self {
            command: command.into(),
            args,
            config_sha256: config.map(|c| c.hash()),
            config: config.cloned(),
            seed: config.map_or(0, |c| c.seed),
            threads: config.map_or(1, |c| c.threads),
            versions: FormatVersions::default(),
            inputs: Vec::new(),
            notes: Vec::new(),
        }
    }
}
