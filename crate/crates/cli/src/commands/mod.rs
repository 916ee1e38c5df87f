mod ablate;
mod eval;
mod gen_data;
mod inspect;
mod register;
mod synthesize;
mod train;

use std::path::PathBuf;

pub use ablate::ablate;
pub use eval::eval;
pub use gen_data::gen_data;
pub use inspect::inspect;
pub use register::register;
pub use synthesize::synthesize;
pub use train::train;

use i2a_core::geometry::Pose;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::run::{InputFile, OutputDir, RunMetadata};

/// Resolved configuration and invocation.
pub struct Context {
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub args: Vec<String>,
}

impl Context {
    pub fn output(&self) -> CliResult<OutputDir> {
        match &self.config.out_dir {
            Some(dir) => OutputDir::acquire(dir),
            None => Err(CliError::Usage(
                "no output directory: pass --out, set I2A_OUT or set out_dir in the config".into(),
            )),
        }
    }

    pub fn metadata(&self, command: &str) -> CliResult<RunMetadata> {
        let mut meta = RunMetadata::new(command, self.args.clone(), Some(&self.config));
        if let Some(p) = &self.config_path {
            meta.inputs.push(InputFile::hash(p)?);
        }
        Ok(meta)
    }
}

pub fn matrix_rows(p: &Pose) -> [[f64; 4]; 4] {
    p.to_rows()
}

pub fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    println!("{text}");
    Ok(())
}

/// Stable float text: shortest representation that round-trips.
pub fn num(x: f64) -> String {
    format!("{x}")
}
