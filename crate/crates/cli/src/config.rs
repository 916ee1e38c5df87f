use std::path::{Path, PathBuf};

use i2a_core::benchmark::{AblationConfig, AblationSettings, TaskSpec, PEG_IN_HOLE, PRESET_NAMES};
use i2a_core::policy::{PolicyConfig, TrainConfig};
use i2a_core::synthesis::AdapterNoise;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Everything a command needs besides its input artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Task ids, see `i2a inspect` on a config for the list.
    pub tasks: Vec<String>,
    /// Base seed for scenes, training and sampling.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    /// Named variant (`Ex0`..`Ex5` or an entry of `variants`) used by
    /// `gen-data`, `train` and `eval`.
    pub variant: String,
    pub data: DataConfig,
    pub noise: AdapterNoise,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub variants: Vec<VariantConfig>,
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_demos: usize,
    pub num_eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = AblationSettings::default();
        Self {
            num_demos: s.num_demos,
            num_eval: s.num_eval,
        }
    }
}

/// A user-defined row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    #[serde(default)]
    pub use_imagined_goal: bool,
    #[serde(default)]
    pub use_gt_goal: bool,
    #[serde(default)]
    pub use_transformation_token: bool,
    #[serde(default)]
    pub use_soft_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub configs: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            configs: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: (0..5).collect(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tasks: vec![PEG_IN_HOLE.to_string()],
            seed: 0,
            out_dir: None,
            threads: 1,
            variant: "Ex5".into(),
            data: DataConfig::default(),
            noise: AdapterNoise::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            variants: Vec::new(),
            ablation: AblationSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML file. Errors name the offending field.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::config(path, "<document>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::config(path, field, e.into_inner().message())
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn validate(&self, path: &Path) -> CliResult<()> {
        let bad =
            |field: &str, msg: &dyn ToString| Err(CliError::config(path, field, msg.to_string()));
        if self.tasks.is_empty() {
            return bad("tasks", &"at least one task is required");
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if let Err(e) = TaskSpec::builtin(t) {
                return bad(&format!("tasks[{i}]"), &e);
            }
        }
        if self.threads == 0 {
            return bad("threads", &"must be at least 1");
        }
        if self.data.num_demos == 0 {
            return bad("data.num_demos", &"must be at least 1");
        }
        if self.data.num_eval == 0 {
            return bad("data.num_eval", &"must be at least 1");
        }
        if let Err(e) = self.noise.validate() {
            return bad("noise", &e);
        }
        if let Err(e) = self.policy.validate() {
            return bad("policy", &e);
        }
        if let Err(e) = self.train.loss.validate() {
            return bad("train.loss", &e);
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", &"must be positive");
        }
        for (i, v) in self.variants.iter().enumerate() {
            if PRESET_NAMES.contains(&v.name.as_str()) {
                return bad(
                    &format!("variants[{i}].name"),
                    &format!("`{}` is a built-in variant", v.name),
                );
            }
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return bad(
                    &format!("variants[{i}].name"),
                    &format!("duplicate variant `{}`", v.name),
                );
            }
            if let Err(e) = self.ablation_config(&v.name, vec![0]).map(|c| c.validate()) {
                return bad(&format!("variants[{i}]"), &e);
            }
        }
        match self.ablation_config(&self.variant, vec![self.seed]) {
            Ok(c) => {
                if let Err(e) = c.validate() {
                    return bad("variant", &e);
                }
            }
            Err(e) => return bad("variant", &e),
        }
        if self.ablation.seeds.is_empty() {
            return bad("ablation.seeds", &"at least one seed is required");
        }
        for (i, name) in self.ablation.configs.iter().enumerate() {
            if let Err(e) = self.ablation_config(name, self.ablation.seeds.clone()) {
                return bad(&format!("ablation.configs[{i}]"), &e);
            }
            if self.ablation.configs[..i].contains(name) {
                return bad(
                    &format!("ablation.configs[{i}]"),
                    &format!("duplicate config `{name}`"),
                );
            }
        }
        Ok(())
    }

    /// The named variant with this config's noise and the given seeds.
    pub fn ablation_config(&self, name: &str, seeds: Vec<u64>) -> Result<AblationConfig, String> {
        if let Some(v) = self.variants.iter().find(|v| v.name == name) {
            return Ok(AblationConfig {
                name: v.name.clone(),
                use_imagined_goal: v.use_imagined_goal,
                use_gt_goal: v.use_gt_goal,
                use_transformation_token: v.use_transformation_token,
                use_soft_loss: v.use_soft_loss,
                noise: self.noise,
                seeds,
            });
        }
        AblationConfig::preset(name, self.noise, seeds).map_err(|e| e.to_string())
    }

    /// The variant selected by `variant`.
    pub fn selected_variant(&self) -> AblationConfig {
        self.ablation_config(&self.variant, vec![self.seed])
            .expect("validated on load")
    }

    pub fn settings(&self) -> AblationSettings {
        AblationSettings {
            num_demos: self.data.num_demos,
            num_eval: self.data.num_eval,
            policy: self.policy,
            train: self.train,
        }
    }

    /// Policy and training settings after applying the selected variant.
    pub fn variant_settings(&self) -> (PolicyConfig, TrainConfig) {
        let v = self.selected_variant();
        let mut policy = self.policy;
        policy.use_transformation_token = v.use_transformation_token;
        let mut train = self.train;
        train.use_soft_loss = v.use_soft_loss;
        train.seed = self.seed;
        (policy, train)
    }

    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks
            .iter()
            .map(|t| TaskSpec::builtin(t).expect("validated on load"))
            .collect()
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
