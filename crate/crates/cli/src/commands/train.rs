use std::path::Path;

use i2a_core::benchmark::demonstration_samples;
use i2a_core::policy::{
    load_checkpoint, save_checkpoint, CheckpointManifest, EpochStats, PolicyConfig, PolicyError,
    TrainConfig, Trainer, TrainingSample, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
use serde::Serialize;
use serde_json::Value;

use super::{num, Context};
use crate::dataset::{self, parse_json};
use crate::error::{CliError, CliResult};
use crate::run::{read_file, InputFile, TRAINING_NOTE};

pub const CHECKPOINT_FILE: &str = "policy.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,l_diff,l_soft,lambda_pose,total";

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&format!("{prefix}.{k}"), x, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Dotted paths where two serialized values disagree.
fn differences<T: Serialize>(prefix: &str, saved: &T, wanted: &T) -> Vec<String> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    flatten(
        prefix,
        &serde_json::to_value(saved).expect("serializable"),
        &mut a,
    );
    flatten(
        prefix,
        &serde_json::to_value(wanted).expect("serializable"),
        &mut b,
    );
    a.iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|((k, x), (_, y))| format!("{k}: checkpoint {x}, config {y}"))
        .collect()
}

/// Loads a checkpoint after checking it was trained with `policy` (and
/// `train`, when resuming).
pub fn load_compatible(
    path: &Path,
    policy: &PolicyConfig,
    train: Option<&TrainConfig>,
) -> CliResult<Trainer> {
    let incompatible = |detail: String| CliError::CheckpointIncompatible {
        path: path.to_path_buf(),
        detail,
    };
    let manifest: CheckpointManifest = parse_json(path, &read_file(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(incompatible(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut diffs = differences("policy", &manifest.policy, policy);
    if let Some(t) = train {
        diffs.extend(differences("train", &manifest.train, t));
    }
    if !diffs.is_empty() {
        return Err(incompatible(diffs.join("; ")));
    }
    load_checkpoint(path).map_err(|e| match e {
        PolicyError::ChecksumMismatch(p) => CliError::ChecksumMismatch { path: p },
        other => incompatible(other.to_string()),
    })
}

/// Per-epoch log. `total` is the optimized objective as accumulated during
/// the epoch.
pub fn log_csv(history: &[EpochStats], lambda_pose: f64) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for s in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch,
            num(s.l_diff),
            num(s.l_soft),
            num(lambda_pose),
            num(s.loss)
        ));
    }
    out
}

pub fn train(
    ctx: &Context,
    data: &Path,
    resume: Option<&Path>,
    stop_after: Option<usize>,
) -> CliResult<()> {
    let cfg = &ctx.config;
    let variant = cfg.selected_variant();
    let (policy, train) = ctx.config.variant_settings();
    let out = ctx.output()?;

    let (manifest, demos) = dataset::load(data)?;
    let config_path = ctx.config_path.clone().unwrap_or_default();
    if manifest.goal_mode != variant.goal_mode() || manifest.noise != variant.noise {
        return Err(CliError::config(
            config_path,
            "variant",
            format!(
                "dataset was generated for `{}` ({:?} goals), config selects `{}`",
                manifest.variant, manifest.goal_mode, variant.name
            ),
        ));
    }
    for d in &demos {
        if d.spec.task_index() >= policy.num_tasks {
            return Err(CliError::config(
                config_path,
                "policy.num_tasks",
                format!(
                    "task `{}` needs at least {} tasks",
                    d.spec.task_id,
                    d.spec.task_index() + 1
                ),
            ));
        }
    }
    let samples: Vec<TrainingSample> = demos
        .iter()
        .flat_map(|d| demonstration_samples(&policy, &d.spec, &d.demo, &d.goal))
        .collect();

    let mut trainer = match resume {
        Some(p) => load_compatible(p, &policy, Some(&train))?,
        None => Trainer::new(policy, train).map_err(anyhow::Error::from)?,
    };
    let lambda = train.effective_loss().lambda_pose;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let limit = stop_after.unwrap_or(usize::MAX);
    let mut ran = false;
    while !trainer.is_done() && trainer.epoch < limit {
        let s = trainer.run_epoch(&samples).map_err(anyhow::Error::from)?;
        eprintln!(
            "epoch {:>4}  l_diff {:.6}  l_soft {:.6}  total {:.6}",
            s.epoch, s.l_diff, s.l_soft, s.loss
        );
        save_checkpoint(&trainer, &checkpoint).map_err(anyhow::Error::from)?;
        out.write(LOG_FILE, log_csv(&trainer.history, lambda).as_bytes())?;
        ran = true;
    }
    if !ran {
        save_checkpoint(&trainer, &checkpoint).map_err(anyhow::Error::from)?;
        out.write(LOG_FILE, log_csv(&trainer.history, lambda).as_bytes())?;
    }

    let mut meta = ctx.metadata("train")?;
    meta.inputs
        .push(InputFile::hash(&dataset::manifest_path(data))?);
    if let Some(p) = resume {
        meta.inputs.push(InputFile::hash(p)?);
    }
    meta.notes.push(TRAINING_NOTE);
    out.write_metadata(&meta)
}
