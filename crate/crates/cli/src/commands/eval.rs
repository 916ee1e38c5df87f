use std::path::Path;

use i2a_core::benchmark::{
    goal_context, run_episodes, sample_truth, Controller, EpisodeOutcome, ExpertController,
    PolicyController, RandomController, SceneTruth, EVAL_OFFSET, SEED_STRIDE,
};

use super::train::load_compatible;
use super::{num, Context};
use crate::error::{CliError, CliResult};
use crate::run::InputFile;
use crate::EvalMode;

pub const RESULTS_HEADER: &str = "task_id,mode,config_name,seed,n_eval,n_success,success_rate";
pub const EPISODES_HEADER: &str =
    "task_id,episode,scene_seed,success,translation_error,rotation_error";

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Policy => "policy",
        EvalMode::Expert => "expert",
        EvalMode::Random => "random",
    }
}

/// Success rates on the held-out scenes of the config seed. Low success is
/// reported, never an error.
pub fn eval(ctx: &Context, checkpoint: Option<&Path>, mode: EvalMode) -> CliResult<()> {
    let cfg = &ctx.config;
    let variant = cfg.selected_variant();
    let (policy, _) = cfg.variant_settings();
    let trainer = match (mode, checkpoint) {
        (EvalMode::Policy, Some(p)) => Some(load_compatible(p, &policy, None)?),
        (EvalMode::Policy, None) => {
            return Err(CliError::Usage("--mode policy needs --checkpoint".into()))
        }
        _ => None,
    };
    let out = ctx.output()?;

    let base = cfg.seed.wrapping_mul(SEED_STRIDE) + EVAL_OFFSET;
    let mut results = String::from(RESULTS_HEADER);
    results.push('\n');
    let mut episodes = String::from(EPISODES_HEADER);
    episodes.push('\n');
    let mut specs = cfg.task_specs();
    specs.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    for spec in &specs {
        let seeds: Vec<u64> = (0..cfg.data.num_eval as u64).map(|i| base + i).collect();
        let scenes: Vec<SceneTruth> = seeds
            .iter()
            .map(|&s| sample_truth(spec, s))
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::from)?;
        let outcomes: Vec<EpisodeOutcome> = match &trainer {
            Some(t) => {
                if spec.task_index() >= policy.num_tasks {
                    return Err(CliError::CheckpointIncompatible {
                        path: checkpoint.unwrap_or(Path::new("")).to_path_buf(),
                        detail: format!("policy has no slot for task `{}`", spec.task_id),
                    });
                }
                let goals = seeds
                    .iter()
                    .zip(&scenes)
                    .map(|(&s, truth)| {
                        goal_context(spec, truth, s, variant.goal_mode(), &variant.noise)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(anyhow::Error::from)?;
                let mut c =
                    PolicyController::new(policy, &t.params, spec.task_index(), &goals, cfg.seed);
                run_episodes(spec, &scenes, &mut c)
            }
            None => {
                let mut c: Box<dyn Controller> = match mode {
                    EvalMode::Random => Box::new(RandomController::new(cfg.seed)),
                    _ => Box::new(ExpertController),
                };
                run_episodes(spec, &scenes, c.as_mut())
            }
        };
        let n_success = outcomes.iter().filter(|o| o.success).count();
        let rate = n_success as f64 / outcomes.len().max(1) as f64;
        let config_name = match mode {
            EvalMode::Policy => variant.name.as_str(),
            other => mode_name(other),
        };
        results.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            spec.task_id,
            mode_name(mode),
            config_name,
            cfg.seed,
            outcomes.len(),
            n_success,
            num(rate)
        ));
        for (i, (o, s)) in outcomes.iter().zip(&seeds).enumerate() {
            episodes.push_str(&format!(
                "{},{},{},{},{},{}\n",
                spec.task_id,
                i,
                s,
                o.success,
                num(o.translation_error),
                num(o.rotation_error)
            ));
        }
        eprintln!(
            "{}: {}/{} successful ({})",
            spec.task_id,
            n_success,
            outcomes.len(),
            mode_name(mode)
        );
    }
    out.write("results.csv", results.as_bytes())?;
    out.write("episodes.csv", episodes.as_bytes())?;
    let mut meta = ctx.metadata("eval")?;
    if let Some(p) = checkpoint.filter(|_| mode == EvalMode::Policy) {
        meta.inputs.push(InputFile::hash(p)?);
    }
    out.write_metadata(&meta)
}
