use std::path::{Path, PathBuf};

use i2a_core::benchmark::{default_camera, sample_truth, TaskSpec};
use i2a_core::geometry::ScaleTransform;
use i2a_core::io::{write_observation, write_ply, PlyEncoding};
use i2a_core::synthesis::oracle::OracleWorld;
use i2a_core::synthesis::subprocess::SubprocessAdapter;
use i2a_core::synthesis::{imagine_goal, AdapterNoise};
use serde::{Deserialize, Serialize};

use super::{matrix_rows, print_json, Context};
use crate::dataset::parse_json;
use crate::error::{CliError, CliResult};
use crate::run::{read_file, InputFile};

/// Scene to synthesize a goal for.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSpec {
    task: String,
    seed: u64,
    /// Scale of the reconstructor's output relative to the scene.
    #[serde(default = "one")]
    recon_scale: f64,
    /// Scale applied when placing the reconstructed foreground.
    #[serde(default = "one")]
    scale: f64,
    /// External programs replacing the oracle editor or segmenter.
    editor: Option<ExternalProgram>,
    segmenter: Option<ExternalProgram>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalProgram {
    program: PathBuf,
    #[serde(default)]
    args: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize)]
struct Output {
    task_id: String,
    scene_seed: u64,
    object_transform: Option<[[f64; 4]; 4]>,
    rmsd: Option<f64>,
    num_points: Option<usize>,
    anchor_pose: [[f64; 4]; 4],
    scale: f64,
    expert_object_transform: [[f64; 4]; 4],
    goal_points: usize,
}

pub fn synthesize(ctx: &Context, scene_path: &Path, noise_path: Option<&Path>) -> CliResult<()> {
    let scene: SceneSpec = parse_json(scene_path, &read_file(scene_path)?)?;
    let noise: AdapterNoise = match noise_path {
        Some(p) => parse_json(p, &read_file(p)?)?,
        None => ctx.config.noise,
    };
    let bad = |field: &str, e: &dyn ToString| CliError::config(scene_path, field, e.to_string());
    let spec = TaskSpec::builtin(&scene.task).map_err(|e| bad("task", &e))?;
    let scale = ScaleTransform::new(scene.scale).map_err(|e| bad("scale", &e))?;
    if !(scene.recon_scale.is_finite() && scene.recon_scale > 0.0) {
        return Err(bad("recon_scale", &"must be a positive finite number"));
    }
    let out = ctx.output()?;

    let truth = sample_truth(&spec, scene.seed).map_err(anyhow::Error::from)?;
    let world = OracleWorld::new(spec.clone(), truth, &default_camera())
        .with_recon_scale(scene.recon_scale);
    let initial = world.initial_observation().clone();
    let mut adapters = world.into_adapters(noise).map_err(anyhow::Error::from)?;
    if let Some(p) = scene.editor {
        adapters.editor = Box::new(SubprocessAdapter::new(p.program, p.args));
    }
    if let Some(p) = scene.segmenter {
        adapters.segmenter = Box::new(SubprocessAdapter::new(p.program, p.args));
    }
    let goal = imagine_goal(&initial, spec.instruction(), &mut adapters, &scale)
        .map_err(anyhow::Error::from)?;

    let mut ply = Vec::new();
    write_ply(&mut ply, &goal.cloud, PlyEncoding::Ascii).map_err(anyhow::Error::from)?;
    out.write("goal.ply", &ply)?;
    let mut obs = Vec::new();
    write_observation(&mut obs, &goal.observation).map_err(anyhow::Error::from)?;
    out.write("goal.obs", &obs)?;
    let mut obs = Vec::new();
    write_observation(&mut obs, &initial).map_err(anyhow::Error::from)?;
    out.write("initial.obs", &obs)?;

    let reg = goal.object_transform;
    let summary = Output {
        task_id: spec.task_id.clone(),
        scene_seed: scene.seed,
        object_transform: reg.map(|r| matrix_rows(&r.transform)),
        rmsd: reg.map(|r| r.rmsd),
        num_points: reg.map(|r| r.num_points),
        anchor_pose: matrix_rows(&goal.anchor_pose),
        scale: goal.scale.factor(),
        expert_object_transform: matrix_rows(&truth.object_transform()),
        goal_points: goal.cloud.len(),
    };
    let mut json = serde_json::to_vec_pretty(&summary).map_err(anyhow::Error::from)?;
    json.push(b'\n');
    out.write("goal.json", &json)?;
    print_json(&summary)?;

    let mut meta = ctx.metadata("synthesize")?;
    meta.inputs.push(InputFile::hash(scene_path)?);
    if let Some(p) = noise_path {
        meta.inputs.push(InputFile::hash(p)?);
    }
    out.write_metadata(&meta)
}
