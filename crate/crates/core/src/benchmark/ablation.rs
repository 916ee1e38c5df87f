use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::episode::{run_episodes, Controller, StepContext};
use super::expert::{scripted_expert, Demonstration, GRASP_INDEX, NUM_KEYPOSES};
use super::scene::{default_camera, render_state, sample_truth, SceneTruth};
use super::task::TaskSpec;
use crate::consistency::LossConfig;
use crate::geometry::{project, Pose, ScaleTransform, SceneObservation};
use crate::policy::{
    pad_history, sample_actions, tokenize_observation, PolicyConfig, PolicyInput, PolicyParams,
    TrainConfig, Trainer, TrainingSample, VISUAL_FEATURES,
};
use crate::synthesis::oracle::{ground_truth_goal_cloud, OracleWorld};
use crate::synthesis::{imagine_goal, split_by_labels, AdapterNoise};

/// Held-out scenes per task and seed.
pub const EVAL_EPISODES: usize = 25;

/// Scene seeds of run `seed`: training scenes start at `seed · SEED_STRIDE`,
/// evaluation scenes `EVAL_OFFSET` later.
pub const SEED_STRIDE: u64 = 1_000_000;
pub const EVAL_OFFSET: u64 = 500_000;

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("invalid ablation configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Benchmark(#[from] super::BenchmarkError),
    #[error(transparent)]
    Synthesis(#[from] crate::synthesis::SynthesisError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Which goal observation the policy is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    None,
    GroundTruth,
    Imagined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub name: String,
    #[serde(default)]
    pub use_imagined_goal: bool,
    #[serde(default)]
    pub use_gt_goal: bool,
    #[serde(default)]
    pub use_transformation_token: bool,
    #[serde(default)]
    pub use_soft_loss: bool,
    #[serde(default)]
    pub noise: AdapterNoise,
    pub seeds: Vec<u64>,
}

pub const PRESET_NAMES: [&str; 6] = ["Ex0", "Ex1", "Ex2", "Ex3", "Ex4", "Ex5"];

impl AblationConfig {
    /// Named configurations: `Ex0` no goal, `Ex1` ground-truth goal, `Ex2`
    /// imagined goal, `Ex3` plus transformation token, `Ex4` plus soft loss,
    /// `Ex5` plus both.
    pub fn preset(name: &str, noise: AdapterNoise, seeds: Vec<u64>) -> Result<Self, AblationError> {
        let (imagined, gt, token, soft) = match name {
            "Ex0" => (false, false, false, false),
            "Ex1" => (false, true, false, false),
            "Ex2" => (true, false, false, false),
            "Ex3" => (true, false, true, false),
            "Ex4" => (true, false, false, true),
            "Ex5" => (true, false, true, true),
            _ => {
                return Err(AblationError::InvalidConfig(format!(
                    "unknown preset `{name}`"
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            use_imagined_goal: imagined,
            use_gt_goal: gt,
            use_transformation_token: token,
            use_soft_loss: soft,
            noise,
            seeds,
        })
    }

    pub fn standard_matrix(noise: AdapterNoise, seeds: &[u64]) -> Vec<Self> {
        PRESET_NAMES
            .iter()
            .map(|n| Self::preset(n, noise, seeds.to_vec()).expect("known preset"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), AblationError> {
        if self.use_imagined_goal && self.use_gt_goal {
            return Err(AblationError::InvalidConfig(format!(
                "{}: use_imagined_goal and use_gt_goal are mutually exclusive",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(AblationError::InvalidConfig(format!(
                "{}: no seeds",
                self.name
            )));
        }
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return Err(AblationError::InvalidConfig(format!(
                "invalid config name `{}`",
                self.name
            )));
        }
        self.noise.validate()?;
        Ok(())
    }

    pub fn goal_mode(&self) -> GoalMode {
        if self.use_imagined_goal {
            GoalMode::Imagined
        } else if self.use_gt_goal {
            GoalMode::GroundTruth
        } else {
            GoalMode::None
        }
    }
}

/// Goal conditioning of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalContext {
    pub observation: Option<SceneObservation>,
    /// Object transformation used for the token and the consistency loss.
    pub object_transform: Option<Pose>,
}

/// Seed for the oracle adapters of one scene.
pub fn adapter_seed(noise: &AdapterNoise, scene_seed: u64) -> u64 {
    noise.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ scene_seed
}

/// Goal observation and object transformation for a scene in `mode`.
pub fn goal_context(
    spec: &TaskSpec,
    truth: &SceneTruth,
    scene_seed: u64,
    mode: GoalMode,
    noise: &AdapterNoise,
) -> Result<GoalContext, AblationError> {
    let camera = default_camera();
    match mode {
        GoalMode::None => Ok(GoalContext {
            observation: None,
            object_transform: None,
        }),
        GoalMode::GroundTruth => {
            let initial = render_state(spec, truth, &truth.action_initial, &camera);
            let background = split_by_labels(&initial)?.background_cloud;
            let cloud = ground_truth_goal_cloud(spec, truth, &background);
            Ok(GoalContext {
                observation: Some(project(&cloud, &camera)),
                object_transform: Some(truth.object_transform()),
            })
        }
        GoalMode::Imagined => {
            let world = OracleWorld::new(spec.clone(), *truth, &camera);
            let initial = world.initial_observation().clone();
            let noise = AdapterNoise {
                seed: adapter_seed(noise, scene_seed),
                ..*noise
            };
            let mut adapters = world.into_adapters(noise)?;
            let goal = imagine_goal(
                &initial,
                spec.instruction(),
                &mut adapters,
                &ScaleTransform::unit(),
            )?;
            Ok(GoalContext {
                observation: Some(goal.observation),
                object_transform: goal.object_transform.map(|r| r.transform),
            })
        }
    }
}

/// Seeded expert demonstrations: scene seeds `first_seed..` are tried in
/// order, skipping scenes the expert cannot solve, until `count` succeed.
pub fn collect_demonstrations(
    spec: &TaskSpec,
    first_seed: u64,
    count: usize,
) -> Result<Vec<(u64, Demonstration)>, AblationError> {
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    let limit = first_seed + 10 * count as u64 + 100;
    while out.len() < count {
        if seed >= limit {
            return Err(AblationError::InvalidConfig(
                "expert failed on too many scenes".into(),
            ));
        }
        let truth = sample_truth(spec, seed)?;
        if let Ok(demo) = scripted_expert(spec, &truth) {
            out.push((seed, demo));
        }
        seed += 1;
    }
    Ok(out)
}

/// One training sample per decision step of a demonstration.
pub fn demonstration_samples(
    cfg: &PolicyConfig,
    spec: &TaskSpec,
    demo: &Demonstration,
    goal: &GoalContext,
) -> Vec<TrainingSample> {
    (0..demo.actions.len())
        .map(|t| {
            let input = PolicyInput::new(
                cfg,
                spec.task_index(),
                &demo.observations[t],
                goal.observation.as_ref(),
                &demo.executed_before(t),
                goal.object_transform,
            );
            TrainingSample::from_demo(&demo.actions, GRASP_INDEX, t, cfg.chunk_size, input)
        })
        .collect()
}

/// Closed-loop controller around a trained policy. Every step samples a
/// chunk and executes its first keypose.
pub struct PolicyController<'a> {
    pub config: PolicyConfig,
    pub params: &'a PolicyParams,
    pub task_index: usize,
    /// Goal tokens and object transformation, one per episode.
    pub goals: Vec<(Array2<f64>, Option<Pose>)>,
    pub seed: u64,
}

impl<'a> PolicyController<'a> {
    pub fn new(
        config: PolicyConfig,
        params: &'a PolicyParams,
        task_index: usize,
        goals: &[GoalContext],
        seed: u64,
    ) -> Self {
        let goals = goals
            .iter()
            .map(|g| {
                let tokens = match &g.observation {
                    Some(o) => tokenize_observation(o, &config.tokenizer),
                    None => Array2::zeros((config.tokenizer.num_tokens, VISUAL_FEATURES)),
                };
                (tokens, g.object_transform)
            })
            .collect();
        Self {
            config,
            params,
            task_index,
            goals,
            seed,
        }
    }
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, contexts: &[StepContext<'_>]) -> Vec<(Pose, bool)> {
        let inputs: Vec<PolicyInput> = contexts
            .iter()
            .map(|c| PolicyInput {
                task_index: self.task_index,
                current: tokenize_observation(c.observation, &self.config.tokenizer),
                goal: self.goals[c.episode].0.clone(),
                history: pad_history(c.history, self.config.history_len + 1),
                object_transform: self.goals[c.episode].1,
            })
            .collect();
        let step = contexts.first().map_or(0, |c| c.step as u64);
        let schedule = self.config.schedule().expect("validated configuration");
        let seed = self
            .seed
            .wrapping_mul(NUM_KEYPOSES as u64 + 1)
            .wrapping_add(step);
        sample_actions(self.params, &self.config, &schedule, &inputs, seed)
            .into_iter()
            .map(|chunk| (chunk.poses()[0], chunk.gripper()[0]))
            .collect()
    }
}

/// Model, training and evaluation sizes shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub num_demos: usize,
    pub num_eval: usize,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            num_demos: 128,
            num_eval: EVAL_EPISODES,
            policy: PolicyConfig::default(),
            train: TrainConfig {
                epochs: 150,
                loss: LossConfig {
                    lambda_pose: 0.1,
                    ..LossConfig::default()
                },
                ..TrainConfig::default()
            },
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task_id: String,
    pub config_name: String,
    pub seed: u64,
    pub n_eval: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub wall_time_s: f64,
}

pub const CSV_HEADER: &str = "task_id,config_name,seed,n_eval,n_success,success_rate,wall_time_s";

impl AblationRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.task_id,
            self.config_name,
            self.seed,
            self.n_eval,
            self.n_success,
            self.success_rate,
            self.wall_time_s
        )
    }
}

/// Header plus rows sorted by task, configuration and seed.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.task_id, &a.config_name, a.seed).cmp(&(&b.task_id, &b.config_name, b.seed))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Demonstrations, evaluation scenes and goal contexts of one run seed,
/// computed once per goal source and noise level.
pub struct SeedData {
    pub seed: u64,
    pub demos: Vec<(u64, Demonstration)>,
    pub eval: Vec<(u64, SceneTruth)>,
    goals: BTreeMap<(GoalMode, [u64; 5]), (Vec<GoalContext>, Vec<GoalContext>)>,
}

fn noise_key(n: &AdapterNoise) -> [u64; 5] {
    [
        n.sigma_rot.to_bits(),
        n.sigma_trans.to_bits(),
        n.dropout_frac.to_bits(),
        n.outlier_frac.to_bits(),
        n.seed,
    ]
}

impl SeedData {
    pub fn new(
        spec: &TaskSpec,
        seed: u64,
        settings: &AblationSettings,
    ) -> Result<Self, AblationError> {
        let base = seed.wrapping_mul(SEED_STRIDE);
        let demos = collect_demonstrations(spec, base, settings.num_demos)?;
        let eval = (0..settings.num_eval as u64)
            .map(|i| {
                Ok((
                    base + EVAL_OFFSET + i,
                    sample_truth(spec, base + EVAL_OFFSET + i)?,
                ))
            })
            .collect::<Result<_, AblationError>>()?;
        Ok(Self {
            seed,
            demos,
            eval,
            goals: BTreeMap::new(),
        })
    }

    /// Goal contexts for training and evaluation scenes.
    pub fn goals(
        &mut self,
        spec: &TaskSpec,
        mode: GoalMode,
        noise: &AdapterNoise,
    ) -> Result<&(Vec<GoalContext>, Vec<GoalContext>), AblationError> {
        let key = (mode, noise_key(noise));
        if !self.goals.contains_key(&key) {
            let train = self
                .demos
                .iter()
                .map(|(s, d)| goal_context(spec, &d.ground_truth, *s, mode, noise))
                .collect::<Result<Vec<_>, _>>()?;
            let eval = self
                .eval
                .iter()
                .map(|(s, t)| goal_context(spec, t, *s, mode, noise))
                .collect::<Result<Vec<_>, _>>()?;
            self.goals.insert(key, (train, eval));
        }
        Ok(&self.goals[&key])
    }
}

/// Trains one policy for `config` on the seed's demonstrations and
/// evaluates it on the held-out scenes.
pub fn run_cell(
    spec: &TaskSpec,
    config: &AblationConfig,
    data: &mut SeedData,
    settings: &AblationSettings,
) -> Result<AblationRow, AblationError> {
    config.validate()?;
    let start = Instant::now();
    let mut policy = settings.policy;
    policy.use_transformation_token = config.use_transformation_token;
    let mut train = settings.train;
    train.use_soft_loss = config.use_soft_loss;
    train.seed = data.seed;

    let mode = config.goal_mode();
    let (train_goals, eval_goals) = data.goals(spec, mode, &config.noise)?.clone();
    let samples: Vec<TrainingSample> = data
        .demos
        .iter()
        .zip(&train_goals)
        .flat_map(|((_, d), g)| demonstration_samples(&policy, spec, d, g))
        .collect();
    let mut trainer = Trainer::new(policy, train)?;
    while !trainer.is_done() {
        trainer.run_epoch(&samples)?;
    }

    let scenes: Vec<SceneTruth> = data.eval.iter().map(|(_, t)| *t).collect();
    let mut controller = PolicyController::new(
        policy,
        &trainer.params,
        spec.task_index(),
        &eval_goals,
        data.seed,
    );
    let outcomes = run_episodes(spec, &scenes, &mut controller);
    let n_success = outcomes.iter().filter(|o| o.success).count();
    Ok(AblationRow {
        task_id: spec.task_id.clone(),
        config_name: config.name.clone(),
        seed: data.seed,
        n_eval: outcomes.len(),
        n_success,
        success_rate: n_success as f64 / outcomes.len() as f64,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Every configuration on every seed it lists; seeds are the outer loop so
/// datasets are shared. `on_row` sees each row as soon as it is done.
pub fn run_ablation(
    spec: &TaskSpec,
    configs: &[AblationConfig],
    settings: &AblationSettings,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>, AblationError> {
    for c in configs {
        c.validate()?;
    }
    let mut seeds: Vec<u64> = configs
        .iter()
        .flat_map(|c| c.seeds.iter().copied())
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut rows = Vec::new();
    for seed in seeds {
        let mut data = SeedData::new(spec, seed, settings)?;
        for c in configs.iter().filter(|c| c.seeds.contains(&seed)) {
            let row = run_cell(spec, c, &mut data, settings)?;
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
