use nalgebra::Vector3;
use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{
    decode_chunk, decode_delta, encode_chunk, gram_schmidt_backward, PolicyConfig, PolicyParams,
    ACTION_DIM,
};
use super::schedule::{NoiseSchedule, OutputMap};
use super::tokens::{tokenize_observation, VISUAL_FEATURES};
use super::{ActionSequence, PolicyError};
use crate::consistency::{batched_soft_loss_with_grad, LossConfig, PoseGrad};
use crate::geometry::{Pose, SceneObservation};
use crate::nn::{round_to_f32, Adam, AdamConfig, Parameters};

/// Everything the policy conditions on at one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub task_index: usize,
    /// Visual features of the current frame (`num_tokens × 7`).
    pub current: Array2<f64>,
    /// Visual features of the goal frame; all zero when no goal is given.
    pub goal: Array2<f64>,
    /// `m + 1` end-effector poses, oldest first; the last is the current pose.
    pub history: Vec<Pose>,
    /// Registered object transformation, if available.
    pub object_transform: Option<Pose>,
}

impl PolicyInput {
    /// Tokenizes the frames and pads or truncates `executed` (oldest first,
    /// non-empty) to the configured history window, repeating the earliest.
    pub fn new(
        cfg: &PolicyConfig,
        task_index: usize,
        current: &SceneObservation,
        goal: Option<&SceneObservation>,
        executed: &[Pose],
        object_transform: Option<Pose>,
    ) -> Self {
        let goal = match goal {
            Some(g) => tokenize_observation(g, &cfg.tokenizer),
            None => Array2::zeros((cfg.tokenizer.num_tokens, VISUAL_FEATURES)),
        };
        Self {
            task_index,
            current: tokenize_observation(current, &cfg.tokenizer),
            goal,
            history: pad_history(executed, cfg.history_len + 1),
            object_transform,
        }
    }

    pub fn current_pose(&self) -> Pose {
        *self.history.last().expect("non-empty history")
    }
}

/// Last `len` poses, front-padded with the earliest one.
pub fn pad_history(executed: &[Pose], len: usize) -> Vec<Pose> {
    assert!(
        !executed.is_empty(),
        "history needs at least the current pose"
    );
    let tail = &executed[executed.len().saturating_sub(len)..];
    let mut out = vec![tail[0]; len - tail.len()];
    out.extend_from_slice(tail);
    out
}

/// Where the grasp pose for the consistency loss comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraspReference {
    /// Predicted, at this position of the chunk.
    Chunk(usize),
    /// Already executed.
    Executed(Pose),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: PolicyInput,
    pub target: ActionSequence,
    pub grasp: GraspReference,
    /// Chunk entries that happen after the grasp.
    pub post_grasp: Vec<bool>,
}

impl TrainingSample {
    /// Sample for decision step `t` of a keypose demonstration: the chunk is
    /// keyposes `t..t+k`, padded by repeating the last keypose.
    pub fn from_demo(
        actions: &ActionSequence,
        grasp_index: usize,
        t: usize,
        chunk_size: usize,
        input: PolicyInput,
    ) -> Self {
        let n = actions.len();
        let idx: Vec<usize> = (0..chunk_size).map(|j| (t + j).min(n - 1)).collect();
        let target = ActionSequence::new(
            idx.iter().map(|&i| actions.poses()[i]).collect(),
            idx.iter().map(|&i| actions.gripper()[i]).collect(),
        )
        .expect("non-empty chunk");
        let grasp = if t <= grasp_index && grasp_index < t + chunk_size && grasp_index < n {
            GraspReference::Chunk(grasp_index - t)
        } else {
            GraspReference::Executed(actions.poses()[grasp_index.min(n - 1)])
        };
        let post_grasp = idx.iter().map(|&i| i > grasp_index).collect();
        Self {
            input,
            target,
            grasp,
            post_grasp,
        }
    }
}

/// Diffusion steps and injected noise for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub timesteps: Vec<usize>,
    pub noise: Array2<f64>,
}

impl StepNoise {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        batch: usize,
        width: usize,
        schedule: &NoiseSchedule,
    ) -> Self {
        let timesteps = (0..batch)
            .map(|_| rng.random_range(0..schedule.num_steps()))
            .collect();
        let noise = Array2::from_shape_simple_fn((batch, width), || rng.sample(StandardNormal));
        Self { timesteps, noise }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub l_diff: f64,
    pub l_soft: f64,
    pub loss: f64,
    pub grads: PolicyParams,
}

/// Noise-prediction loss plus `lambda_pose` times the consistency loss on
/// the clean-action estimate, with gradients for every parameter.
///
/// `lambda_pose = 0` skips the consistency backward pass entirely, so the
/// gradient is exactly the diffusion-only gradient.
pub fn diffusion_train_step(
    params: &PolicyParams,
    cfg: &PolicyConfig,
    schedule: &NoiseSchedule,
    samples: &[&TrainingSample],
    loss_cfg: &LossConfig,
    noise: &StepNoise,
) -> StepOutput {
    let b = samples.len();
    let w = cfg.action_width();
    let scale = cfg.translation_scale;
    let inputs: Vec<&PolicyInput> = samples.iter().map(|s| &s.input).collect();
    let (cond, cond_cache) = params.condition(cfg, &inputs);

    let mut x0 = Array2::zeros((b, w));
    for (i, smp) in samples.iter().enumerate() {
        let enc = encode_chunk(&smp.target, &smp.input.current_pose(), scale);
        x0.row_mut(i).assign(&Array1::from(enc));
    }
    let mut x_t = Array2::zeros((b, w));
    for i in 0..b {
        let ab = schedule.alpha_bar(noise.timesteps[i]);
        let (a, c) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in 0..w {
            x_t[(i, j)] = a * x0[(i, j)] + c * noise.noise[(i, j)];
        }
    }
    let (out, den_cache) = params.denoise(cfg, cond.view(), &noise.timesteps, x_t.view());
    let maps: Vec<OutputMap> = noise
        .timesteps
        .iter()
        .map(|&t| OutputMap::new(cfg.prediction, schedule.alpha_bar(t)))
        .collect();
    let mut l_diff = 0.0;
    let mut dout = Array2::zeros((b, w));
    for i in 0..b {
        for j in 0..w {
            let r = maps[i].noise(x_t[(i, j)], out[(i, j)]) - noise.noise[(i, j)];
            l_diff += r * r;
            dout[(i, j)] = 2.0 * r * maps[i].eps_f / (b * w) as f64;
        }
    }
    l_diff /= (b * w) as f64;

    let lambda = loss_cfg.lambda_pose;
    let mut l_soft = 0.0;
    for (i, smp) in samples.iter().enumerate() {
        let Some(t_obj) = smp.input.object_transform else {
            continue;
        };
        let m = maps[i];
        let xhat: Vec<f64> = (0..w).map(|j| m.clean(x_t[(i, j)], out[(i, j)])).collect();
        if let Some((loss, dxhat)) = consistency_on_estimate(smp, &xhat, &t_obj, cfg, loss_cfg) {
            l_soft += loss / b as f64;
            if lambda != 0.0 {
                for j in 0..w {
                    dout[(i, j)] += lambda / b as f64 * m.clean_f * dxhat[j];
                }
            }
        }
    }

    let mut grads = PolicyParams::zeros(cfg);
    let dcond = params.denoise_backward(cfg, &den_cache, dout.view(), &mut grads);
    params.condition_backward(cfg, &cond_cache, dcond.view(), &mut grads);
    StepOutput {
        l_diff,
        l_soft,
        loss: l_diff + lambda * l_soft,
        grads,
    }
}

/// Consistency loss of one decoded chunk estimate and its gradient w.r.t.
/// the encoded entries. `None` when the chunk has no post-grasp entry or a
/// rotation cannot be decoded.
fn consistency_on_estimate(
    smp: &TrainingSample,
    xhat: &[f64],
    t_obj: &Pose,
    cfg: &PolicyConfig,
    loss_cfg: &LossConfig,
) -> Option<(f64, Vec<f64>)> {
    let scale = cfg.translation_scale;
    let current = smp.input.current_pose();
    let post: Vec<usize> = (0..cfg.chunk_size).filter(|&j| smp.post_grasp[j]).collect();
    if post.is_empty() {
        return None;
    }
    let mut deltas = Vec::with_capacity(cfg.chunk_size);
    for j in 0..cfg.chunk_size {
        deltas.push(decode_delta(
            &xhat[j * ACTION_DIM..(j + 1) * ACTION_DIM],
            scale,
        )?);
    }
    let absolute: Vec<Pose> = deltas.iter().map(|d| d.compose(&current)).collect();
    let grasp = match smp.grasp {
        GraspReference::Chunk(j) => absolute[j],
        GraspReference::Executed(p) => p,
    };
    let mut seq = vec![grasp];
    seq.extend(post.iter().map(|&j| absolute[j]));
    let (loss, pose_grads) = batched_soft_loss_with_grad(&seq, 0, t_obj, loss_cfg).ok()?;

    // Gradient per chunk slot on the absolute pose.
    let mut slot_grads: Vec<Option<PoseGrad>> = vec![None; cfg.chunk_size];
    let mut add = |j: usize, g: &PoseGrad| {
        let acc = slot_grads[j].get_or_insert_with(PoseGrad::default);
        acc.rotation += g.rotation;
        acc.translation += g.translation;
    };
    if let GraspReference::Chunk(j) = smp.grasp {
        add(j, &pose_grads[0]);
    }
    for (k, &j) in post.iter().enumerate() {
        add(j, &pose_grads[k + 1]);
    }

    let r_cur = current.rotation.matrix();
    let t_cur = current.translation;
    let mut dx = vec![0.0; xhat.len()];
    for (j, g) in slot_grads.iter().enumerate() {
        let Some(g) = g else { continue };
        // â = Δ ∘ current: R̂ = R_Δ R_cur, t̂ = R_Δ t_cur + t_Δ.
        let g_rot_delta = g.rotation * r_cur.transpose() + g.translation * t_cur.transpose();
        let base = j * ACTION_DIM;
        for k in 0..3 {
            dx[base + k] = g.translation[k] * scale;
        }
        let a = Vector3::new(xhat[base + 3], xhat[base + 4], xhat[base + 5]);
        let bcol = Vector3::new(xhat[base + 6], xhat[base + 7], xhat[base + 8]);
        let (ga, gb) = gram_schmidt_backward(&a, &bcol, &g_rot_delta);
        for k in 0..3 {
            dx[base + 3 + k] = ga[k];
            dx[base + 6 + k] = gb[k];
        }
    }
    Some((loss, dx))
}

/// Ancestral sampling of one action chunk per input; input `i` draws from
/// stream `i` of `seed`.
pub fn sample_actions(
    params: &PolicyParams,
    cfg: &PolicyConfig,
    schedule: &NoiseSchedule,
    inputs: &[PolicyInput],
    seed: u64,
) -> Vec<ActionSequence> {
    let b = inputs.len();
    if b == 0 {
        return Vec::new();
    }
    let w = cfg.action_width();
    let refs: Vec<&PolicyInput> = inputs.iter().collect();
    let (cond, _) = params.condition(cfg, &refs);
    let mut rngs: Vec<ChaCha8Rng> = (0..b)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut x = Array2::zeros((b, w));
    for (i, rng) in rngs.iter_mut().enumerate() {
        for j in 0..w {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let clip = cfg.sample_clip;
    for t in (0..schedule.num_steps()).rev() {
        let (out, _) = params.denoise(cfg, cond.view(), &vec![t; b], x.view());
        let ab = schedule.alpha_bar(t);
        let map = OutputMap::new(cfg.prediction, ab);
        let ab_prev = if t > 0 {
            schedule.alpha_bar(t - 1)
        } else {
            1.0
        };
        let beta = schedule.beta(t);
        let coef_x0 = beta * ab_prev.sqrt() / (1.0 - ab);
        let coef_xt = (1.0 - ab_prev) * (1.0 - beta).sqrt() / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        for (i, rng) in rngs.iter_mut().enumerate() {
            for j in 0..w {
                let x0 = map.clean(x[(i, j)], out[(i, j)]).clamp(-clip, clip);
                let mut v = coef_x0 * x0 + coef_xt * x[(i, j)];
                if t > 0 {
                    v += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                x[(i, j)] = v;
            }
        }
    }
    (0..b)
        .map(|i| {
            let row: Vec<f64> = x.slice(s![i, ..]).to_vec();
            decode_chunk(&row, &inputs[i].current_pose(), cfg.translation_scale)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_soft_loss: bool,
    pub lr_decay: LrDecay,
    pub adam: AdamConfig,
    pub loss: LossConfig,
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    Constant,
    /// Half-cosine from 1 down to `MIN_LR_FRACTION` at the last epoch.
    Cosine,
}

pub const MIN_LR_FRACTION: f64 = 0.05;

impl LrDecay {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrDecay::Constant => 1.0,
            LrDecay::Cosine => {
                let progress = if epochs <= 1 {
                    0.0
                } else {
                    epoch as f64 / (epochs - 1) as f64
                };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
                MIN_LR_FRACTION + (1.0 - MIN_LR_FRACTION) * c
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            seed: 0,
            use_soft_loss: true,
            lr_decay: LrDecay::Cosine,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Loss settings with the consistency weight zeroed when disabled.
    pub fn effective_loss(&self) -> LossConfig {
        let mut l = self.loss;
        if !self.use_soft_loss {
            l.lambda_pose = 0.0;
        }
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_diff: f64,
    pub l_soft: f64,
    pub loss: f64,
    pub steps: usize,
}

/// Mini-batch Adam training. Parameters and optimizer moments are rounded
/// to f32 after every update so a checkpoint restores the exact state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub params: PolicyParams,
    pub adam: Adam,
    pub schedule: NoiseSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(policy: PolicyConfig, train: TrainConfig) -> Result<Self, PolicyError> {
        policy.validate()?;
        train
            .loss
            .validate()
            .map_err(|e| PolicyError::InvalidConfig(e.to_string()))?;
        if train.batch_size == 0 {
            return Err(PolicyError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        let schedule = policy.schedule()?;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let mut params = PolicyParams::init(&policy, &mut rng);
        params.visit_mut(&mut |d| round_to_f32(d));
        let adam = Adam::new(train.adam, params.num_parameters());
        Ok(Self {
            policy,
            train,
            params,
            adam,
            schedule,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.train.epochs
    }

    /// One pass over `data` in a shuffled order drawn from `(seed, epoch)`.
    pub fn run_epoch(&mut self, data: &[TrainingSample]) -> Result<EpochStats, PolicyError> {
        if data.is_empty() {
            return Err(PolicyError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let loss_cfg = self.train.effective_loss();
        let lr_scale = self.train.lr_decay.factor(self.epoch, self.train.epochs);
        let (mut sd, mut ss, mut sl, mut steps) = (0.0, 0.0, 0.0, 0);
        for chunk in order.chunks(self.train.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &data[i]).collect();
            let noise = StepNoise::sample(
                &mut rng,
                batch.len(),
                self.policy.action_width(),
                &self.schedule,
            );
            let out = diffusion_train_step(
                &self.params,
                &self.policy,
                &self.schedule,
                &batch,
                &loss_cfg,
                &noise,
            );
            self.adam
                .update_scaled(&mut self.params, &out.grads, lr_scale);
            self.params.visit_mut(&mut |d| round_to_f32(d));
            round_to_f32(&mut self.adam.m);
            round_to_f32(&mut self.adam.v);
            sd += out.l_diff;
            ss += out.l_soft;
            sl += out.loss;
            steps += 1;
        }
        self.epoch += 1;
        let n = steps as f64;
        let stats = EpochStats {
            epoch: self.epoch,
            l_diff: sd / n,
            l_soft: ss / n,
            loss: sl / n,
            steps,
        };
        self.history.push(stats);
        Ok(stats)
    }

    pub fn sample(&self, inputs: &[PolicyInput], seed: u64) -> Vec<ActionSequence> {
        sample_actions(&self.params, &self.policy, &self.schedule, inputs, seed)
    }
}
