use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{timestep_embedding, NoiseSchedule, Prediction};
use super::tokens::{TokenizerConfig, VISUAL_FEATURES};
use super::{ActionSequence, PolicyError, PolicyInput};
use crate::consistency::{flatten_transform, TokenEncoderCache, TokenEncoderParams};
use crate::geometry::{Pose, Rotation};
use crate::nn::{silu, silu_grad_from, silu_with_gate, Linear, Mlp, MlpCache, Parameters};

/// Per-keypose diffusion state: translation (3), 6D rotation (6), gripper (1).
pub const ACTION_DIM: usize = 10;

/// Fixed affine normalization of visual positions before the learned embedding.
const POSITION_CENTER: [f64; 3] = [0.0, 0.0, 0.05];
const POSITION_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub d_model: usize,
    /// Keyposes predicted per call (`k`).
    pub chunk_size: usize,
    /// Past keyposes kept besides the current one (`m`).
    pub history_len: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser_hidden: usize,
    pub denoiser_layers: usize,
    /// Hidden width of the history and transformation encoders.
    pub encoder_hidden: usize,
    pub time_embedding: usize,
    /// Meters per unit of encoded translation.
    pub translation_scale: f64,
    /// Bound applied to the clean-action estimate while sampling.
    pub sample_clip: f64,
    pub num_tasks: usize,
    pub use_transformation_token: bool,
    pub prediction: Prediction,
    pub tokenizer: TokenizerConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            chunk_size: 4,
            history_len: 2,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 2e-2,
            denoiser_hidden: 128,
            denoiser_layers: 3,
            encoder_hidden: 64,
            time_embedding: 32,
            translation_scale: 0.1,
            sample_clip: 6.0,
            num_tasks: crate::benchmark::TASK_IDS.len(),
            use_transformation_token: true,
            prediction: Prediction::Clean,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.encoder_hidden == 0 || self.denoiser_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1");
        }
        if self.time_embedding == 0 || self.time_embedding % 2 != 0 {
            return bad("time_embedding must be a positive even number");
        }
        if !(self.translation_scale > 0.0 && self.sample_clip > 0.0) {
            return bad("translation_scale and sample_clip must be positive");
        }
        if self.num_tasks == 0
            || self.tokenizer.num_tokens == 0
            || !(self.tokenizer.voxel_size > 0.0)
        {
            return bad(
                "num_tasks, tokenizer.num_tokens and tokenizer.voxel_size must be positive",
            );
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, PolicyError> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn action_width(&self) -> usize {
        self.chunk_size * ACTION_DIM
    }

    /// Width of the pooled token vector: current and goal (mean and max
    /// each), language, history and transformation tokens.
    pub fn condition_width(&self) -> usize {
        self.d_model * (4 + 1 + (self.history_len + 1) + 1)
    }

    pub fn denoiser_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.condition_width() + self.time_embedding + self.action_width()];
        dims.extend(std::iter::repeat_n(
            self.denoiser_hidden,
            self.denoiser_layers,
        ));
        dims.push(self.action_width());
        dims
    }
}

/// Learned lookup table, one row per task id.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Array2<f64>,
}

impl Parameters for Embedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(
            format!("{prefix}.table"),
            self.table.shape(),
            self.table.as_slice().expect("contiguous"),
        );
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.table.as_slice_mut().expect("contiguous"));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub visual_embedding: Linear,
    pub language: Embedding,
    pub history_encoder: Mlp,
    pub token_encoder: TokenEncoderParams,
    pub denoiser: Mlp,
}

impl Parameters for PolicyParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.visual_embedding
            .visit(&format!("{prefix}visual_embedding"), f);
        self.language.visit(&format!("{prefix}language"), f);
        self.history_encoder
            .visit(&format!("{prefix}history_encoder"), f);
        self.token_encoder
            .visit(&format!("{prefix}token_encoder"), f);
        self.denoiser.visit(&format!("{prefix}denoiser"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.visual_embedding.visit_mut(f);
        self.language.visit_mut(f);
        self.history_encoder.visit_mut(f);
        self.token_encoder.visit_mut(f);
        self.denoiser.visit_mut(f);
    }
}

/// Embedded tokens of one input, before pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    /// Rows for occupied voxels only.
    pub visual_current: Array2<f64>,
    pub visual_goal: Array2<f64>,
    pub language: Array1<f64>,
    pub history: Array2<f64>,
    pub transformation: Array1<f64>,
}

struct VisualCache {
    x: Array2<f64>,
    z: Array2<f64>,
    gate: Array2<f64>,
    argmax: Vec<usize>,
}

pub(crate) struct ConditionCache {
    visual: Vec<[Option<VisualCache>; 2]>,
    tasks: Vec<usize>,
    history: MlpCache,
    token: Option<(Vec<usize>, TokenEncoderCache)>,
}

pub(crate) struct DenoiserCache {
    mlp: MlpCache,
}

fn normalized_features(f: &Array2<f64>) -> Array2<f64> {
    let rows: Vec<usize> = (0..f.nrows())
        .filter(|&r| f[(r, VISUAL_FEATURES - 1)] > 0.5)
        .collect();
    Array2::from_shape_fn((rows.len(), VISUAL_FEATURES), |(i, k)| {
        let v = f[(rows[i], k)];
        match k {
            0..=2 => (v - POSITION_CENTER[k]) / POSITION_SCALE,
            3..=5 => 2.0 * v - 1.0,
            _ => v,
        }
    })
}

/// Pose with its translation divided by `scale`, flattened to 12 entries.
pub fn scaled_flat(p: &Pose, scale: f64) -> [f64; 12] {
    flatten_transform(&Pose::new(p.rotation, p.translation / scale))
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(cfg: &PolicyConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let table_bound = 1.0;
        Self {
            visual_embedding: Linear::init(VISUAL_FEATURES, d, rng),
            language: Embedding {
                table: Array2::from_shape_fn((cfg.num_tasks, d), |_| {
                    rng.random_range(-table_bound..=table_bound)
                }),
            },
            history_encoder: Mlp::init(&[12, cfg.encoder_hidden, d], rng),
            token_encoder: TokenEncoderParams::init(cfg.encoder_hidden, d, rng),
            denoiser: Mlp::init(&cfg.denoiser_dims(), rng),
        }
    }

    pub fn zeros(cfg: &PolicyConfig) -> Self {
        let d = cfg.d_model;
        Self {
            visual_embedding: Linear::zeros(VISUAL_FEATURES, d),
            language: Embedding {
                table: Array2::zeros((cfg.num_tasks, d)),
            },
            history_encoder: Mlp::zeros(&[12, cfg.encoder_hidden, d]),
            token_encoder: TokenEncoderParams::zeros(cfg.encoder_hidden, d),
            denoiser: Mlp::zeros(&cfg.denoiser_dims()),
        }
    }

    /// Embedded tokens of a single input, for inspection.
    pub fn tokens(&self, cfg: &PolicyConfig, input: &PolicyInput) -> TokenSet {
        let embed = |f: &Array2<f64>| {
            self.visual_embedding
                .forward(normalized_features(f).view())
                .mapv(silu)
        };
        let hist = history_rows(cfg, &[input]);
        let transformation = match (&input.object_transform, cfg.use_transformation_token) {
            (Some(t), true) => {
                let x =
                    Array2::from_shape_vec((1, 12), scaled_flat(t, cfg.translation_scale).to_vec())
                        .expect("shape");
                self.token_encoder
                    .forward_cached(x.view())
                    .0
                    .row(0)
                    .to_owned()
            }
            _ => Array1::zeros(cfg.d_model),
        };
        TokenSet {
            visual_current: embed(&input.current),
            visual_goal: embed(&input.goal),
            language: self.language.table.row(input.task_index).to_owned(),
            history: self.history_encoder.forward(hist.view()),
            transformation,
        }
    }

    fn pool_visual(&self, features: &Array2<f64>, d: usize) -> (Array1<f64>, Option<VisualCache>) {
        let x = normalized_features(features);
        let mut out = Array1::zeros(2 * d);
        if x.nrows() == 0 {
            return (out, None);
        }
        let z = self.visual_embedding.forward(x.view());
        let (a, gate) = silu_with_gate(&z);
        let n = a.nrows() as f64;
        let mut argmax = vec![0; d];
        for c in 0..d {
            let col = a.column(c);
            out[c] = col.sum() / n;
            let (best, value) = col
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, v)| if *v > b.1 { (i, *v) } else { b },
                );
            argmax[c] = best;
            out[d + c] = value;
        }
        (out, Some(VisualCache { x, z, gate, argmax }))
    }

    fn unpool_visual(&self, cache: &VisualCache, dpool: ArrayView2<f64>, grad: &mut PolicyParams) {
        let d = cache.z.ncols();
        let n = cache.z.nrows();
        let mut da = Array2::zeros((n, d));
        for c in 0..d {
            let g_mean = dpool[(0, c)] / n as f64;
            da.column_mut(c).fill(g_mean);
            da[(cache.argmax[c], c)] += dpool[(0, d + c)];
        }
        Zip::from(&mut da)
            .and(&cache.z)
            .and(&cache.gate)
            .for_each(|g, &z, &s| *g *= silu_grad_from(z, s));
        self.visual_embedding
            .backward(cache.x.view(), da.view(), &mut grad.visual_embedding);
    }

    /// Pooled token vectors for a batch (`batch × condition_width`).
    pub(crate) fn condition(
        &self,
        cfg: &PolicyConfig,
        inputs: &[&PolicyInput],
    ) -> (Array2<f64>, ConditionCache) {
        let d = cfg.d_model;
        let b = inputs.len();
        let mut cond = Array2::zeros((b, cfg.condition_width()));
        let mut visual = Vec::with_capacity(b);
        for (i, inp) in inputs.iter().enumerate() {
            let (cur, cc) = self.pool_visual(&inp.current, d);
            let (goal, gc) = self.pool_visual(&inp.goal, d);
            cond.slice_mut(s![i, 0..2 * d]).assign(&cur);
            cond.slice_mut(s![i, 2 * d..4 * d]).assign(&goal);
            cond.slice_mut(s![i, 4 * d..5 * d])
                .assign(&self.language.table.row(inp.task_index));
            visual.push([cc, gc]);
        }
        let h = cfg.history_len + 1;
        let hist_in = history_rows(cfg, inputs);
        let (hist_out, history) = self.history_encoder.forward_cached(hist_in.view());
        let hist_flat = hist_out
            .into_shape_with_order((b, h * d))
            .expect("contiguous history tokens");
        cond.slice_mut(s![.., 5 * d..(5 + h) * d])
            .assign(&hist_flat);

        let tok_col = (5 + h) * d;
        let rows: Vec<usize> = if cfg.use_transformation_token {
            (0..b)
                .filter(|&i| inputs[i].object_transform.is_some())
                .collect()
        } else {
            Vec::new()
        };
        let token = if rows.is_empty() {
            None
        } else {
            let mut x = Array2::zeros((rows.len(), 12));
            for (r, &i) in rows.iter().enumerate() {
                let flat = scaled_flat(
                    inputs[i].object_transform.as_ref().expect("filtered"),
                    cfg.translation_scale,
                );
                x.row_mut(r).assign(&Array1::from(flat.to_vec()));
            }
            let (out, cache) = self.token_encoder.forward_cached(x.view());
            for (r, &i) in rows.iter().enumerate() {
                cond.slice_mut(s![i, tok_col..tok_col + d])
                    .assign(&out.row(r));
            }
            Some((rows, cache))
        };
        let tasks = inputs.iter().map(|i| i.task_index).collect();
        (
            cond,
            ConditionCache {
                visual,
                tasks,
                history,
                token,
            },
        )
    }

    pub(crate) fn condition_backward(
        &self,
        cfg: &PolicyConfig,
        cache: &ConditionCache,
        dcond: ArrayView2<f64>,
        grad: &mut PolicyParams,
    ) {
        let d = cfg.d_model;
        let h = cfg.history_len + 1;
        for (i, vc) in cache.visual.iter().enumerate() {
            if let Some(c) = &vc[0] {
                self.unpool_visual(c, dcond.slice(s![i..i + 1, 0..2 * d]), grad);
            }
            if let Some(c) = &vc[1] {
                self.unpool_visual(c, dcond.slice(s![i..i + 1, 2 * d..4 * d]), grad);
            }
            let mut row = grad.language.table.row_mut(cache.tasks[i]);
            row += &dcond.slice(s![i, 4 * d..5 * d]);
        }
        let b = dcond.nrows();
        let dh = dcond
            .slice(s![.., 5 * d..(5 + h) * d])
            .to_owned()
            .into_shape_with_order((b * h, d))
            .expect("contiguous");
        self.history_encoder
            .backward(&cache.history, dh.view(), &mut grad.history_encoder);
        if let Some((rows, tc)) = &cache.token {
            let col = (5 + h) * d;
            let mut dy = Array2::zeros((rows.len(), d));
            for (r, &i) in rows.iter().enumerate() {
                dy.row_mut(r).assign(&dcond.slice(s![i, col..col + d]));
            }
            self.token_encoder
                .backward(tc, dy.view(), &mut grad.token_encoder);
        }
    }

    /// Raw network output for noisy actions `x_t` at steps `t`; see [`Prediction`].
    pub(crate) fn denoise(
        &self,
        cfg: &PolicyConfig,
        cond: ArrayView2<f64>,
        t: &[usize],
        x_t: ArrayView2<f64>,
    ) -> (Array2<f64>, DenoiserCache) {
        let b = cond.nrows();
        let c = cond.ncols();
        let e = cfg.time_embedding;
        let mut input = Array2::zeros((b, c + e + cfg.action_width()));
        input.slice_mut(s![.., 0..c]).assign(&cond);
        for i in 0..b {
            let emb = timestep_embedding(t[i], e);
            input.slice_mut(s![i, c..c + e]).assign(&Array1::from(emb));
        }
        input.slice_mut(s![.., c + e..]).assign(&x_t);
        let (out, mlp) = self.denoiser.forward_cached(input.view());
        (out, DenoiserCache { mlp })
    }

    /// Returns the gradient w.r.t. the pooled condition.
    pub(crate) fn denoise_backward(
        &self,
        cfg: &PolicyConfig,
        cache: &DenoiserCache,
        deps: ArrayView2<f64>,
        grad: &mut PolicyParams,
    ) -> Array2<f64> {
        let dinput = self.denoiser.backward(&cache.mlp, deps, &mut grad.denoiser);
        dinput.slice(s![.., 0..cfg.condition_width()]).to_owned()
    }
}

/// `batch·(m+1) × 12` rows of scaled, flattened history poses.
fn history_rows(cfg: &PolicyConfig, inputs: &[&PolicyInput]) -> Array2<f64> {
    let h = cfg.history_len + 1;
    let mut x = Array2::zeros((inputs.len() * h, 12));
    for (i, inp) in inputs.iter().enumerate() {
        for (j, p) in inp.history.iter().enumerate() {
            x.row_mut(i * h + j).assign(&Array1::from(
                scaled_flat(p, cfg.translation_scale).to_vec(),
            ));
        }
    }
    x
}

/// Encodes each keypose relative to the current end-effector pose as
/// `a_j ∘ current⁻¹`.
pub fn encode_chunk(chunk: &ActionSequence, current: &Pose, scale: f64) -> Vec<f64> {
    let inv = current.inverse();
    let mut out = Vec::with_capacity(chunk.len() * ACTION_DIM);
    for (p, g) in chunk.poses().iter().zip(chunk.gripper()) {
        let delta = p.compose(&inv);
        out.extend((delta.translation / scale).iter());
        out.extend(delta.rotation.to_6d());
        out.push(if *g { 1.0 } else { -1.0 });
    }
    out
}

/// Relative pose encoded in one keypose slot.
pub fn decode_delta(x: &[f64], scale: f64) -> Option<Pose> {
    let rot = Rotation::from_6d(
        &Vector3::new(x[3], x[4], x[5]),
        &Vector3::new(x[6], x[7], x[8]),
    )
    .ok()?;
    Some(Pose::new(rot, Vector3::new(x[0], x[1], x[2]) * scale))
}

/// Inverse of [`encode_chunk`]; undecodable rotations fall back to identity.
pub fn decode_chunk(x: &[f64], current: &Pose, scale: f64) -> ActionSequence {
    let k = x.len() / ACTION_DIM;
    let mut poses = Vec::with_capacity(k);
    let mut gripper = Vec::with_capacity(k);
    for j in 0..k {
        let slot = &x[j * ACTION_DIM..(j + 1) * ACTION_DIM];
        let delta = decode_delta(slot, scale).unwrap_or_else(|| {
            Pose::from_translation(Vector3::new(slot[0], slot[1], slot[2]) * scale)
        });
        poses.push(delta.compose(current));
        gripper.push(slot[9] > 0.0);
    }
    ActionSequence::new(poses, gripper).expect("non-empty chunk")
}

/// Gradient of a loss on the Gram-Schmidt rotation w.r.t. its two raw
/// columns.
pub fn gram_schmidt_backward(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    g: &Matrix3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let na = a.norm();
    let b1 = a / na;
    let u = b - b1 * b1.dot(b);
    let nu = u.norm();
    let b2 = u / nu;
    let (g1, g2, g3) = (
        g.column(0).into_owned(),
        g.column(1).into_owned(),
        g.column(2).into_owned(),
    );
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);
    let gu = (gb2 - b2 * b2.dot(&gb2)) / nu;
    let gb = gu - b1 * b1.dot(&gu);
    gb1 -= gu * b1.dot(b) + b * b1.dot(&gu);
    let ga = (gb1 - b1 * b1.dot(&gb1)) / na;
    (ga, gb)
}
