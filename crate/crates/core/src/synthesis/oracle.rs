//! Ground-truth-driven adapters.
//!
//! All four oracles share one [`OracleWorld`] per scene. The editor records
//! which action-object pose each imagined frame shows, keyed by a digest of
//! the frame, so the reconstructor can later return the matching geometry.
//! The canonical reconstruction frame is the anchor body frame divided by
//! `recon_scale`; with the default of 1 the correct assembly scale is 1.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    split_by_labels, AdapterNoise, GoalAdapters, ImageEditor, PoseEstimator, Reconstructor,
    SegmentationOutcome, Segmenter, SynthesisError,
};
use crate::benchmark::{
    render_state, resolve_instruction, SceneTruth, TaskSpec, ACTION_SEGMENT, ANCHOR_SEGMENT,
};
use crate::geometry::{CameraModel, PointCloud, Pose, SceneObservation};

/// Surface samples per object in reconstructed clouds.
pub const ACTION_SAMPLES: usize = 2048;
pub const ANCHOR_SAMPLES: usize = 4096;
const ACTION_SAMPLE_SEED: u64 = 17;
const ANCHOR_SAMPLE_SEED: u64 = 29;

/// Reconstructed-style cloud of the action object at `pose` in the world.
pub fn action_model_cloud(spec: &TaskSpec, pose: &Pose) -> PointCloud {
    let body = spec
        .action_object
        .sample_cloud(ACTION_SAMPLES, ACTION_SAMPLE_SEED, ACTION_SEGMENT);
    place(&body, pose)
}

/// Anchor counterpart of [`action_model_cloud`]; ids continue after the action ids.
pub fn anchor_model_cloud(spec: &TaskSpec, pose: &Pose) -> PointCloud {
    let body = spec
        .anchor_object
        .sample_cloud(ANCHOR_SAMPLES, ANCHOR_SAMPLE_SEED, ANCHOR_SEGMENT);
    let ids = (0..body.len() as u32)
        .map(|i| i + ACTION_SAMPLES as u32)
        .collect();
    place(&body, pose)
        .with_point_ids(ids)
        .expect("matching length")
}

fn place(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    crate::geometry::apply_transform(pose, &crate::geometry::ScaleTransform::unit(), cloud)
}

/// The goal scene as the pipeline should reconstruct it: `background` plus
/// both objects at their goal poses.
pub fn ground_truth_goal_cloud(
    spec: &TaskSpec,
    truth: &SceneTruth,
    background: &PointCloud,
) -> PointCloud {
    background
        .union(&anchor_model_cloud(spec, &truth.anchor))
        .union(&action_model_cloud(spec, &truth.action_goal))
}

/// Content digest of an observation's image planes.
pub fn observation_digest(obs: &SceneObservation) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((obs.width() as u64).to_le_bytes());
    h.update((obs.height() as u64).to_le_bytes());
    for d in &obs.depth {
        h.update(d.to_le_bytes());
    }
    for c in &obs.rgb {
        for v in c {
            h.update(v.to_le_bytes());
        }
    }
    for s in &obs.segmentation {
        h.update(s.to_le_bytes());
    }
    h.finalize().into()
}

/// Ground truth for one scene plus the registry of frames handed out.
pub struct OracleWorld {
    pub spec: TaskSpec,
    pub truth: SceneTruth,
    pub recon_scale: f64,
    initial: SceneObservation,
    shown: HashMap<[u8; 32], Pose>,
}

impl OracleWorld {
    /// Renders and registers the initial frame from `camera`.
    pub fn new(spec: TaskSpec, truth: SceneTruth, camera: &CameraModel) -> Self {
        let initial = render_state(&spec, &truth, &truth.action_initial, camera);
        let mut shown = HashMap::new();
        shown.insert(observation_digest(&initial), truth.action_initial);
        Self {
            spec,
            truth,
            recon_scale: 1.0,
            initial,
            shown,
        }
    }

    pub fn with_recon_scale(mut self, s: f64) -> Self {
        self.recon_scale = s;
        self
    }

    pub fn initial_observation(&self) -> &SceneObservation {
        &self.initial
    }

    pub fn register(&mut self, obs: &SceneObservation, action_pose: Pose) {
        self.shown.insert(observation_digest(obs), action_pose);
    }

    /// Action-object pose depicted by a frame this world produced.
    pub fn shown_action_pose(&self, obs: &SceneObservation) -> Option<Pose> {
        self.shown.get(&observation_digest(obs)).copied()
    }

    /// Wraps the world into the four oracle adapters. Each adapter draws from
    /// its own stream of the noise seed.
    pub fn into_adapters(self, noise: AdapterNoise) -> Result<GoalAdapters, SynthesisError> {
        noise.validate()?;
        let world = Arc::new(Mutex::new(self));
        let stream = |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(k);
            rng
        };
        Ok(GoalAdapters {
            editor: Box::new(OracleEditor {
                world: world.clone(),
                noise,
                rng: stream(1),
            }),
            segmenter: Box::new(OracleSegmenter {
                noise,
                rng: stream(2),
            }),
            reconstructor: Box::new(OracleReconstructor {
                world: world.clone(),
                noise,
                rng: stream(3),
            }),
            pose_estimator: Box::new(OraclePoseEstimator {
                world,
                noise,
                rng: stream(4),
            }),
        })
    }
}

type SharedWorld = Arc<Mutex<OracleWorld>>;

fn lock(world: &SharedWorld) -> std::sync::MutexGuard<'_, OracleWorld> {
    world.lock().unwrap_or_else(|e| e.into_inner())
}

/// Renders the true goal with the action object's pose perturbed.
pub struct OracleEditor {
    world: SharedWorld,
    noise: AdapterNoise,
    rng: ChaCha8Rng,
}

impl ImageEditor for OracleEditor {
    fn imagine(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SceneObservation, SynthesisError> {
        let mut world = lock(&self.world);
        match resolve_instruction(instruction) {
            Some(id) if id == world.spec.task_id => {}
            _ => return Err(SynthesisError::UnknownTask(instruction.to_string())),
        }
        let pose = self.noise.perturb(&world.truth.action_goal, &mut self.rng);
        let goal = render_state(&world.spec, &world.truth, &pose, &obs.camera);
        world.register(&goal, pose);
        Ok(goal)
    }
}

/// Splits by the rendered segmentation channel.
pub struct OracleSegmenter {
    noise: AdapterNoise,
    rng: ChaCha8Rng,
}

impl Segmenter for OracleSegmenter {
    fn segment(
        &mut self,
        obs: &SceneObservation,
        instruction: &str,
    ) -> Result<SegmentationOutcome, SynthesisError> {
        if resolve_instruction(instruction).is_none() {
            return Err(SynthesisError::UnknownTask(instruction.to_string()));
        }
        let mut out = split_by_labels(obs)?;
        out.foreground_cloud = drop_points(
            &out.foreground_cloud,
            self.noise.dropout_frac,
            &mut self.rng,
        );
        Ok(out)
    }
}

/// Removes `round(frac·n)` points chosen uniformly, keeping order.
fn drop_points<R: Rng + ?Sized>(cloud: &PointCloud, frac: f64, rng: &mut R) -> PointCloud {
    let n = cloud.len();
    let k = (frac * n as f64).round() as usize;
    if k == 0 {
        return cloud.clone();
    }
    let mut keep = vec![true; n];
    for i in sample(rng, n, k) {
        keep[i] = false;
    }
    cloud.filter(|i| keep[i])
}

/// Returns exact object models in the canonical frame, with dropout and
/// uniform outliers inside the workspace.
pub struct OracleReconstructor {
    world: SharedWorld,
    noise: AdapterNoise,
    rng: ChaCha8Rng,
}

impl Reconstructor for OracleReconstructor {
    fn reconstruct(
        &mut self,
        obs: &SceneObservation,
        foreground_ids: &BTreeSet<u32>,
    ) -> Result<PointCloud, SynthesisError> {
        let world = lock(&self.world);
        if foreground_ids.is_empty() {
            return Err(SynthesisError::SegmentNotFound(ACTION_SEGMENT));
        }
        if let Some(missing) = foreground_ids.iter().find(|id| !obs.contains_segment(**id)) {
            return Err(SynthesisError::SegmentNotFound(*missing));
        }
        let action_pose = world.shown_action_pose(obs).ok_or_else(|| {
            SynthesisError::Adapter("observation was not produced by this oracle world".into())
        })?;
        let mut fore = PointCloud::empty();
        if foreground_ids.contains(&ACTION_SEGMENT) {
            fore = fore.union(&action_model_cloud(&world.spec, &action_pose));
        }
        if foreground_ids.contains(&ANCHOR_SEGMENT) {
            fore = fore.union(&anchor_model_cloud(&world.spec, &world.truth.anchor));
        }
        let to_canonical = world.truth.anchor.inverse();
        let inv_scale = 1.0 / world.recon_scale;
        let fore = fore.map_points(|p| to_canonical.apply(p) * inv_scale);
        let fore = drop_points(&fore, self.noise.dropout_frac, &mut self.rng);

        let n = fore.len();
        let k = (self.noise.outlier_frac * n as f64).round() as usize;
        if k == 0 {
            return Ok(fore);
        }
        let bounds = world.spec.workspace;
        let mut points = fore.points().to_vec();
        for i in sample(&mut self.rng, n, k) {
            let w = Vector3::from_fn(|d, _| self.rng.random_range(bounds.min[d]..=bounds.max[d]));
            points[i] = to_canonical.apply(&w) * inv_scale;
        }
        Ok(fore.with_positions(points))
    }
}

/// Ground-truth anchor pose with rigid noise.
pub struct OraclePoseEstimator {
    world: SharedWorld,
    noise: AdapterNoise,
    rng: ChaCha8Rng,
}

impl PoseEstimator for OraclePoseEstimator {
    fn estimate_anchor(
        &mut self,
        obs: &SceneObservation,
        anchor_id: u32,
    ) -> Result<Pose, SynthesisError> {
        if !obs.contains_segment(anchor_id) {
            return Err(SynthesisError::SegmentNotFound(anchor_id));
        }
        let world = lock(&self.world);
        Ok(self.noise.perturb(&world.truth.anchor, &mut self.rng))
    }
}
