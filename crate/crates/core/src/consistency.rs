//! Object–action consistency: the transformation token and the soft pose
//! loss that ties predicted end-effector motion to the object's motion.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::nn::{sigmoid, silu, silu_grad, Linear, Mlp, MlpCache, Parameters};
use crate::policy::ActionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Rotation tolerance, radians.
    pub tau_r: f64,
    /// Translation tolerance, meters.
    pub tau_t: f64,
    /// Logistic slope per radian.
    pub k_r: f64,
    /// Logistic slope per meter.
    pub k_t: f64,
    pub lambda_pose: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_r: 0.1,
            tau_t: 0.01,
            k_r: 50.0,
            k_t: 500.0,
            lambda_pose: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsistencyError {
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("grasp index {index} outside sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ConsistencyError> {
        let fin = [self.tau_r, self.tau_t, self.k_r, self.k_t, self.lambda_pose]
            .iter()
            .all(|v| v.is_finite());
        if !fin {
            return Err(ConsistencyError::InvalidConfig("non-finite value"));
        }
        if self.tau_r < 0.0 || self.tau_t < 0.0 {
            return Err(ConsistencyError::InvalidConfig(
                "tolerances must be non-negative",
            ));
        }
        if !(self.k_r > 0.0 && self.k_t > 0.0) {
            return Err(ConsistencyError::InvalidConfig("slopes must be positive"));
        }
        if self.lambda_pose < 0.0 {
            return Err(ConsistencyError::InvalidConfig(
                "lambda_pose must be non-negative",
            ));
        }
        Ok(())
    }
}

/// End-effector motion since the grasp: `a_t ∘ a_grasp⁻¹`.
pub fn relative_action_transform(a_grasp: &Pose, a_t: &Pose) -> Pose {
    a_t.compose(&a_grasp.inverse())
}

/// Row-major rotation entries followed by the translation.
pub fn flatten_transform(t: &Pose) -> [f64; 12] {
    let r = t.rotation.matrix();
    let p = t.translation;
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        p.x,
        p.y,
        p.z,
    ]
}

/// Value and gradients of the soft pose loss for one relative transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLoss {
    pub loss: f64,
    pub rotation_term: f64,
    pub translation_term: f64,
    /// Geodesic angle between the action and object rotations.
    pub theta: f64,
    /// Distance between the action and object translations.
    pub distance: f64,
    /// Gradient w.r.t. a left axis-angle increment `R ← exp(ω̂)·R` of the
    /// action rotation, at `ω = 0`.
    pub grad_omega: Vector3<f64>,
    pub grad_translation: Vector3<f64>,
    /// Euclidean gradient w.r.t. the entries of the action rotation matrix.
    pub grad_rotation: Matrix3<f64>,
}

/// Sum of logistic penalties on the rotation and translation deviation of
/// `t_act` from `t_obj`.
///
/// Where the loss is not differentiable (clamped arccos, `d = 0`) the
/// corresponding gradient contribution is zero.
pub fn soft_pose_loss(t_act: &Pose, t_obj: &Pose, cfg: &LossConfig) -> SoftLoss {
    let r_act = t_act.rotation.matrix();
    let r_obj = t_obj.rotation.matrix();
    let c_raw = ((r_act.transpose() * r_obj).trace() - 1.0) / 2.0;
    let c = c_raw.clamp(-1.0, 1.0);
    let theta = c.acos();
    let interior = c_raw > -1.0 && c_raw < 1.0;
    let dtheta_dc = if interior {
        -1.0 / (1.0 - c * c).sqrt()
    } else {
        0.0
    };

    let diff = t_act.translation - t_obj.translation;
    let distance = diff.norm();

    let rotation_term = sigmoid(cfg.k_r * (theta - cfg.tau_r));
    let translation_term = sigmoid(cfg.k_t * (distance - cfg.tau_t));
    let dl_dtheta = cfg.k_r * rotation_term * (1.0 - rotation_term);
    let dl_dd = cfg.k_t * translation_term * (1.0 - translation_term);

    let m = r_obj * r_act.transpose();
    let asym = m - m.transpose();
    let vee = Vector3::new(asym[(2, 1)], asym[(0, 2)], asym[(1, 0)]);
    let grad_omega = vee * (dl_dtheta * dtheta_dc * 0.5);
    let grad_rotation = r_obj * (dl_dtheta * dtheta_dc * 0.5);
    let grad_translation = if distance > 0.0 {
        diff * (dl_dd / distance)
    } else {
        Vector3::zeros()
    };

    SoftLoss {
        loss: rotation_term + translation_term,
        rotation_term,
        translation_term,
        theta,
        distance,
        grad_omega,
        grad_translation,
        grad_rotation,
    }
}

/// Gradients of a scalar w.r.t. the rotation matrix and translation of a pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGrad {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Pulls gradients on `T = a_t · a_g⁻¹` back to the two poses, returning
/// `(∂/∂a_t, ∂/∂a_g)`.
pub fn relative_transform_backward(
    a_grasp: &Pose,
    a_t: &Pose,
    g_rot: &Matrix3<f64>,
    g_trans: &Vector3<f64>,
) -> (PoseGrad, PoseGrad) {
    let rg = a_grasp.rotation.matrix();
    let rj = a_t.rotation.matrix();
    let pg = a_grasp.translation;
    let q = rg.transpose() * pg;
    let at = PoseGrad {
        rotation: g_rot * rg - g_trans * q.transpose(),
        translation: *g_trans,
    };
    let ag = PoseGrad {
        rotation: g_rot.transpose() * rj - pg * (g_trans.transpose() * rj),
        translation: -(rg * (rj.transpose() * g_trans)),
    };
    (at, ag)
}

/// Mean soft loss over the poses strictly after `grasp_index`; zero when the
/// sequence ends at the grasp.
pub fn batched_soft_loss(
    pred: &ActionSequence,
    grasp_index: usize,
    t_obj: &Pose,
    cfg: &LossConfig,
) -> Result<f64, ConsistencyError> {
    batched_soft_loss_with_grad(pred.poses(), grasp_index, t_obj, cfg).map(|(l, _)| l)
}

/// As [`batched_soft_loss`] on bare poses, with the gradient for every pose
/// (the grasp pose included, since each relative transform depends on it).
pub fn batched_soft_loss_with_grad(
    poses: &[Pose],
    grasp_index: usize,
    t_obj: &Pose,
    cfg: &LossConfig,
) -> Result<(f64, Vec<PoseGrad>), ConsistencyError> {
    if grasp_index >= poses.len() {
        return Err(ConsistencyError::IndexOutOfRange {
            index: grasp_index,
            len: poses.len(),
        });
    }
    let mut grads = vec![PoseGrad::default(); poses.len()];
    let after = poses.len() - grasp_index - 1;
    if after == 0 {
        return Ok((0.0, grads));
    }
    let w = 1.0 / after as f64;
    let a_g = poses[grasp_index];
    let mut total = 0.0;
    for j in grasp_index + 1..poses.len() {
        let rel = relative_action_transform(&a_g, &poses[j]);
        let s = soft_pose_loss(&rel, t_obj, cfg);
        total += s.loss;
        let (gt, gg) = relative_transform_backward(
            &a_g,
            &poses[j],
            &(s.grad_rotation * w),
            &(s.grad_translation * w),
        );
        grads[j].rotation += gt.rotation;
        grads[j].translation += gt.translation;
        grads[grasp_index].rotation += gg.rotation;
        grads[grasp_index].translation += gg.translation;
    }
    Ok((total * w, grads))
}

/// Learned embedding of the object transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationToken {
    pub vector: Vec<f64>,
}

impl TransformationToken {
    /// Placeholder used when the token is ablated; keeps the layout fixed.
    pub fn zero(d_model: usize) -> Self {
        Self {
            vector: vec![0.0; d_model],
        }
    }
}

/// Scalar encoder `12 → h → d` followed by an aggregator `d → d`, with SiLU
/// between all layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoderParams {
    pub scalar_encoder: Mlp,
    pub aggregator: Linear,
}

pub struct TokenEncoderCache {
    encoder: MlpCache,
    encoded: Array2<f64>,
    activated: Array2<f64>,
}

impl TokenEncoderParams {
    pub fn init<R: Rng + ?Sized>(hidden: usize, d_model: usize, rng: &mut R) -> Self {
        Self {
            scalar_encoder: Mlp::init(&[12, hidden, d_model], rng),
            aggregator: Linear::init(d_model, d_model, rng),
        }
    }

    pub fn zeros(hidden: usize, d_model: usize) -> Self {
        Self {
            scalar_encoder: Mlp::zeros(&[12, hidden, d_model]),
            aggregator: Linear::zeros(d_model, d_model),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scalar_encoder: self.scalar_encoder.zeros_like(),
            aggregator: self.aggregator.zeros_like(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.aggregator.output_dim()
    }

    /// Encodes a batch of flattened transforms (`batch × 12`).
    pub fn forward_cached(&self, flat: ArrayView2<f64>) -> (Array2<f64>, TokenEncoderCache) {
        let (encoded, encoder) = self.scalar_encoder.forward_cached(flat);
        let activated = encoded.mapv(silu);
        let out = self.aggregator.forward(activated.view());
        (
            out,
            TokenEncoderCache {
                encoder,
                encoded,
                activated,
            },
        )
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input rows.
    pub fn backward(
        &self,
        cache: &TokenEncoderCache,
        dy: ArrayView2<f64>,
        grad: &mut TokenEncoderParams,
    ) -> Array2<f64> {
        let mut d = self
            .aggregator
            .backward(cache.activated.view(), dy, &mut grad.aggregator);
        d.zip_mut_with(&cache.encoded, |g, z| *g *= silu_grad(*z));
        self.scalar_encoder
            .backward(&cache.encoder, d.view(), &mut grad.scalar_encoder)
    }
}

impl Parameters for TokenEncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.scalar_encoder
            .visit(&format!("{prefix}.scalar_encoder"), f);
        self.aggregator.visit(&format!("{prefix}.aggregator"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.scalar_encoder.visit_mut(f);
        self.aggregator.visit_mut(f);
    }
}

pub fn encode_transformation_token(t: &Pose, params: &TokenEncoderParams) -> TransformationToken {
    let flat = Array1::from(flatten_transform(t).to_vec()).insert_axis(ndarray::Axis(0));
    let (out, _) = params.forward_cached(flat.view());
    TransformationToken {
        vector: out.row(0).to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn relative_transform_examples() {
        let g = Pose::new(Rotation::rot_z(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let a = Pose::new(Rotation::rot_z(PI), Vector3::new(0.0, 1.0, 0.0));
        let rel = relative_action_transform(&g, &g);
        assert!(
            (rel.to_matrix() - nalgebra::Matrix4::identity())
                .abs()
                .max()
                < 1e-12
        );
        assert_eq!(
            relative_action_transform(&Pose::identity(), &a).to_matrix(),
            a.to_matrix()
        );
        let expected = a.to_matrix() * g.to_matrix().try_inverse().unwrap();
        assert!(
            (relative_action_transform(&g, &a).to_matrix() - expected)
                .abs()
                .max()
                < 1e-12
        );
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(
            flatten_transform(&Pose::identity()),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        );
        let t = flatten_transform(&Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!(&t[9..], &[1.0, 2.0, 3.0]);
        let r = flatten_transform(&Pose::from_rotation(Rotation::rot_z(FRAC_PI_2)));
        let expected = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weight_encoder_returns_bias() {
        let mut p = TokenEncoderParams::zeros(8, 4);
        p.aggregator.bias = Array1::from(vec![0.5, -1.0, 0.0, 2.0]);
        let tok =
            encode_transformation_token(&Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)), &p);
        assert_eq!(tok.vector, vec![0.5, -1.0, 0.0, 2.0]);
    }

    #[test]
    fn identical_pose_gives_zero_deviation_loss() {
        let cfg = LossConfig::default();
        let t = Pose::new(Rotation::rot_x(0.3), Vector3::new(0.1, 0.0, 0.2));
        let s = soft_pose_loss(&t, &t, &cfg);
        let expected = sigmoid(-cfg.k_r * cfg.tau_r) + sigmoid(-cfg.k_t * cfg.tau_t);
        assert!((s.loss - expected).abs() < 1e-12);
        assert!(s.loss < 1.0);
        assert_eq!(s.grad_translation, Vector3::zeros());
    }

    #[test]
    fn grasp_index_bounds() {
        let seq = ActionSequence::new(vec![Pose::identity(); 3], vec![false; 3]).unwrap();
        let cfg = LossConfig::default();
        assert_eq!(batched_soft_loss(&seq, 2, &Pose::identity(), &cfg), Ok(0.0));
        assert_eq!(
            batched_soft_loss(&seq, 3, &Pose::identity(), &cfg),
            Err(ConsistencyError::IndexOutOfRange { index: 3, len: 3 })
        );
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig {
            k_r: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            tau_t: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            lambda_pose: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
