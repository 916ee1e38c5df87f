use i2a_core::consistency::{
    batched_soft_loss, batched_soft_loss_with_grad, encode_transformation_token, flatten_transform,
    relative_action_transform, soft_pose_loss, LossConfig, TokenEncoderParams,
};
use i2a_core::geometry::{skew, Pose, Rotation};
use i2a_core::nn::Parameters;
use i2a_core::policy::ActionSequence;
use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pose_at(theta: f64, d: f64) -> Pose {
    Pose::new(Rotation::rot_z(theta), Vector3::new(d, 0.0, 0.0))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn loss_is_one_at_both_thresholds() {
    let cfg = LossConfig::default();
    let s = soft_pose_loss(&pose_at(cfg.tau_r, cfg.tau_t), &Pose::identity(), &cfg);
    assert!((s.loss - 1.0).abs() <= 1e-9);
    assert!((s.rotation_term - 0.5).abs() <= 1e-9);
    assert!((s.translation_term - 0.5).abs() <= 1e-9);
}

#[test]
fn loss_is_monotone_on_a_dense_grid() {
    let cfg = LossConfig::default();
    let n = 100;
    let grid: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            (0..n)
                .map(|j| {
                    soft_pose_loss(
                        &pose_at(theta, 0.1 * j as f64 / (n - 1) as f64),
                        &Pose::identity(),
                        &cfg,
                    )
                    .loss
                })
                .collect()
        })
        .collect();
    let mut violations = 0;
    for i in 0..n {
        for j in 0..n {
            if i + 1 < n && grid[i + 1][j] < grid[i][j] {
                violations += 1;
            }
            if j + 1 < n && grid[i][j + 1] < grid[i][j] {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

/// θ at which the rotation term reaches `level`, by bisection on the loss itself.
fn theta_at_level(cfg: &LossConfig, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if soft_pose_loss(&pose_at(mid, 0.0), &Pose::identity(), cfg).rotation_term < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn doubling_slope_halves_transition_width() {
    let cfg = LossConfig::default();
    let steep = LossConfig {
        k_r: 2.0 * cfg.k_r,
        ..cfg
    };
    let width = |c: &LossConfig| theta_at_level(c, 0.75) - theta_at_level(c, 0.25);
    assert!((width(&steep) - 0.5 * width(&cfg)).abs() <= 1e-9);
    assert!((width(&cfg) - 2.0 * 3f64.ln() / cfg.k_r).abs() <= 1e-9);
}

proptest! {
    #[test]
    fn loss_bounds(theta in 0.0..std::f64::consts::PI, d in 0.0..1e3f64) {
        let cfg = LossConfig::default();
        let s = soft_pose_loss(&pose_at(theta, d), &Pose::identity(), &cfg);
        prop_assert!(s.loss > 0.0 && s.loss <= 2.0);
        // Below saturation the upper bound is strict in f64 as well.
        if cfg.k_r * (s.theta - cfg.tau_r) < 30.0 && cfg.k_t * (s.distance - cfg.tau_t) < 30.0 {
            prop_assert!(s.loss < 2.0);
        }
    }

    #[test]
    fn threshold_crossings(tau_r in 0.01..1.0f64, tau_t in 0.001..0.1f64) {
        let cfg = LossConfig { tau_r, tau_t, ..Default::default() };
        let s = soft_pose_loss(&pose_at(tau_r, tau_t), &Pose::identity(), &cfg);
        prop_assert!((s.rotation_term - 0.5).abs() <= 1e-9);
        prop_assert!((s.translation_term - 0.5).abs() <= 1e-9);
    }
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    Pose::new(
        Rotation::uniform(rng),
        Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.0..0.3),
        ),
    )
}

fn random_axis(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.2 && v.norm() < 1.0 {
            return v.normalize();
        }
    }
}

/// Pose near `t_obj` whose rotation and translation deviations sit in the
/// active part of the logistic curves.
fn near_pose(rng: &mut impl Rng, t_obj: &Pose, cfg: &LossConfig) -> Pose {
    let theta = cfg.tau_r + rng.random_range(-0.05..0.05);
    let d = cfg.tau_t + rng.random_range(-0.005..0.005);
    let r = Rotation::exp(&(random_axis(rng) * theta)).compose(&t_obj.rotation);
    Pose::new(r, t_obj.translation + random_axis(rng) * d)
}

#[test]
fn soft_loss_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for _ in 0..100 {
        let t_obj = random_pose(&mut rng);
        let t_act = near_pose(&mut rng, &t_obj, &cfg);
        let s = soft_pose_loss(&t_act, &t_obj, &cfg);
        let f = |p: &Pose| soft_pose_loss(p, &t_obj, &cfg).loss;
        let mut fd = [0.0; 6];
        for i in 0..3 {
            let e = Vector3::ith(i, h);
            let up = Pose::new(
                Rotation::exp(&e).compose(&t_act.rotation),
                t_act.translation,
            );
            let dn = Pose::new(
                Rotation::exp(&-e).compose(&t_act.rotation),
                t_act.translation,
            );
            fd[i] = (f(&up) - f(&dn)) / (2.0 * h);
            let up = Pose::new(t_act.rotation, t_act.translation + e);
            let dn = Pose::new(t_act.rotation, t_act.translation - e);
            fd[3 + i] = (f(&up) - f(&dn)) / (2.0 * h);
        }
        let analytic: Vec<f64> = s
            .grad_omega
            .iter()
            .chain(s.grad_translation.iter())
            .copied()
            .collect();
        assert!(
            rel_err(&analytic, &fd) <= 1e-4,
            "analytic {analytic:?} fd {fd:?}"
        );
        // The Euclidean matrix gradient projects onto the same local derivative.
        for i in 0..3 {
            let dir = skew(&Vector3::ith(i, 1.0)) * t_act.rotation.matrix();
            let proj = s.grad_rotation.component_mul(&dir).sum();
            assert!((proj - s.grad_omega[i]).abs() <= 1e-9 * s.grad_omega.norm().max(1.0));
        }
    }
}

#[test]
fn zero_gradient_at_non_differentiable_points() {
    let cfg = LossConfig::default();
    let t = Pose::new(Rotation::rot_y(0.4), Vector3::new(0.1, 0.2, 0.3));
    let s = soft_pose_loss(&t, &t, &cfg);
    assert_eq!(s.grad_translation, Vector3::zeros());
    assert_eq!(s.grad_omega, Vector3::zeros());
    let flipped = Pose::new(
        Rotation::rot_z(std::f64::consts::PI).compose(&t.rotation),
        t.translation,
    );
    let s = soft_pose_loss(&flipped, &t, &cfg);
    assert!(s.grad_omega.norm() < 1e-6);
}

#[test]
fn batched_loss_is_the_post_grasp_mean() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t_obj = random_pose(&mut rng);
    let poses: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng)).collect();
    let seq = ActionSequence::new(poses.clone(), vec![false; 5]).unwrap();
    let single = batched_soft_loss(&seq, 3, &t_obj, &cfg).unwrap();
    let expected = soft_pose_loss(
        &relative_action_transform(&poses[3], &poses[4]),
        &t_obj,
        &cfg,
    )
    .loss;
    assert_eq!(single, expected);
    let mean = batched_soft_loss(&seq, 1, &t_obj, &cfg).unwrap();
    let recomputed: f64 = (2..5)
        .map(|j| {
            soft_pose_loss(
                &relative_action_transform(&poses[1], &poses[j]),
                &t_obj,
                &cfg,
            )
            .loss
        })
        .sum::<f64>()
        / 3.0;
    assert!((mean - recomputed).abs() < 1e-15);
}

#[test]
fn batched_loss_pose_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-6;
    for _ in 0..20 {
        let t_obj = random_pose(&mut rng);
        let grasp = random_pose(&mut rng);
        // Post-grasp poses near grasp·t_obj keep the loss sensitive.
        let poses: Vec<Pose> = std::iter::once(random_pose(&mut rng))
            .chain(std::iter::once(grasp))
            .chain((0..3).map(|_| near_pose(&mut rng, &t_obj, &cfg).compose(&grasp)))
            .collect();
        let (_, grads) = batched_soft_loss_with_grad(&poses, 1, &t_obj, &cfg).unwrap();
        let f = |ps: &[Pose]| batched_soft_loss_with_grad(ps, 1, &t_obj, &cfg).unwrap().0;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..poses.len() {
            for i in 0..3 {
                let e = Vector3::ith(i, h);
                let mut up = poses.clone();
                up[k].rotation = Rotation::exp(&e).compose(&poses[k].rotation);
                let mut dn = poses.clone();
                dn[k].rotation = Rotation::exp(&-e).compose(&poses[k].rotation);
                numeric.push((f(&up) - f(&dn)) / (2.0 * h));
                let dir: Matrix3<f64> = skew(&Vector3::ith(i, 1.0)) * poses[k].rotation.matrix();
                analytic.push(grads[k].rotation.component_mul(&dir).sum());

                let mut up = poses.clone();
                up[k].translation += e;
                let mut dn = poses.clone();
                dn[k].translation -= e;
                numeric.push((f(&up) - f(&dn)) / (2.0 * h));
                analytic.push(grads[k].translation[i]);
            }
        }
        assert!(rel_err(&analytic, &numeric) <= 1e-4);
        assert!(grads[0].translation == Vector3::zeros() && grads[0].rotation == Matrix3::zeros());
    }
}

#[test]
fn token_encoder_is_deterministic_and_has_correct_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = TokenEncoderParams::init(6, 5, &mut rng);
    let poses: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng)).collect();
    assert_eq!(
        encode_transformation_token(&poses[0], &params),
        encode_transformation_token(&poses[0], &params)
    );

    let x = Array2::from_shape_fn((3, 12), |(i, j)| flatten_transform(&poses[i])[j]);
    let w = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
    let loss = |p: &TokenEncoderParams| (p.forward_cached(x.view()).0 * &w).sum();
    let (_, cache) = params.forward_cached(x.view());
    let mut grad = params.zeros_like();
    params.backward(&cache, w.view(), &mut grad);

    let flat = params.flatten();
    let h = 1e-6;
    let numeric: Vec<f64> = (0..flat.len())
        .map(|k| {
            let mut p = params.clone();
            let mut f = flat.clone();
            f[k] += h;
            p.load_flat(&f);
            let up = loss(&p);
            f[k] -= 2.0 * h;
            p.load_flat(&f);
            (up - loss(&p)) / (2.0 * h)
        })
        .collect();
    assert!(rel_err(&grad.flatten(), &numeric) <= 1e-4);
}
