use i2a_core::geometry::{
    apply_transform, geodesic_distance, PointCloud, Pose, Rotation, ScaleTransform,
};
use i2a_core::registration::{
    centroid_alignment, icp_register, kabsch_points, kabsch_register, residual_rmsd,
};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_cloud(rng: &mut impl Rng, n: usize, half: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Pose::new(Rotation::uniform(rng), t)
}

fn add_noise(rng: &mut impl Rng, c: &PointCloud, sigma: f64) -> PointCloud {
    let nd = Normal::new(0.0, sigma).unwrap();
    PointCloud::new(
        c.points()
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| nd.sample(rng)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn recovers_random_transforms_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let src = random_cloud(&mut rng, 50, 0.2);
        let truth = random_pose(&mut rng);
        let dst = apply_transform(&truth, &ScaleTransform::unit(), &src);
        let r = kabsch_register(&src, &dst).unwrap();
        assert!(geodesic_distance(&r.transform.rotation, &truth.rotation) <= 1e-7);
        assert!((r.transform.translation - truth.translation).norm() <= 1e-9);
        assert!(r.rmsd < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn left_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_cloud(&mut rng, 20, 0.3);
        let moved = apply_transform(&random_pose(&mut rng), &ScaleTransform::unit(), &src);
        let dst = add_noise(&mut rng, &moved, 0.01);
        let q = random_pose(&mut rng);
        let t = kabsch_register(&src, &dst).unwrap().transform;
        let qs = apply_transform(&q, &ScaleTransform::unit(), &src);
        let qd = apply_transform(&q, &ScaleTransform::unit(), &dst);
        let got = kabsch_register(&qs, &qd).unwrap().transform;
        let expected = q * t * q.inverse();
        prop_assert!((got.to_matrix() - expected.to_matrix()).abs().max() <= 1e-7);
    }

    #[test]
    fn rmsd_matches_recomputed_residual(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_cloud(&mut rng, 30, 0.5);
        let moved = apply_transform(&random_pose(&mut rng), &ScaleTransform::unit(), &src);
        let dst = add_noise(&mut rng, &moved, 0.05);
        let r = kabsch_register(&src, &dst).unwrap();
        let mut sum = 0.0;
        for (a, b) in src.points().iter().zip(dst.points()) {
            let m = r.transform.to_matrix() * a.push(1.0);
            sum += (m.xyz() - b).norm_squared();
        }
        prop_assert!((r.rmsd - (sum / src.len() as f64).sqrt()).abs() <= 1e-12);
        prop_assert!(r.rmsd >= 0.0);
        prop_assert!((r.transform.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }
}

/// Alignment score `tr(R·H)` for centered point sets; the least-squares
/// objective is a constant minus twice this.
fn alignment_score(r: &Matrix3<f64>, h: &Matrix3<f64>) -> f64 {
    (r * h).trace()
}

fn euler_zyx(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    *Rotation::rot_z(a).matrix() * *Rotation::rot_y(b).matrix() * *Rotation::rot_x(c).matrix()
}

#[test]
fn reflection_case_matches_constrained_grid_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    let mut cases = 0;
    while cases < 10 {
        // Planar source; the target is a mirrored, rotated copy with out-of-plane
        // noise, which pushes the unconstrained optimum to det = -1.
        let src: Vec<Vector3<f64>> = (0..12)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                )
            })
            .collect();
        let rot = Rotation::uniform(&mut rng);
        let nd = Normal::new(0.0, 0.3).unwrap();
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| rot.matrix() * (mirror * (p + Vector3::new(0.0, 0.0, nd.sample(&mut rng)))))
            .collect();
        let cs = src.iter().sum::<Vector3<f64>>() / src.len() as f64;
        let cd = dst.iter().sum::<Vector3<f64>>() / dst.len() as f64;
        let h: Matrix3<f64> = src
            .iter()
            .zip(&dst)
            .map(|(a, b)| (a - cs) * (b - cd).transpose())
            .sum();
        let svd = h.svd(true, true);
        let unconstrained = svd.v_t.unwrap().transpose() * svd.u.unwrap().transpose();
        if unconstrained.determinant() > 0.0 {
            continue;
        }
        cases += 1;

        let r = kabsch_points(&src, &dst).unwrap();
        let rk = *r.transform.rotation.matrix();
        assert!((rk.determinant() - 1.0).abs() < 1e-9);

        let step = 2f64.to_radians();
        let mut best = (f64::NEG_INFINITY, Matrix3::identity());
        for i in 0..180 {
            for j in 0..=90 {
                for k in 0..180 {
                    let m = euler_zyx(
                        -std::f64::consts::PI + i as f64 * step,
                        -std::f64::consts::FRAC_PI_2 + j as f64 * step,
                        -std::f64::consts::PI + k as f64 * step,
                    );
                    let s = alignment_score(&m, &h);
                    if s > best.0 {
                        best = (s, m);
                    }
                }
            }
        }
        assert!(
            alignment_score(&rk, &h) >= best.0 - 1e-12,
            "grid beat the closed form"
        );
        let grid_best = Rotation::from_matrix(best.1).unwrap();
        assert!(geodesic_distance(&r.transform.rotation, &grid_best) < 4f64.to_radians());
    }
}

#[test]
fn noisy_registration_statistics() {
    let sigma = 1e-3;
    let n = 500;
    let lo = 0.8 * sigma * 3f64.sqrt();
    let hi = 1.2 * sigma * 3f64.sqrt();
    let t_bound = 5.0 * sigma / (n as f64).sqrt();
    let mut worst_t: f64 = 0.0;
    let (mut min_rmsd, mut max_rmsd) = (f64::INFINITY, 0.0f64);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let src = random_cloud(&mut rng, n, 0.1);
        let truth = random_pose(&mut rng);
        let moved = apply_transform(&truth, &ScaleTransform::unit(), &src);
        let dst = add_noise(&mut rng, &moved, sigma);
        let r = kabsch_register(&src, &dst).unwrap();
        worst_t = worst_t.max((r.transform.translation - truth.translation).norm());
        min_rmsd = min_rmsd.min(r.rmsd);
        max_rmsd = max_rmsd.max(r.rmsd);
    }
    assert!(
        min_rmsd >= lo && max_rmsd <= hi,
        "rmsd range [{min_rmsd}, {max_rmsd}] outside [{lo}, {hi}]"
    );
    assert!(
        worst_t <= t_bound,
        "translation error {worst_t} > {t_bound}"
    );
}

#[test]
fn icp_converges_from_small_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let src = random_cloud(&mut rng, 300, 0.1);
        let truth = Pose::new(
            Rotation::exp(&Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            )),
            Vector3::new(0.01, -0.005, 0.008),
        );
        let mut dst = apply_transform(&truth, &ScaleTransform::unit(), &src);
        // Shuffle so index pairing is meaningless.
        let mut idx: Vec<usize> = (0..dst.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        dst = dst.select(&idx);
        let r = icp_register(&src, &dst, &centroid_alignment(&src, &dst)).unwrap();
        assert!(r.rmsd < 1e-6, "rmsd {}", r.rmsd);
        assert!(geodesic_distance(&r.transform.rotation, &truth.rotation) < 1e-6);
        assert!(
            residual_rmsd(
                &r.transform,
                src.points(),
                &apply_transform(&truth, &ScaleTransform::unit(), &src)
                    .points()
                    .to_vec()
            ) < 1e-6
        );
    }
}
