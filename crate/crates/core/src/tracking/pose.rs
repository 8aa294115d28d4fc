use nalgebra::{Matrix2x3, Matrix3x6, Matrix6, SMatrix, Vector2, Vector3, Vector6};

use super::{TrackerConfig, TrackingError};
use crate::geometry::{skew, CameraIntrinsics, PoseSE3};

/// Residual Jacobian with respect to the left-multiplied twist `(ρ, φ)`.
pub type ReprojectionJacobian = SMatrix<f64, 2, 6>;

const MAX_CONSECUTIVE_INCREASES: usize = 5;

/// Constant-velocity prediction `Δ ∘ prev` with `Δ = prev ∘ prev_prev⁻¹`.
pub fn predict_pose(prev: &PoseSE3, prev_prev: &PoseSE3) -> PoseSE3 {
    let delta = prev.compose(&prev_prev.inverse());
    delta.compose(prev).renormalized()
}

/// Projection of world point `x` through camera-from-world `t_cw`, with the
/// Jacobian of the projection under `t_cw ← Exp(ξ) t_cw`. `None` when the
/// point is not in front of the camera.
pub fn reprojection_jacobian(
    t_cw: &PoseSE3,
    x: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> Option<(Vector2<f64>, ReprojectionJacobian)> {
    let p = t_cw.transform_point(x);
    if !(p.z > 0.0) {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let uv = Vector2::new(k.fx * p.x * inv_z + k.cx, k.fy * p.y * inv_z + k.cy);
    let j_proj = Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * p.x * inv_z * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * p.y * inv_z * inv_z,
    );
    let mut j_point = Matrix3x6::zeros();
    j_point.fixed_view_mut::<3, 3>(0, 0).copy_from(&nalgebra::Matrix3::identity());
    j_point.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&p)));
    Some((uv, j_proj * j_point))
}

/// Applies the twist `(ρ, φ)` on the left.
pub fn apply_twist(t_cw: &PoseSE3, xi: &Vector6<f64>) -> PoseSE3 {
    t_cw.retract_left(&xi.fixed_rows::<3>(0).into_owned(), &xi.fixed_rows::<3>(3).into_owned())
}

fn huber_cost(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

fn robust_cost(t_cw: &PoseSE3, corr: &[(Vector3<f64>, Vector2<f64>)], active: &[bool], k: &CameraIntrinsics, delta: f64) -> f64 {
    let mut cost = 0.0;
    for ((x, uv), &on) in corr.iter().zip(active) {
        if !on {
            continue;
        }
        let p = t_cw.transform_point(x);
        if !(p.z > 0.0) {
            // Behind the camera: charge the linear tail at a large residual.
            cost += huber_cost(1e6, delta);
            continue;
        }
        let r = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy) - uv;
        cost += huber_cost(r.norm(), delta);
    }
    cost
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// World-from-camera.
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
    /// Gauss-Newton iterations over both passes.
    pub iterations: usize,
    pub final_cost: f64,
}

/// Minimises `Σ ρ_δ(‖π(T_cw X_i) − u_i‖)` over the camera-from-world pose
/// with IRLS Gauss-Newton. Steps that raise the cost are halved and
/// retried. After convergence, correspondences with residual > 3δ are
/// flagged and the pose is re-refined on the inliers alone.
pub fn gauss_newton(
    t_cw: PoseSE3,
    corr: &[(Vector3<f64>, Vector2<f64>)],
    active: &[bool],
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<(PoseSE3, usize, f64), TrackingError> {
    let delta = cfg.huber_delta;
    let mut pose = t_cw;
    let mut cost = robust_cost(&pose, corr, active, k, delta);
    let mut iterations = 0;
    let mut increases = 0;
    let mut scale = 1.0;
    while iterations < cfg.gn_max_iters {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for ((x, uv), &on) in corr.iter().zip(active) {
            if !on {
                continue;
            }
            let Some((proj, j)) = reprojection_jacobian(&pose, x, k) else { continue };
            let r = proj - uv;
            let e = r.norm();
            let w = if e <= delta { 1.0 } else { delta / e };
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        let Some(chol) = h.cholesky() else {
            return Err(TrackingError::DegenerateGeometry);
        };
        let xi = -chol.solve(&g) * scale;
        if xi.norm() < cfg.gn_tol {
            break;
        }
        let candidate = apply_twist(&pose, &xi);
        let new_cost = robust_cost(&candidate, corr, active, k, delta);
        if new_cost > cost {
            increases += 1;
            if increases >= MAX_CONSECUTIVE_INCREASES {
                return Err(TrackingError::Diverged { iterations });
            }
            scale *= 0.5;
            continue;
        }
        increases = 0;
        scale = 1.0;
        pose = candidate;
        cost = new_cost;
    }
    Ok((pose, iterations, cost))
}

/// Motion-only refinement of a world-from-camera pose from 3D-2D
/// correspondences `(world point, pixel)`.
pub fn refine_pose(
    initial: &PoseSE3,
    correspondences: &[(Vector3<f64>, Vector2<f64>)],
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<RefineResult, TrackingError> {
    if correspondences.len() < 4 {
        return Err(TrackingError::InsufficientCorrespondences { found: correspondences.len() });
    }
    let all = vec![true; correspondences.len()];
    let (mut t_cw, mut iterations, mut cost) = gauss_newton(initial.inverse(), correspondences, &all, k, cfg)?;
    let mut inliers = classify(&t_cw, correspondences, k, cfg.huber_delta);
    let count = inliers.iter().filter(|&&b| b).count();
    if count < correspondences.len() && count >= 4 {
        let (refit, more, c) = gauss_newton(t_cw, correspondences, &inliers, k, cfg)?;
        t_cw = refit;
        iterations += more;
        cost = c;
        inliers = classify(&t_cw, correspondences, k, cfg.huber_delta);
    }
    Ok(RefineResult { pose: t_cw.inverse().renormalized(), inliers, iterations, final_cost: cost })
}

fn classify(t_cw: &PoseSE3, corr: &[(Vector3<f64>, Vector2<f64>)], k: &CameraIntrinsics, delta: f64) -> Vec<bool> {
    corr.iter()
        .map(|(x, uv)| match reprojection_jacobian(t_cw, x, k) {
            Some((proj, _)) => (proj - uv).norm() <= 3.0 * delta,
            None => false,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn zero_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PoseSE3::from_axis_angle(rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 3.0));
        assert!(predict_pose(&p, &p).max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn constant_translation() {
        let a = PoseSE3::from_axis_angle(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let b = PoseSE3::from_axis_angle(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0));
        let c = predict_pose(&b, &a);
        assert!((c.translation() - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn prediction_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = PoseSE3::from_axis_angle(rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 5.0));
            let b = PoseSE3::from_axis_angle(rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 5.0));
            let (ma, mb) = (a.to_homogeneous(), b.to_homogeneous());
            let want = mb * ma.try_inverse().unwrap() * mb;
            assert!((predict_pose(&b, &a).to_homogeneous() - want).abs().max() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 100 {
            let t_cw = PoseSE3::from_axis_angle(rand_vec(&mut rng, 0.5), rand_vec(&mut rng, 1.0));
            let x = t_cw.inverse().transform_point(&Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(2.0..8.0)));
            let Some((_, j)) = reprojection_jacobian(&t_cw, &x, &k()) else { continue };
            let h = 1e-6;
            for c in 0..6 {
                let mut e = Vector6::zeros();
                e[c] = h;
                let plus = project(&apply_twist(&t_cw, &e).transform_point(&x), &k()).unwrap();
                let minus = project(&apply_twist(&t_cw, &-e).transform_point(&x), &k()).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let col = j.column(c);
                let scale = col.norm().max(1.0);
                assert!((fd - col).norm() / scale < 1e-5, "column {c}: {fd} vs {col}");
            }
            checked += 1;
        }
    }

    fn scene(rng: &mut ChaCha8Rng, truth: &PoseSE3, n: usize) -> Vec<(Vector3<f64>, Vector2<f64>)> {
        (0..n)
            .map(|_| {
                let pc = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(3.0..10.0));
                (truth.transform_point(&pc), project(&pc, &k()).unwrap())
            })
            .collect()
    }

    #[test]
    fn fixed_point_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = PoseSE3::from_axis_angle(rand_vec(&mut rng, 0.5), rand_vec(&mut rng, 2.0));
        let corr = scene(&mut rng, &truth, 30);
        let r = refine_pose(&truth, &corr, &k(), &TrackerConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.pose.max_abs_diff(&truth) < 1e-12);
        assert!(r.inliers.iter().all(|&b| b));
    }

    #[test]
    fn recovers_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let truth = PoseSE3::from_axis_angle(rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 2.0));
            let corr = scene(&mut rng, &truth, 50);
            let dir_r = rand_vec(&mut rng, 1.0).normalize();
            let dir_t = rand_vec(&mut rng, 1.0).normalize();
            let start = PoseSE3::from_axis_angle(dir_r * 0.1, Vector3::zeros()).compose(&truth);
            let start = PoseSE3::from_rotation(nalgebra::Rotation3::from_matrix_unchecked(*start.rotation()), start.translation() + dir_t * 0.1);
            let r = refine_pose(&start, &corr, &k(), &TrackerConfig::default()).unwrap();
            assert!(r.pose.max_abs_diff(&truth) < 1e-6, "{}", r.pose.max_abs_diff(&truth));
            assert!(r.iterations <= 20);
        }
    }

    #[test]
    fn too_few_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let corr = scene(&mut rng, &PoseSE3::identity(), 3);
        assert!(matches!(
            refine_pose(&PoseSE3::identity(), &corr, &k(), &TrackerConfig::default()),
            Err(TrackingError::InsufficientCorrespondences { found: 3 })
        ));
    }

    #[test]
    fn gross_outliers_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = PoseSE3::from_axis_angle(rand_vec(&mut rng, 0.3), rand_vec(&mut rng, 1.0));
        let mut corr = scene(&mut rng, &truth, 60);
        for c in corr.iter_mut().take(6) {
            c.1 += Vector2::new(40.0, -35.0);
        }
        let r = refine_pose(&truth, &corr, &k(), &TrackerConfig::default()).unwrap();
        assert!(r.pose.max_abs_diff(&truth) < 1e-6);
        assert_eq!(r.inliers.iter().filter(|&&b| !b).count(), 6);
        assert!(r.inliers[6..].iter().all(|&b| b));
    }

    #[test]
    fn cost_non_increasing_across_accepted_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = PoseSE3::from_axis_angle(rand_vec(&mut rng, 0.5), rand_vec(&mut rng, 1.0));
        let corr = scene(&mut rng, &truth, 40);
        let active = vec![true; corr.len()];
        let start = PoseSE3::from_axis_angle(Vector3::new(0.08, -0.05, 0.1), Vector3::new(0.1, 0.05, -0.1)).compose(&truth.inverse());
        let mut prev = robust_cost(&start, &corr, &active, &k(), 2.0);
        for iters in 1..10 {
            let cfg = TrackerConfig { gn_max_iters: iters, ..TrackerConfig::default() };
            let (_, _, c) = gauss_newton(start.clone(), &corr, &active, &k(), &cfg).unwrap();
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }
}
