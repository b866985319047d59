//! RANSAC over motion-field observations.
//!
//! Hypotheses come from minimal samples solved with the linear motion-field
//! system. An observation is an inlier when both the finite-motion
//! prediction of its current direction and its linearised flow residual fall
//! under their thresholds. The iteration bound shrinks adaptively with the
//! best consensus ratio and the loop exits early once that ratio exceeds
//! `early_termination_ratio`.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lie::exp_so3;
use crate::motionfield::{solve_twist_indexed, MotionConstraint, Twist, TwistSolution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Desired probability of drawing at least one clean sample.
    pub success_probability: f64,
    pub sample_size: usize,
    pub max_iterations: usize,
    /// Stop as soon as the consensus ratio exceeds this.
    pub early_termination_ratio: f64,
    /// Angular reprojection threshold (radians) that `tau_u` derives from.
    pub tau_pi: f64,
    /// Threshold on the angle between observed and predicted directions (radians).
    pub tau_theta: f64,
    /// Threshold on the flow residual norm (ray units or pixels).
    pub tau_u: f64,
    /// Use `log(1 - w^n_s)` instead of `log(1 - w)` in the adaptive bound.
    pub textbook_adaptation: bool,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self::for_rays(1.0f64.to_radians())
    }
}

impl RansacParams {
    fn base(tau_pi: f64, tau_u: f64) -> Self {
        Self {
            success_probability: 0.9999,
            sample_size: 3,
            max_iterations: 100,
            early_termination_ratio: 0.9,
            tau_pi,
            tau_theta: tau_pi,
            tau_u,
            textbook_adaptation: false,
        }
    }

    /// Thresholds for ray observations: `tau_u = 2 sin(tau_pi / 2)`.
    pub fn for_rays(tau_pi: f64) -> Self {
        Self::base(tau_pi, ray_flow_threshold(tau_pi))
    }

    /// Thresholds for pixel observations: `tau_u = f tan(tau_pi)`.
    pub fn for_pixels(tau_pi: f64, focal: f64) -> Self {
        Self::base(tau_pi, pixel_flow_threshold(tau_pi, focal))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.success_probability > 0.0
            && self.success_probability < 1.0
            && self.sample_size >= 3
            && self.max_iterations >= 1
            && self.early_termination_ratio > 0.0
            && self.early_termination_ratio <= 1.0
            && self.tau_theta > 0.0
            && self.tau_u > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid RANSAC parameters: {self:?}")))
        }
    }
}

pub fn ray_flow_threshold(tau_pi: f64) -> f64 {
    2.0 * (0.5 * tau_pi).sin()
}

pub fn pixel_flow_threshold(tau_pi: f64, focal: f64) -> f64 {
    focal * tau_pi.tan()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub twist: Twist,
    /// Sorted, unique indices into the input observations.
    pub inliers: Vec<usize>,
    pub iterations: usize,
    /// Iteration bound in force when the loop ended.
    pub bound: usize,
    /// Iteration that produced the best hypothesis (0 if none).
    pub best_iteration: usize,
    /// RMS flow residual over the inliers.
    pub residual_rms: f64,
}

impl RansacResult {
    fn empty() -> Self {
        Self {
            twist: Twist::zero(),
            inliers: Vec::new(),
            iterations: 0,
            bound: 0,
            best_iteration: 0,
            residual_rms: 0.0,
        }
    }
}

/// Angle between two vectors, robust near 0 and pi.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Both inlier tests with strict inequalities.
pub fn inlier_test<O: MotionConstraint>(obs: &O, twist: &Twist, params: &RansacParams) -> bool {
    let predicted = exp_so3(&twist.omega).inverse() * (obs.landmark() - twist.v);
    angle_between(&obs.observed_direction(), &predicted) < params.tau_theta
        && obs.flow_residual(twist) < params.tau_u
}

/// Solves on `subset` and classifies every observation against the result.
pub fn estimate<O: MotionConstraint>(
    obs: &[O],
    subset: &[usize],
    params: &RansacParams,
) -> Result<(TwistSolution, Vec<usize>)> {
    let solution = solve_twist_indexed(obs, subset)?;
    let inliers = (0..obs.len())
        .filter(|&i| inlier_test(&obs[i], &solution.twist, params))
        .collect();
    Ok((solution, inliers))
}

/// `min(ceil(log(1 - Q) / log(1 - w)), current)`.
pub fn adaptive_iterations(inlier_ratio: f64, current: usize, params: &RansacParams) -> usize {
    if !(inlier_ratio > 0.0) {
        return current;
    }
    if inlier_ratio >= 1.0 {
        return 1.min(current);
    }
    let w = if params.textbook_adaptation {
        inlier_ratio.powi(params.sample_size as i32)
    } else {
        inlier_ratio
    };
    let denom = (1.0 - w).ln();
    if denom == 0.0 {
        return current;
    }
    let needed = ((1.0 - params.success_probability).ln() / denom).ceil();
    if needed.is_finite() && needed < current as f64 {
        (needed.max(1.0)) as usize
    } else {
        current
    }
}

pub fn ransac<O: MotionConstraint>(obs: &[O], params: &RansacParams, seed: u64) -> RansacResult {
    let n = obs.len();
    if n < params.sample_size {
        return RansacResult::empty();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bound = params.max_iterations;
    let mut best_twist = Twist::zero();
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut best_iteration = 0;

    while iterations < bound {
        iterations += 1;
        let sample = rand::seq::index::sample(&mut rng, n, params.sample_size).into_vec();
        let Ok((solution, inliers)) = estimate(obs, &sample, params) else {
            continue;
        };
        if !solution.twist.is_valid() {
            continue;
        }
        if inliers.len() > best_inliers.len() {
            best_twist = solution.twist;
            best_inliers = inliers;
            best_iteration = iterations;
            let ratio = best_inliers.len() as f64 / n as f64;
            if ratio > params.early_termination_ratio {
                break;
            }
            bound = adaptive_iterations(ratio, bound, params);
        }
    }

    if best_inliers.len() > params.sample_size {
        if let Ok((solution, inliers)) = estimate(obs, &best_inliers, params) {
            if solution.twist.is_valid() && inliers.len() >= best_inliers.len() {
                best_twist = solution.twist;
                best_inliers = inliers;
            }
        }
    }

    let residual_rms = if best_inliers.is_empty() {
        0.0
    } else {
        let sq: f64 = best_inliers
            .iter()
            .map(|&i| obs[i].flow_residual(&best_twist).powi(2))
            .sum();
        (sq / best_inliers.len() as f64).sqrt()
    };
    RansacResult {
        twist: best_twist,
        inliers: best_inliers,
        iterations,
        bound,
        best_iteration,
        residual_rms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Ray;
    use crate::motionfield::{predict_ray_flow, RayObservation};
    use rand::Rng;

    fn unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                return v.normalize();
            }
        }
    }

    // Forward-facing scene with exact finite-motion flows (so both tests agree).
    fn scene(rng: &mut impl Rng, n: usize, twist: &Twist) -> Vec<RayObservation> {
        let r_rel = exp_so3(&twist.omega);
        (0..n)
            .map(|_| {
                let p = Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(2.0..15.0),
                );
                let cur = Ray::new_normalize(r_rel.inverse() * (p - twist.v));
                RayObservation::from_rays(p, &cur)
            })
            .collect()
    }

    fn linear_scene(rng: &mut impl Rng, n: usize, twist: &Twist) -> Vec<RayObservation> {
        (0..n)
            .map(|_| {
                let p = Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(2.0..15.0),
                );
                let r = Ray::new_normalize(p);
                RayObservation::new(r, predict_ray_flow(&r, p.norm(), twist), p.norm())
            })
            .collect()
    }

    fn twist() -> Twist {
        Twist::new(Vector3::new(0.004, -0.006, 0.002), Vector3::new(0.02, -0.01, 0.05))
    }

    #[test]
    fn thresholds_follow_tau_pi() {
        let p = RansacParams::for_rays(0.02);
        assert!((p.tau_u - 2.0 * 0.01f64.sin()).abs() < 1e-15);
        let p = RansacParams::for_pixels(0.02, 400.0);
        assert!((p.tau_u - 400.0 * 0.02f64.tan()).abs() < 1e-12);
        assert!(RansacParams::default().validate().is_ok());
        let bad = RansacParams {
            sample_size: 2,
            ..RansacParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adaptive_bound_examples() {
        let p = RansacParams::default();
        assert_eq!(adaptive_iterations(0.5, 100, &p), 14);
        assert_eq!(adaptive_iterations(1.0, 100, &p), 1);
        assert_eq!(adaptive_iterations(0.0, 37, &p), 37);
        assert_eq!(adaptive_iterations(0.01, 100, &p), 100);
        assert_eq!(adaptive_iterations(0.5, 10, &p), 10);
        let mut t = p;
        t.textbook_adaptation = true;
        // log(1e-4) / log(1 - 0.125) = 68.97
        assert_eq!(adaptive_iterations(0.5, 100, &t), 69);
    }

    #[test]
    fn exact_observation_is_inlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = twist();
        let p = RansacParams::for_rays(1e-3);
        for o in linear_scene(&mut rng, 50, &s) {
            assert!(o.flow_residual(&s) < 1e-15);
        }
        for o in scene(&mut rng, 50, &s) {
            assert!(inlier_test(&o, &s, &p));
        }
    }

    #[test]
    fn perturbed_flow_is_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = twist();
        let p = RansacParams::default();
        for mut o in scene(&mut rng, 20, &s) {
            let tangent = o.ray.cross(&Vector3::x()).normalize();
            o.flow += tangent * 2.0 * p.tau_u;
            assert!(!inlier_test(&o, &s, &p));
        }
    }

    #[test]
    fn threshold_equality_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = twist();
        let mut o = scene(&mut rng, 1, &s)[0];
        let tangent = o.ray.cross(&Vector3::y()).normalize();
        o.flow += tangent * 1e-3;
        let mut p = RansacParams::for_rays(0.5);
        p.tau_u = o.flow_residual(&s);
        assert!(!inlier_test(&o, &s, &p));
        p.tau_u = p.tau_u.next_up();
        assert!(inlier_test(&o, &s, &p));

        let predicted = exp_so3(&s.omega).inverse() * (o.landmark() - s.v);
        p.tau_theta = angle_between(&o.observed_direction(), &predicted);
        assert!(!inlier_test(&o, &s, &p));
    }

    #[test]
    fn estimate_from_clean_minimal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = twist();
        let obs = linear_scene(&mut rng, 3, &s);
        let (sol, inliers) = estimate(&obs, &[0, 1, 2], &RansacParams::default()).unwrap();
        assert!((sol.twist.to_vector() - s.to_vector()).norm() < 1e-9 * s.norm());
        assert_eq!(inliers, vec![0, 1, 2]);

        let obs = scene(&mut rng, 30, &s);
        let (_, inliers) = estimate(&obs, &[0, 1, 2], &RansacParams::default()).unwrap();
        assert_eq!(inliers.len(), 30);
    }

    #[test]
    fn estimate_with_outlier_in_sample_loses_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = twist();
        let mut obs = scene(&mut rng, 30, &s);
        let params = RansacParams::default();
        let (_, clean) = estimate(&obs, &[0, 1, 2], &params).unwrap();
        let kick = obs[1].ray.cross(&Vector3::z()).normalize() * 0.05;
        obs[1].flow += kick;
        let (_, dirty) = estimate(&obs, &[0, 1, 2], &params).unwrap();
        assert!(dirty.len() < clean.len());
    }

    #[test]
    fn too_few_observations_return_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs = scene(&mut rng, 2, &twist());
        let res = ransac(&obs, &RansacParams::default(), 0);
        assert_eq!(res.twist, Twist::zero());
        assert!(res.inliers.is_empty());
    }

    #[test]
    fn clean_data_terminates_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = twist();
        let obs = linear_scene(&mut rng, 100, &s);
        let res = ransac(&obs, &RansacParams::for_rays(0.5f64.to_radians()), 42);
        assert_eq!(res.inliers.len(), 100);
        assert!(res.iterations <= 2);
        assert!((res.twist.to_vector() - s.to_vector()).norm() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = twist();
        let mut obs = scene(&mut rng, 80, &s);
        for o in obs.iter_mut().take(30) {
            o.flow = unit(&mut rng) * 0.05;
        }
        let p = RansacParams::default();
        let a = ransac(&obs, &p, 1234);
        let b = ransac(&obs, &p, 1234);
        assert_eq!(a, b);
        assert_eq!(a.twist.to_vector().as_slice(), b.twist.to_vector().as_slice());
    }

    #[test]
    fn inliers_sorted_unique_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = twist();
        let mut obs = scene(&mut rng, 60, &s);
        for o in obs.iter_mut().take(20) {
            o.flow = unit(&mut rng) * 0.1;
        }
        for seed in 0..20 {
            let res = ransac(&obs, &RansacParams::default(), seed);
            assert!(res.inliers.windows(2).all(|w| w[0] < w[1]));
            assert!(res.inliers.iter().all(|&i| i < obs.len()));
            // The bound can drop below the count at the iteration that lowered it.
            assert!(res.iterations <= res.bound.max(res.best_iteration));
            assert!(res.iterations <= 100);
        }
    }
}
