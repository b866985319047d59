//! Keyframe selection and the single-active-keyframe refinement.
//!
//! When a frame becomes a keyframe its pose and the landmarks it observes
//! are refined jointly by minimising Cauchy-robustified ray errors
//! `r_obs - normalize(R^T (P - t))` over every keyframe that sees those
//! landmarks. Only the new keyframe's pose moves; older keyframes are held
//! fixed. Landmarks are eliminated per point so each damped Gauss-Newton
//! step reduces to a 6x6 pose system.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};

use crate::camera::Ray;
use crate::lie::{exp_so3, skew, Pose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePolicy {
    /// Promote when fewer inliers than this are tracked.
    pub tau_n: usize,
    /// Promote when more frames than this passed since the last keyframe.
    pub max_elapsed: u32,
    /// Rotation threshold on `|log(R_rel)|` (radians).
    pub rot_thresh: f64,
    /// Translation threshold on `|t_rel|` (meters).
    pub trans_thresh: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            tau_n: 60,
            max_elapsed: 30,
            rot_thresh: 10f64.to_radians(),
            trans_thresh: 0.5,
        }
    }
}

pub fn should_create_keyframe(
    inlier_count: usize,
    frames_elapsed: u32,
    rel_pose: &Pose,
    policy: &KeyframePolicy,
) -> bool {
    inlier_count < policy.tau_n
        || frames_elapsed > policy.max_elapsed
        || rel_pose.rotation_angle() > policy.rot_thresh
        || rel_pose.translation.norm() > policy.trans_thresh
}

/// Cauchy loss `rho(s) = c^2 ln(1 + s / c^2)` of a squared residual and its
/// derivative `d rho / d s`, which doubles as the IRLS weight.
#[inline]
pub fn cauchy_loss(s: f64, c: f64) -> (f64, f64) {
    let c2 = c * c;
    let ratio = s / c2;
    (c2 * ratio.ln_1p(), 1.0 / (1.0 + ratio))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyframeState {
    pub id: u64,
    /// Camera-to-world.
    pub pose: Pose,
    /// Landmark id to the unit ray observed in this keyframe.
    pub observations: BTreeMap<u64, Ray>,
    /// Rays seen by the second camera of a stereo rig. They pin the metric
    /// depth of the landmarks, which bearings from nearby keyframes leave
    /// weakly constrained.
    pub right_observations: BTreeMap<u64, Ray>,
    /// Second camera pose in this keyframe's frame.
    pub right_camera: Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    /// World-frame position.
    pub position: Vector3<f64>,
    pub observers: Vec<u64>,
    pub inlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub cauchy_c: f64,
    pub max_iters: usize,
    /// Stop once the update norm drops below this.
    pub step_tol: f64,
    pub damping_init: f64,
    pub damping_scale: f64,
    /// The active keyframe must observe at least this many landmarks.
    pub min_observations: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            cauchy_c: 0.01,
            max_iters: 10,
            step_tol: 1e-10,
            damping_init: 1e-4,
            damping_scale: 10.0,
            min_observations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub pose: Pose,
    /// Refined world positions, ordered by landmark id.
    pub landmarks: Vec<(u64, Vector3<f64>)>,
    /// Robust cost before optimisation and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
}

/// One observation term: keyframe slot (`None` for the active keyframe),
/// landmark slot, camera slot (`None` for the keyframe's own camera) and the
/// observed ray.
#[derive(Debug, Clone, Copy)]
struct Term {
    fixed: Option<usize>,
    landmark: usize,
    camera: Option<usize>,
    ray: Vector3<f64>,
}

/// The robust ray-error objective around one active keyframe.
///
/// Parameters are ordered `[dtheta, dt, P_0, P_1, ...]` with the rotation
/// perturbed on the right: `R <- R Exp(dtheta)`, `t <- t + dt`.
#[derive(Debug, Clone)]
pub struct KeyframeProblem {
    pub landmark_ids: Vec<u64>,
    fixed_poses: Vec<Pose>,
    cameras: Vec<Pose>,
    terms: Vec<Term>,
    cauchy_c: f64,
}

struct Linearization {
    h_pp: Matrix6<f64>,
    g_p: Vector6<f64>,
    h_ll: Vec<Matrix3<f64>>,
    h_pl: Vec<Matrix3x6<f64>>, // stored transposed: (3x6) = H_lp
    g_l: Vec<Vector3<f64>>,
}

impl KeyframeProblem {
    pub fn new(
        active: &KeyframeState,
        fixed: &[KeyframeState],
        landmarks: &BTreeMap<u64, Landmark>,
        cauchy_c: f64,
    ) -> Self {
        let landmark_ids: Vec<u64> = active
            .observations
            .keys()
            .copied()
            .filter(|id| landmarks.contains_key(id))
            .collect();
        let slot: BTreeMap<u64, usize> =
            landmark_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut terms = Vec::new();
        let mut cameras = Vec::new();
        let mut add = |kf: &KeyframeState, fixed: Option<usize>, terms: &mut Vec<Term>| {
            let mut used = false;
            let right_slot = cameras.len();
            for (obs, camera) in [(&kf.observations, None), (&kf.right_observations, Some(right_slot))] {
                for (&id, ray) in obs {
                    if let Some(&l) = slot.get(&id) {
                        terms.push(Term {
                            fixed,
                            landmark: l,
                            camera,
                            ray: ray.into_inner(),
                        });
                        used = true;
                    }
                }
            }
            if !kf.right_observations.is_empty() {
                cameras.push(kf.right_camera);
            }
            used
        };
        add(active, None, &mut terms);
        let mut fixed_poses = Vec::new();
        for kf in fixed {
            if add(kf, Some(fixed_poses.len()), &mut terms) {
                fixed_poses.push(kf.pose);
            }
        }
        Self {
            landmark_ids,
            fixed_poses,
            cameras,
            terms,
            cauchy_c,
        }
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmark_ids.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn pose_of<'a>(&'a self, term: &Term, active: &'a Pose) -> &'a Pose {
        match term.fixed {
            Some(k) => &self.fixed_poses[k],
            None => active,
        }
    }

    fn camera_of(&self, term: &Term) -> Option<&Pose> {
        term.camera.map(|c| &self.cameras[c])
    }

    /// Ray error of one term with the point in the keyframe frame and in the
    /// observing camera's frame.
    fn residual(&self, term: &Term, pose: &Pose, point: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let qk = pose.inverse_transform_point(point);
        let q = match self.camera_of(term) {
            Some(c) => c.inverse_transform_point(&qk),
            None => qk,
        };
        (term.ray - q.normalize(), qk, q)
    }

    pub fn cost(&self, pose: &Pose, points: &[Vector3<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let (e, _, _) = self.residual(t, self.pose_of(t, pose), &points[t.landmark]);
                cauchy_loss(e.norm_squared(), self.cauchy_c).0
            })
            .sum()
    }

    /// RMS of the raw (non-robust) ray errors.
    pub fn residual_rms(&self, pose: &Pose, points: &[Vector3<f64>]) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        let sq: f64 = self
            .terms
            .iter()
            .map(|t| self.residual(t, self.pose_of(t, pose), &points[t.landmark]).0.norm_squared())
            .sum();
        (sq / self.terms.len() as f64).sqrt()
    }

    /// Jacobians of a residual with respect to the pose increment and the point.
    fn jacobians(pose: &Pose, camera: Option<&Pose>, qk: &Vector3<f64>, q: &Vector3<f64>) -> (Matrix3x6<f64>, Matrix3<f64>) {
        let qn = q.norm();
        let n = q / qn;
        let mut proj = (Matrix3::identity() - n * n.transpose()) / qn;
        if let Some(c) = camera {
            proj *= c.rotation.inverse().into_inner();
        }
        let rt = pose.rotation.inverse().into_inner();
        let mut jp = Matrix3x6::zeros();
        jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-proj * skew(qk)));
        jp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(proj * rt));
        (jp, -proj * rt)
    }

    fn linearize(&self, pose: &Pose, points: &[Vector3<f64>]) -> Linearization {
        let m = points.len();
        let mut lin = Linearization {
            h_pp: Matrix6::zeros(),
            g_p: Vector6::zeros(),
            h_ll: vec![Matrix3::zeros(); m],
            h_pl: vec![Matrix3x6::zeros(); m],
            g_l: vec![Vector3::zeros(); m],
        };
        for t in &self.terms {
            let kf_pose = self.pose_of(t, pose);
            let (e, qk, q) = self.residual(t, kf_pose, &points[t.landmark]);
            let (_, w) = cauchy_loss(e.norm_squared(), self.cauchy_c);
            let (jp, jl) = Self::jacobians(kf_pose, self.camera_of(t), &qk, &q);
            let l = t.landmark;
            lin.h_ll[l] += w * jl.transpose() * jl;
            lin.g_l[l] += w * jl.transpose() * e;
            if t.fixed.is_none() {
                lin.h_pp += w * jp.transpose() * jp;
                lin.g_p += w * jp.transpose() * e;
                lin.h_pl[l] += w * jl.transpose() * jp;
            }
        }
        lin
    }

    /// Gradient of [`cost`](Self::cost) in the parameter order described on the type.
    pub fn gradient(&self, pose: &Pose, points: &[Vector3<f64>]) -> DVector<f64> {
        let mut g = DVector::zeros(6 + 3 * points.len());
        for t in &self.terms {
            let kf_pose = self.pose_of(t, pose);
            let (e, qk, q) = self.residual(t, kf_pose, &points[t.landmark]);
            let (_, w) = cauchy_loss(e.norm_squared(), self.cauchy_c);
            let (jp, jl) = Self::jacobians(kf_pose, self.camera_of(t), &qk, &q);
            let gl = 2.0 * w * jl.transpose() * e;
            let off = 6 + 3 * t.landmark;
            let mut seg = g.rows_mut(off, 3);
            seg += gl;
            if t.fixed.is_none() {
                let mut seg = g.rows_mut(0, 6);
                seg += 2.0 * w * jp.transpose() * e;
            }
        }
        g
    }

    /// Applies a parameter increment.
    pub fn retract(
        pose: &Pose,
        points: &[Vector3<f64>],
        delta: &DVector<f64>,
    ) -> (Pose, Vec<Vector3<f64>>) {
        let dtheta = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        let new_pose = Pose::new(pose.rotation * exp_so3(&dtheta), pose.translation + dt);
        let new_points = points
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vector3::new(delta[6 + 3 * i], delta[7 + 3 * i], delta[8 + 3 * i]))
            .collect();
        (new_pose, new_points)
    }

    /// Damped Gauss-Newton step with landmarks eliminated.
    fn solve_step(&self, lin: &Linearization, lambda: f64) -> Option<DVector<f64>> {
        let m = lin.h_ll.len();
        let damp3 = |h: &Matrix3<f64>| {
            let mut d = *h;
            for i in 0..3 {
                d[(i, i)] += lambda * (h[(i, i)] + 1e-9);
            }
            d
        };
        let mut s = lin.h_pp;
        for i in 0..6 {
            s[(i, i)] += lambda * (lin.h_pp[(i, i)] + 1e-9);
        }
        let mut b = -lin.g_p;
        let mut inv_ll = Vec::with_capacity(m);
        for l in 0..m {
            let inv = damp3(&lin.h_ll[l]).try_inverse()?;
            let h_lp = &lin.h_pl[l];
            let h_pl = h_lp.transpose();
            s -= h_pl * inv * h_lp;
            b += h_pl * inv * lin.g_l[l];
            inv_ll.push(inv);
        }
        let dp = s.cholesky().map(|c| c.solve(&b)).or_else(|| s.lu().solve(&b))?;
        let mut delta = DVector::zeros(6 + 3 * m);
        delta.rows_mut(0, 6).copy_from(&dp);
        for l in 0..m {
            let dl = inv_ll[l] * (-lin.g_l[l] - lin.h_pl[l] * dp);
            delta.rows_mut(6 + 3 * l, 3).copy_from(&dl);
        }
        if delta.iter().all(|v| v.is_finite()) {
            Some(delta)
        } else {
            None
        }
    }
}

/// Refines the active keyframe pose and every landmark it observes while
/// keeping `fixed` keyframes untouched.
pub fn optimize_keyframe(
    active: &KeyframeState,
    fixed: &[KeyframeState],
    landmarks: &BTreeMap<u64, Landmark>,
    params: &OptimizerParams,
) -> Result<OptimizationResult> {
    let problem = KeyframeProblem::new(active, fixed, landmarks, params.cauchy_c);
    if problem.num_landmarks() < params.min_observations {
        return Err(Error::InsufficientObservations {
            required: params.min_observations,
            available: problem.num_landmarks(),
        });
    }
    let mut pose = active.pose;
    let mut points: Vec<Vector3<f64>> = problem
        .landmark_ids
        .iter()
        .map(|id| landmarks[id].position)
        .collect();
    let mut cost = problem.cost(&pose, &points);
    let mut trace = vec![cost];
    let mut lambda = params.damping_init;
    let mut iterations = 0;
    let mut accepted = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let lin = problem.linearize(&pose, &points);
        let Some(delta) = problem.solve_step(&lin, lambda) else {
            lambda *= params.damping_scale;
            continue;
        };
        if delta.norm() < params.step_tol {
            break;
        }
        let (cand_pose, cand_points) = KeyframeProblem::retract(&pose, &points, &delta);
        let cand_cost = problem.cost(&cand_pose, &cand_points);
        if cand_cost < cost {
            pose = cand_pose;
            points = cand_points;
            cost = cand_cost;
            trace.push(cost);
            accepted += 1;
            lambda = (lambda / params.damping_scale).max(1e-12);
        } else {
            lambda *= params.damping_scale;
            if lambda > 1e12 {
                break;
            }
        }
    }

    Ok(OptimizationResult {
        pose,
        landmarks: problem.landmark_ids.iter().copied().zip(points).collect(),
        cost_trace: trace,
        iterations,
        accepted_steps: accepted,
    })
}
