//! Synthetic scenes with exact geometry, used as ground truth for every
//! estimator and for rendering textured stereo sequences.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Ray, StereoRig};
use crate::lie::{exp_so3, log_so3, Pose};
use crate::motionfield::{predict_pixel_flow, predict_ray_flow, PixelObservation, RayObservation, Twist};
use crate::pipeline::integrate_twist;
use crate::tracking::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    /// Analytic motion-field flow for the twist.
    Instantaneous,
    /// Exact ray (or pixel) difference after the finite motion.
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub num_points: usize,
    pub half_extent: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub max_omega: f64,
    pub max_v: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_points: 200,
            half_extent: 5.0,
            min_depth: 0.5,
            max_depth: 20.0,
            max_omega: 0.05,
            max_v: 0.2,
        }
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Points uniform in the cube `[-h, h]^3`, rejected unless their z lies in
/// `[min_depth, max_depth]`.
pub fn random_points(rng: &mut impl Rng, params: &SceneParams) -> Vec<Vector3<f64>> {
    let h = params.half_extent;
    let mut out = Vec::with_capacity(params.num_points);
    while out.len() < params.num_points {
        let p = Vector3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
        if p.z >= params.min_depth && p.z <= params.max_depth {
            out.push(p);
        }
    }
    out
}

/// Twist with uniformly random directions and magnitudes up to the limits.
pub fn random_twist(rng: &mut impl Rng, max_omega: f64, max_v: f64) -> Twist {
    let w = random_unit(rng) * rng.random_range(0.0..=max_omega);
    let v = random_unit(rng) * rng.random_range(0.0..=max_v);
    Twist::new(w, v)
}

/// Previous-to-current camera map `X_cur = Exp(w)^T (X_prev - v)`.
pub fn apply_finite_motion(point: &Vector3<f64>, twist: &Twist) -> Vector3<f64> {
    exp_so3(&twist.omega).inverse() * (point - twist.v)
}

/// Ray observations of camera-frame points under `twist`.
pub fn ray_observations(points: &[Vector3<f64>], twist: &Twist, mode: FlowMode) -> Vec<RayObservation> {
    points
        .iter()
        .filter(|p| p.norm() > 0.0)
        .filter_map(|p| match mode {
            FlowMode::Instantaneous => {
                let ray = Ray::new_normalize(*p);
                let d = p.norm();
                let mut o = RayObservation::new(ray, predict_ray_flow(&ray, d, twist), d);
                o.point = *p;
                Some(o)
            }
            FlowMode::Finite => {
                let q = apply_finite_motion(p, twist);
                (q.norm() > 0.0).then(|| RayObservation::from_rays(*p, &Ray::new_normalize(q)))
            }
        })
        .collect()
}

/// Pixel observations of camera-frame points for an ideal pinhole of focal
/// length `f`. Points with non-positive depth in either frame are skipped.
pub fn pixel_observations(
    points: &[Vector3<f64>],
    f: f64,
    twist: &Twist,
    mode: FlowMode,
) -> Vec<PixelObservation> {
    points
        .iter()
        .filter(|p| p.z > 0.0)
        .filter_map(|p| {
            let px = Vector2::new(f * p.x / p.z, f * p.y / p.z);
            let mut o = PixelObservation::new(px, f, Vector2::zeros(), p.z);
            match mode {
                FlowMode::Instantaneous => o.u = predict_pixel_flow(&o, twist),
                FlowMode::Finite => {
                    let q = apply_finite_motion(p, twist);
                    if q.z <= 0.0 {
                        return None;
                    }
                    o.u = Vector2::new(f * q.x / q.z, f * q.y / q.z) - px;
                }
            }
            Some(o)
        })
        .collect()
}

/// Replaces the flow of `count` randomly chosen observations with a random
/// tangent flow of magnitude in `[min_mag, max_mag]`. Returns the outlier mask.
pub fn inject_outliers(
    obs: &mut [RayObservation],
    count: usize,
    min_mag: f64,
    max_mag: f64,
    rng: &mut impl Rng,
) -> Vec<bool> {
    let mut mask = vec![false; obs.len()];
    let count = count.min(obs.len());
    for i in rand::seq::index::sample(rng, obs.len(), count) {
        let r = obs[i].ray.into_inner();
        let dir = loop {
            let t = random_unit(rng);
            let t = t - r * r.dot(&t);
            if t.norm() > 1e-3 {
                break t.normalize();
            }
        };
        obs[i].flow = dir * rng.random_range(min_mag..=max_mag);
        mask[i] = true;
    }
    mask
}

/// Poses obtained by integrating the same per-frame twist `frames - 1` times.
pub fn constant_twist_trajectory(start: Pose, twist: &Twist, frames: usize) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(frames);
    if frames == 0 {
        return poses;
    }
    poses.push(start);
    for k in 1..frames {
        poses.push(integrate_twist(&poses[k - 1], twist));
    }
    poses
}

/// Per-frame twist that maps `prev` onto `cur` under [`integrate_twist`].
pub fn relative_twist(prev: &Pose, cur: &Pose) -> Twist {
    let rel = prev.inverse().compose(cur);
    Twist::new(log_so3(&rel.rotation), rel.translation)
}

/// Procedurally textured axis-aligned room that encloses the cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomTexture {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub seed: u64,
    /// Lattice spacing of the coarsest noise octave (meters).
    pub base_scale: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, face: u64, i: i64, j: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(face ^ splitmix((i as u64) ^ splitmix(j as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn floor_i64(x: f64) -> i64 {
    let t = x as i64;
    t - i64::from(x < t as f64)
}

fn value_noise(seed: u64, face: u64, u: f64, v: f64) -> f64 {
    let (i, j) = (floor_i64(u), floor_i64(v));
    let (fu, fv) = (i as f64, j as f64);
    let (a, b) = (smooth(u - fu), smooth(v - fv));
    let n00 = lattice(seed, face, i, j);
    let n10 = lattice(seed, face, i + 1, j);
    let n01 = lattice(seed, face, i, j + 1);
    let n11 = lattice(seed, face, i + 1, j + 1);
    let top = n00 + a * (n10 - n00);
    let bottom = n01 + a * (n11 - n01);
    top + b * (bottom - top)
}

impl RoomTexture {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>, seed: u64) -> Self {
        Self {
            min,
            max,
            seed,
            base_scale: 0.4,
        }
    }

    /// Box around all camera centres, grown by `margin` on every side.
    pub fn enclosing(poses: &[Pose], margin: f64, seed: u64) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in poses {
            lo = lo.inf(&p.translation);
            hi = hi.sup(&p.translation);
        }
        if poses.is_empty() {
            lo = Vector3::zeros();
            hi = Vector3::zeros();
        }
        Self::new(lo.add_scalar(-margin), hi.add_scalar(margin), seed)
    }

    /// Intensity in 0..255 at a wall point. `face` is `2 * axis + side`.
    fn shade(&self, face: usize, u: f64, v: f64) -> f32 {
        let mut acc = 0.0;
        let mut scale = self.base_scale;
        let mut amp = 0.5;
        let mut total = 0.0;
        for octave in 0..4u64 {
            acc += amp * value_noise(self.seed.wrapping_add(octave * 0x1000), face as u64, u / scale, v / scale);
            total += amp;
            scale *= 0.5;
            amp *= 0.8;
        }
        // stretch the contrast; the octave average concentrates near 0.5
        (128.0 + 330.0 * (acc / total - 0.5)).clamp(5.0, 250.0) as f32
    }

    /// Where a world ray from an interior origin leaves the room.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize)> = None;
        for axis in 0..3 {
            if dir[axis].abs() < 1e-15 {
                continue;
            }
            let (bound, side) = if dir[axis] > 0.0 { (self.max[axis], 1) } else { (self.min[axis], 0) };
            let t = (bound - origin[axis]) / dir[axis];
            if t > 0.0 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, 2 * axis + side));
            }
        }
        best.map(|(t, face)| (face, origin + dir * t))
    }

    pub fn intensity(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f32 {
        match self.intersect(origin, dir) {
            Some((face, hit)) => {
                let axis = face / 2;
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                self.shade(face, hit[a], hit[b])
            }
            None => 0.0,
        }
    }

    /// Renders the room seen from a camera-to-world `pose`.
    pub fn render(&self, camera: &CameraIntrinsics, pose: &Pose) -> Image {
        let (w, h) = (camera.width, camera.height);
        let rows: Vec<Vec<f32>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| match camera.unproject(&Vector2::new(x as f64, y as f64)) {
                        Ok(r) => self.intensity(&pose.translation, &(pose.rotation * r.into_inner())),
                        Err(_) => 0.0,
                    })
                    .collect()
            })
            .collect();
        Image::from_vec(w, h, rows.concat()).expect("dimensions match")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub camera: CameraIntrinsics,
    /// World-frame points.
    pub points: Vec<Vector3<f64>>,
    /// Camera-to-world poses.
    pub poses: Vec<Pose>,
    pub texture: Option<RoomTexture>,
}

impl SyntheticScene {
    /// Observations between frames `frame_index - 1` and `frame_index`, for
    /// points in front of the previous camera and inside its image.
    pub fn exact_observations(&self, frame_index: usize, mode: FlowMode) -> Vec<RayObservation> {
        assert!(frame_index >= 1 && frame_index < self.poses.len(), "frame index out of range");
        let prev = &self.poses[frame_index - 1];
        let cur = &self.poses[frame_index];
        let twist = relative_twist(prev, cur);
        let visible: Vec<Vector3<f64>> = self
            .points
            .iter()
            .map(|p| prev.inverse_transform_point(p))
            .filter(|q| self.visible(q) && (mode == FlowMode::Instantaneous || self.visible(&apply_finite_motion(q, &twist))))
            .collect();
        ray_observations(&visible, &twist, mode)
    }

    fn visible(&self, q: &Vector3<f64>) -> bool {
        q.z > 0.0
            && self
                .camera
                .project(q)
                .is_ok_and(|px| self.camera.contains(&px, 0.0))
    }

    pub fn render_textured_frame(&self, frame_index: usize) -> Option<Image> {
        self.texture.map(|t| t.render(&self.camera, &self.poses[frame_index]))
    }
}

/// Rendered stereo sequence for end-to-end runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub rig: StereoRig,
    /// Left camera-to-world poses.
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
    pub room: RoomTexture,
}

impl SyntheticSequence {
    /// Constant-twist sequence starting at the identity, at `rate_hz`, inside
    /// a room enclosing the path with `margin` meters of clearance.
    pub fn constant_twist(
        rig: StereoRig,
        twist: &Twist,
        frames: usize,
        rate_hz: f64,
        margin: f64,
        seed: u64,
    ) -> Self {
        let poses = constant_twist_trajectory(Pose::identity(), twist, frames);
        let timestamps = (0..frames).map(|k| k as f64 / rate_hz).collect();
        let room = RoomTexture::enclosing(&poses, margin, seed);
        Self {
            rig,
            poses,
            timestamps,
            room,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn right_pose(&self, k: usize) -> Pose {
        // X_r = R_rl X_l + t_rl, so the right camera-to-left map is its inverse
        let left_from_right = Pose::new(self.rig.rotation_rl, self.rig.translation_rl).inverse();
        self.poses[k].compose(&left_from_right)
    }

    pub fn render_stereo(&self, k: usize) -> (Image, Image) {
        (
            self.room.render(&self.rig.left, &self.poses[k]),
            self.room.render(&self.rig.right, &self.right_pose(k)),
        )
    }
}
