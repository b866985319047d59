//! Per-frame odometry: track, triangulate, estimate the twist, integrate,
//! and refine at keyframes.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use nalgebra::{Vector2, Vector3};

use crate::backend::{
    optimize_keyframe, should_create_keyframe, KeyframePolicy, KeyframeState, Landmark, OptimizerParams,
};
use crate::camera::{Ray, StereoRig};
use crate::lie::exp_so3;
pub use crate::lie::Pose;
use crate::motionfield::{PixelObservation, RayObservation, Twist};
use crate::robust::{pixel_flow_threshold, ransac, ray_flow_threshold, RansacParams, RansacResult};
use crate::tracking::{
    detect_features, stereo_depth, track_klt_guided, DetectorParams, Image, ImagePyramid, KltParams, StereoParams,
};
use crate::{Error, Result};

/// `R_new = R_prev Exp(w)`, `t_new = t_prev + R_prev v`: the camera-to-world
/// counterpart of `X_cur = Exp(w)^T (X_prev - v)`.
pub fn integrate_twist(prev: &Pose, twist: &Twist) -> Pose {
    Pose::new(
        prev.rotation * exp_so3(&twist.omega),
        prev.translation + prev.rotation * twist.v,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimationMode {
    #[default]
    Ray,
    Pixel,
}

impl std::str::FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ray" => Ok(Self::Ray),
            "pixel" => Ok(Self::Pixel),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected ray|pixel)"))),
        }
    }
}

impl std::fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimationMode::Ray => "ray",
            EstimationMode::Pixel => "pixel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub mode: EstimationMode,
    /// `tau_u` is recomputed from `tau_pi` for the active mode.
    pub ransac: RansacParams,
    pub ransac_seed: u64,
    pub detector: DetectorParams,
    pub pyramid_levels: usize,
    pub klt: KltParams,
    pub stereo: StereoParams,
    pub keyframe: KeyframePolicy,
    pub optimizer: OptimizerParams,
    pub optimize: bool,
    /// Detection reruns once the tracked features fall below this fraction
    /// of the count reached by the previous detection.
    pub replenish_ratio: f64,
    /// Number of keyframes kept for the refinement.
    pub keyframe_window: usize,
    /// Landmarks whose ray error exceeds this after refinement are dropped.
    pub landmark_max_error: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: EstimationMode::Ray,
            ransac: RansacParams::default(),
            ransac_seed: 0,
            detector: DetectorParams::default(),
            pyramid_levels: 4,
            klt: KltParams::default(),
            stereo: StereoParams::default(),
            keyframe: KeyframePolicy::default(),
            optimizer: OptimizerParams::default(),
            optimize: true,
            replenish_ratio: 0.9,
            keyframe_window: 10,
            landmark_max_error: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub track_us: u64,
    pub depth_us: u64,
    pub ransac_us: u64,
    pub opt_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub timestamp: f64,
    pub twist: Twist,
    pub pose: Pose,
    pub inlier_count: usize,
    /// Observations handed to RANSAC.
    pub feature_count: usize,
    pub timings: StageTimings,
    pub is_keyframe: bool,
    /// Set when estimation failed and the previous twist was reused.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
struct Feature {
    id: u64,
    px: Vector2<f64>,
    age: u32,
    /// Stereo point in this frame's left camera.
    point: Option<Vector3<f64>>,
    /// Matching ray in the right camera.
    right_ray: Option<Ray>,
}

struct FrameState {
    timestamp: f64,
    pyramid: ImagePyramid,
    features: Vec<Feature>,
}

pub struct Pipeline {
    rig: StereoRig,
    config: PipelineConfig,
    ransac_params: RansacParams,
    prev: Option<FrameState>,
    pose: Pose,
    last_twist: Twist,
    next_feature_id: u64,
    /// Feature count right after the last detection.
    feature_capacity: usize,
    frame_index: u64,
    keyframes: VecDeque<KeyframeState>,
    landmarks: BTreeMap<u64, Landmark>,
    frames_since_keyframe: u32,
    trajectory: Vec<StampedPose>,
}

fn micros(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

impl Pipeline {
    pub fn new(rig: StereoRig, config: PipelineConfig) -> Result<Self> {
        let mut ransac_params = config.ransac;
        ransac_params.tau_u = match config.mode {
            EstimationMode::Ray => ray_flow_threshold(config.ransac.tau_pi),
            EstimationMode::Pixel => pixel_flow_threshold(config.ransac.tau_pi, rig.left.focal()),
        };
        ransac_params.validate()?;
        if config.pyramid_levels == 0 || config.klt.window.is_multiple_of(2) {
            return Err(Error::Config("pyramid_levels must be >= 1 and the KLT window odd".into()));
        }
        Ok(Self {
            rig,
            config,
            ransac_params,
            prev: None,
            pose: Pose::identity(),
            last_twist: Twist::zero(),
            next_feature_id: 0,
            feature_capacity: 0,
            frame_index: 0,
            keyframes: VecDeque::new(),
            landmarks: BTreeMap::new(),
            frames_since_keyframe: 0,
            trajectory: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn rig(&self) -> &StereoRig {
        &self.rig
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn trajectory(&self) -> &[StampedPose] {
        &self.trajectory
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn num_keyframes(&self) -> usize {
        self.keyframes.len()
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let expected = (self.rig.left.width, self.rig.left.height);
        if img.dims() != expected {
            return Err(Error::ImageSizeMismatch {
                expected,
                got: img.dims(),
            });
        }
        Ok(())
    }

    pub fn process_frame(&mut self, left: Image, right: Image, timestamp: f64) -> Result<FrameResult> {
        self.check_image(&left)?;
        self.check_image(&right)?;
        if let Some(prev) = &self.prev {
            if !(timestamp > prev.timestamp) {
                return Err(Error::NonMonotonicTimestamp {
                    previous: prev.timestamp,
                    got: timestamp,
                });
            }
        }
        let start = Instant::now();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let pyramid = ImagePyramid::new(left, self.config.pyramid_levels);
        let mut features = match &self.prev {
            Some(prev) => self.track(prev, &pyramid),
            None => Vec::new(),
        };
        timings.track_us = micros(t);

        let first = self.prev.is_none();
        let mut twist = Twist::zero();
        let mut inlier_count = 0;
        let mut feature_count = 0;
        let mut fallback = false;
        if !first {
            let t = Instant::now();
            let (result, used) = self.estimate(&features);
            feature_count = used.len();
            inlier_count = result.inliers.len();
            if result.inliers.is_empty() {
                twist = self.last_twist;
                fallback = true;
            } else {
                twist = result.twist;
                // drop tracks RANSAC rejected
                let mut keep = vec![true; features.len()];
                let mut inlier = result.inliers.iter().peekable();
                for (k, &fi) in used.iter().enumerate() {
                    if inlier.peek() == Some(&&k) {
                        inlier.next();
                    } else {
                        keep[fi] = false;
                    }
                }
                let mut it = keep.into_iter();
                features.retain(|_| it.next().unwrap_or(true));
            }
            self.pose = integrate_twist(&self.pose, &twist);
            self.last_twist = twist;
            timings.ransac_us = micros(t);
        }

        // replenish, then triangulate everything for the next frame
        let t = Instant::now();
        let mut detected = None;
        let wanted = self.config.replenish_ratio * self.feature_capacity as f64;
        if self.feature_capacity == 0 || (features.len() as f64) < wanted {
            let existing: Vec<Vector2<f64>> = features.iter().map(|f| f.px).collect();
            detected = Some(detect_features(pyramid.base(), &existing, &self.config.detector));
        }
        timings.track_us += micros(t);
        let replenished = detected.is_some();
        for px in detected.into_iter().flatten() {
            features.push(Feature {
                id: self.next_feature_id,
                px,
                age: 0,
                point: None,
                right_ray: None,
            });
            self.next_feature_id += 1;
        }
        if replenished {
            self.feature_capacity = features.len();
        }

        let t = Instant::now();
        let right_pyr = ImagePyramid::new(right, self.config.pyramid_levels);
        let pixels: Vec<Vector2<f64>> = features.iter().map(|f| f.px).collect();
        let depths = stereo_depth(
            &self.rig,
            &pyramid,
            &right_pyr,
            &pixels,
            &self.config.klt,
            &self.config.stereo,
        );
        for (f, d) in features.iter_mut().zip(depths) {
            f.point = d.map(|s| s.point);
            f.right_ray = d.and_then(|s| self.rig.right.unproject(&s.px_right).ok());
        }
        timings.depth_us = micros(t);

        let t = Instant::now();
        self.frames_since_keyframe += 1;
        let rel = match self.keyframes.back() {
            Some(kf) => kf.pose.relative_to(&self.pose),
            None => Pose::identity(),
        };
        let is_keyframe = first
            || should_create_keyframe(inlier_count, self.frames_since_keyframe, &rel, &self.config.keyframe);
        if is_keyframe {
            self.add_keyframe(&features);
        }
        timings.opt_us = micros(t);

        self.prev = Some(FrameState {
            timestamp,
            pyramid,
            features,
        });
        self.frame_index += 1;
        self.trajectory.push(StampedPose {
            timestamp,
            pose: self.pose,
        });
        timings.total_us = micros(start);
        Ok(FrameResult {
            timestamp,
            twist,
            pose: self.pose,
            inlier_count,
            feature_count,
            timings,
            is_keyframe,
            fallback,
        })
    }

    /// Tracks the previous features into `pyramid`, keeping successful tracks
    /// with their previous-frame stereo point.
    fn track(&self, prev: &FrameState, pyramid: &ImagePyramid) -> Vec<Feature> {
        let input: Vec<(u64, Vector2<f64>, u32)> = prev.features.iter().map(|f| (f.id, f.px, f.age)).collect();
        // constant-velocity prediction from the stereo point
        let rot = exp_so3(&self.last_twist.omega).inverse();
        let guesses: Vec<Vector2<f64>> = prev
            .features
            .iter()
            .map(|f| {
                f.point
                    .and_then(|p| self.rig.left.project(&(rot * (p - self.last_twist.v))).ok())
                    .map_or_else(Vector2::zeros, |px| px - f.px)
            })
            .collect();
        let tracks = track_klt_guided(&prev.pyramid, pyramid, &input, &guesses, &self.config.klt);
        tracks
            .iter()
            .zip(&prev.features)
            .filter(|(t, _)| t.is_tracked())
            .map(|(t, f)| Feature {
                id: t.id,
                px: t.px_cur,
                age: t.age,
                point: f.point,
                right_ray: None,
            })
            .collect()
    }

    /// Runs RANSAC on features with a previous stereo point. Also returns the
    /// feature index behind each observation.
    fn estimate(&self, features: &[Feature]) -> (RansacResult, Vec<usize>) {
        let cam = &self.rig.left;
        let seed = self.config.ransac_seed.wrapping_add(self.frame_index);
        let mut used = Vec::new();
        match self.config.mode {
            EstimationMode::Ray => {
                let mut obs = Vec::new();
                for (i, f) in features.iter().enumerate() {
                    let (Some(p), Ok(ray)) = (f.point, cam.unproject(&f.px)) else {
                        continue;
                    };
                    obs.push(RayObservation::from_rays(p, &ray));
                    used.push(i);
                }
                (ransac(&obs, &self.ransac_params, seed), used)
            }
            EstimationMode::Pixel => {
                let focal = cam.focal();
                let ideal = |r: &Ray| (r.z > 0.1).then(|| Vector2::new(r.x / r.z, r.y / r.z) * focal);
                let mut obs = Vec::new();
                for (i, f) in features.iter().enumerate() {
                    let Some(p) = f.point.filter(|p| p.z > 0.0) else {
                        continue;
                    };
                    let Some(prev_px) = ideal(&Ray::new_normalize(p)) else {
                        continue;
                    };
                    let Some(cur_px) = cam.unproject(&f.px).ok().as_ref().and_then(ideal) else {
                        continue;
                    };
                    obs.push(PixelObservation::new(prev_px, focal, cur_px - prev_px, p.z));
                    used.push(i);
                }
                (ransac(&obs, &self.ransac_params, seed), used)
            }
        }
    }

    fn add_keyframe(&mut self, features: &[Feature]) {
        self.frames_since_keyframe = 0;
        let id = self.frame_index;
        let mut observations = BTreeMap::new();
        let mut right_observations = BTreeMap::new();
        for f in features {
            let Some(p) = f.point else { continue };
            observations.insert(f.id, Ray::new_normalize(p));
            if let Some(r) = f.right_ray {
                right_observations.insert(f.id, r);
            }
            let world = self.pose.transform_point(&p);
            self.landmarks
                .entry(f.id)
                .and_modify(|l| l.observers.push(id))
                .or_insert_with(|| Landmark {
                    id: f.id,
                    position: world,
                    observers: vec![id],
                    inlier: true,
                });
        }
        let mut active = KeyframeState {
            id,
            pose: self.pose,
            observations,
            right_observations,
            right_camera: Pose::new(self.rig.rotation_rl, self.rig.translation_rl).inverse(),
            fixed: false,
        };

        if self.config.optimize && !self.keyframes.is_empty() {
            let fixed: Vec<KeyframeState> = self.keyframes.iter().cloned().collect();
            if let Ok(res) = optimize_keyframe(&active, &fixed, &self.landmarks, &self.config.optimizer) {
                active.pose = res.pose;
                self.pose = res.pose;
                for (lid, p) in res.landmarks {
                    if let Some(l) = self.landmarks.get_mut(&lid) {
                        l.position = p;
                    }
                }
                self.drop_outlier_landmarks(&mut active);
            }
        }

        active.fixed = true;
        self.keyframes.push_back(active);
        while self.keyframes.len() > self.config.keyframe_window.max(1) {
            if let Some(old) = self.keyframes.pop_front() {
                for lid in old.observations.keys() {
                    if let Some(l) = self.landmarks.get_mut(lid) {
                        l.observers.retain(|&k| k != old.id);
                    }
                }
            }
        }
        self.landmarks.retain(|_, l| !l.observers.is_empty());
    }

    fn drop_outlier_landmarks(&mut self, active: &mut KeyframeState) {
        let max_err = self.config.landmark_max_error;
        let mut bad = Vec::new();
        for kf in self.keyframes.iter().chain(std::iter::once(&*active)) {
            for (lid, ray) in &kf.observations {
                if let Some(l) = self.landmarks.get(lid) {
                    let q = kf.pose.inverse_transform_point(&l.position);
                    if (ray.into_inner() - q.normalize()).norm() > max_err {
                        bad.push(*lid);
                    }
                }
            }
        }
        for lid in bad {
            if let Some(l) = self.landmarks.get_mut(&lid) {
                l.inlier = false;
            }
            for kf in self.keyframes.iter_mut().chain(std::iter::once(&mut *active)) {
                kf.observations.remove(&lid);
                kf.right_observations.remove(&lid);
            }
            self.landmarks.remove(&lid);
        }
    }
}
