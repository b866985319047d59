//! Acceptance suite. Every criterion prints one PASS/FAIL (or SKIP) line and
//! the test fails if any criterion failed.
//!
//! Everything runs inside a single test so the timing checks never share the
//! CPU with another test thread.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DVector, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smfvo::backend::{optimize_keyframe, KeyframeProblem, KeyframeState, Landmark, OptimizerParams};
use smfvo::camera::{CameraIntrinsics, Ray, StereoRig};
use smfvo::io::{ate_rmse, Alignment, DatasetFormat, DatasetReader, Trajectory};
use smfvo::lie::{exp_so3, Pose};
use smfvo::motionfield::{
    predict_pixel_flow, predict_ray_flow, solve_twist_pixel, solve_twist_ray, PixelObservation, RayObservation, Twist,
};
use smfvo::pipeline::{EstimationMode, Pipeline, PipelineConfig, StampedPose};
use smfvo::robust::{adaptive_iterations, ransac, RansacParams};
use smfvo::synth::{
    inject_outliers, pixel_observations, random_points, random_twist, ray_observations, FlowMode, SceneParams,
    SyntheticSequence,
};

/// Environment variable naming a converted MH01 sequence.
const EUROC_ENV: &str = "SMFVO_EUROC_MH01";
/// Optional comma-separated list of criteria to run, e.g. `4,8`.
const ONLY_ENV: &str = "SMFVO_ACCEPTANCE_ONLY";

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Report {
    failures: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, outcome: Outcome, detail: String) {
        let tag = match outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => {
                self.failures.push(id);
                "FAIL"
            }
            Outcome::Skip => "SKIP",
        };
        // bypass the test harness capture so the lines always show up
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {id} [{name}]: {tag} ({detail})").unwrap();
        out.flush().unwrap();
    }

    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        self.line(id, name, if ok { Outcome::Pass } else { Outcome::Fail }, detail);
    }
}

/// Criterion number and the check that reports it.
type Criterion = (u32, fn(&mut Report));

fn rel_err(a: &Twist, b: &Twist) -> f64 {
    (a.to_vector() - b.to_vector()).norm() / b.norm().max(1e-12)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn exact_recovery(report: &mut Report) {
    let params = SceneParams {
        num_points: 50,
        ..SceneParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut worst_ray, mut worst_pix) = (0.0f64, 0.0f64);
    let mut times = Vec::new();
    for _ in 0..100 {
        let pts = random_points(&mut rng, &params);
        let twist = random_twist(&mut rng, params.max_omega, params.max_v);
        let rays = ray_observations(&pts, &twist, FlowMode::Instantaneous);
        let pixels = pixel_observations(&pts, 300.0, &twist, FlowMode::Instantaneous);

        let t = Instant::now();
        let a = solve_twist_ray(&rays).unwrap().twist;
        times.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let b = solve_twist_pixel(&pixels).unwrap().twist;
        times.push(t.elapsed().as_secs_f64());

        worst_ray = worst_ray.max(rel_err(&a, &twist));
        worst_pix = worst_pix.max(rel_err(&b, &twist));
    }
    let med = median(times.clone());
    let max = times.iter().copied().fold(0.0, f64::max);
    report.check(
        1,
        "exact recovery",
        worst_ray < 1e-8 && worst_pix < 1e-8 && med < 1e-3,
        format!(
            "max rel err ray {worst_ray:.2e}, pixel {worst_pix:.2e}; solve time median {:.1} us, max {:.1} us",
            med * 1e6,
            max * 1e6
        ),
    );
}

fn first_order(report: &mut Report) {
    let params = SceneParams {
        num_points: 50,
        ..SceneParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut ratios = Vec::new();
    for _ in 0..50 {
        let pts = random_points(&mut rng, &params);
        let twist = random_twist(&mut rng, params.max_omega, params.max_v);
        let half = twist.scaled(0.5);
        let e1 = rel_err(&solve_twist_ray(&ray_observations(&pts, &twist, FlowMode::Finite)).unwrap().twist, &twist);
        let e2 = rel_err(&solve_twist_ray(&ray_observations(&pts, &half, FlowMode::Finite)).unwrap().twist, &half);
        ratios.push(e1 / e2);
    }
    let med = median(ratios);
    report.check(
        2,
        "first-order consistency",
        (1.5..=2.5).contains(&med),
        format!("median error ratio dt vs dt/2 = {med:.4} over 50 scenes"),
    );
}

fn pixel_ray_equivalence(report: &mut Report) {
    let f = 400.0;
    let cam = CameraIntrinsics::pinhole(f, f, 319.5, 239.5, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let (mut worst_flow, mut worst_twist) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let twist = random_twist(&mut rng, 0.05, 0.2);
        let mut rays = Vec::new();
        let mut pixels = Vec::new();
        while pixels.len() < 50 {
            let p = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(1.0..15.0));
            let px = cam.project(&p).unwrap();
            if !cam.contains(&px, 0.0) {
                continue;
            }
            let r = Ray::new_normalize(p);
            let d = p.norm();
            let ray_flow = predict_ray_flow(&r, d, &twist);
            let mut o = PixelObservation::new(px - cam.principal_point(), f, Vector2::zeros(), p.z);
            o.u = predict_pixel_flow(&o, &twist);
            // the projection is constant along the ray, so only the tangential
            // part of the point velocity (d times the ray flow) moves the pixel
            let mapped = cam.ideal_projection_jacobian(&p) * (ray_flow * d);
            worst_flow = worst_flow.max((mapped - o.u).norm());
            rays.push(RayObservation::new(r, ray_flow, d));
            pixels.push(o);
        }
        let a = solve_twist_ray(&rays).unwrap().twist;
        let b = solve_twist_pixel(&pixels).unwrap().twist;
        worst_twist = worst_twist.max(rel_err(&a, &b));
    }
    report.check(
        3,
        "pixel-ray equivalence",
        worst_flow < 1e-9 && worst_twist < 1e-8,
        format!("max flow mismatch {worst_flow:.2e} px, max twist disagreement {worst_twist:.2e}"),
    );
}

fn ransac_robustness(report: &mut Report) {
    let params = RansacParams::default();
    let scene = SceneParams {
        num_points: 100,
        ..SceneParams::default()
    };
    let mut good = 0;
    let mut bound_ok = true;
    let mut most_iters = 0;
    let mut worst_err = 0.0f64;
    let mut worst_recall = 1.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let pts = random_points(&mut rng, &scene);
        let twist = random_twist(&mut rng, scene.max_omega, scene.max_v);
        let mut obs = ray_observations(&pts, &twist, FlowMode::Instantaneous);
        let outlier = inject_outliers(&mut obs, 40, 0.1, 0.5, &mut rng);
        let res = ransac(&obs, &params, seed);
        let err = rel_err(&res.twist, &twist);
        let found = res.inliers.iter().filter(|&&i| !outlier[i]).count();
        let recall = found as f64 / 60.0;
        worst_err = worst_err.max(err);
        worst_recall = worst_recall.min(recall);
        if err < 1e-6 && recall >= 0.95 {
            good += 1;
        }
        // the loop stops at the first iteration that reaches the bound in
        // force; an improvement late in the run can lower it below the count
        bound_ok &= res.iterations <= res.bound.max(res.best_iteration) && res.bound <= params.max_iterations;
        most_iters = most_iters.max(res.iterations);
    }
    let bound = adaptive_iterations(0.5, params.max_iterations, &params);
    report.check(
        4,
        "RANSAC robustness",
        good >= 99 && bound_ok && bound == 14,
        format!(
            "{good}/100 runs clean (worst err {worst_err:.2e}, worst recall {worst_recall:.2}); \
             iterations within bound: {bound_ok} (max {most_iters}); bound(w=0.5, Q=0.9999) = {bound}"
        ),
    );
}

struct KeyframeScene {
    active: KeyframeState,
    fixed: Vec<KeyframeState>,
    landmarks: BTreeMap<u64, Landmark>,
    true_pose: Pose,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
}

/// Two fixed keyframes and an active one looking down +z at a random cloud.
/// `ray_noise` perturbs the observed rays (radians, roughly).
fn keyframe_scene(rng: &mut impl Rng, n: usize, ray_noise: f64) -> KeyframeScene {
    let poses: Vec<Pose> = (0..3)
        .map(|k| {
            let c = Vector3::new(-0.4 + 0.2 * k as f64, rng.random_range(-0.05..0.05), -0.2 + 0.1 * k as f64);
            Pose::new(exp_so3(&(random_unit(rng) * rng.random_range(0.0..0.05))), c)
        })
        .collect();
    let points: Vec<Vector3<f64>> = (0..n)
        .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(3.0..9.0)))
        .collect();
    let mut kfs: Vec<KeyframeState> = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let observations = points
                .iter()
                .enumerate()
                .filter_map(|(id, p)| {
                    let q = pose.inverse_transform_point(p);
                    (q.z > 0.3).then(|| {
                        let r = q.normalize() + random_unit(rng) * ray_noise * rng.random_range(0.0..1.0);
                        (id as u64, Ray::new_normalize(r))
                    })
                })
                .collect();
            KeyframeState {
                id: k as u64,
                pose: *pose,
                observations,
                fixed: k < 2,
                ..KeyframeState::default()
            }
        })
        .collect();
    let active = kfs.pop().unwrap();
    let landmarks = points
        .iter()
        .enumerate()
        .map(|(id, &p)| {
            let id = id as u64;
            (
                id,
                Landmark {
                    id,
                    position: p,
                    observers: vec![0, 1, 2],
                    inlier: true,
                },
            )
        })
        .collect();
    KeyframeScene {
        true_pose: active.pose,
        active,
        fixed: kfs,
        landmarks,
    }
}

/// 1 degree about a random axis, 5 cm along a random direction, and 1% of
/// each landmark's range along a random direction.
fn perturb(s: &mut KeyframeScene, rng: &mut impl Rng) {
    let pose = s.active.pose;
    s.active.pose = Pose::new(
        pose.rotation * exp_so3(&(random_unit(rng) * 1f64.to_radians())),
        pose.translation + random_unit(rng) * 0.05,
    );
    for lm in s.landmarks.values_mut() {
        lm.position += random_unit(rng) * 0.01 * lm.position.norm();
    }
}

fn optimizer_suite(report: &mut Report) {
    let params = OptimizerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(500);

    let mut monotone = 0;
    let mut accepted = 0;
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let mut s = keyframe_scene(&mut rng, 40, 2e-3);
        perturb(&mut s, &mut rng);
        let res = optimize_keyframe(&s.active, &s.fixed, &s.landmarks, &params).unwrap();
        accepted += res.accepted_steps;
        if res.cost_trace.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }

        let problem = KeyframeProblem::new(&s.active, &s.fixed, &s.landmarks, params.cauchy_c);
        let pts: Vec<_> = problem.landmark_ids.iter().map(|id| s.landmarks[id].position).collect();
        let g = problem.gradient(&s.active.pose, &pts);
        let scale = g.amax().max(1e-8);
        let h = 1e-6;
        for i in 0..g.len() {
            let mut d = DVector::zeros(g.len());
            d[i] = h;
            let (pp, xp) = KeyframeProblem::retract(&s.active.pose, &pts, &d);
            d[i] = -h;
            let (pm, xm) = KeyframeProblem::retract(&s.active.pose, &pts, &d);
            let num = (problem.cost(&pp, &xp) - problem.cost(&pm, &xm)) / (2.0 * h);
            worst_grad = worst_grad.max((num - g[i]).abs() / scale);
        }
    }

    let mut worst_rot = 0.0f64;
    let mut worst_trans = 0.0f64;
    for _ in 0..10 {
        let mut s = keyframe_scene(&mut rng, 80, 0.0);
        perturb(&mut s, &mut rng);
        let res = optimize_keyframe(&s.active, &s.fixed, &s.landmarks, &params).unwrap();
        let rel = s.true_pose.relative_to(&res.pose);
        worst_rot = worst_rot.max(rel.rotation_angle());
        worst_trans = worst_trans.max(rel.translation.norm());
    }

    report.check(
        5,
        "optimizer suite",
        monotone == 50 && accepted > 0 && worst_grad < 1e-5 && worst_rot < 1e-6 && worst_trans < 1e-6,
        format!(
            "non-increasing cost on {monotone}/50 problems ({accepted} accepted steps); \
             max relative gradient deviation {worst_grad:.2e}; \
             recovery error rot {worst_rot:.2e} rad, trans {worst_trans:.2e} m"
        ),
    );
}

struct RunSummary {
    drift: f64,
    path: f64,
    rotation_deg: f64,
}

/// Renders every frame once and feeds it to all pipelines in lockstep.
fn run_lockstep(seq: &SyntheticSequence, configs: &[PipelineConfig]) -> Vec<RunSummary> {
    let mut pipes: Vec<Pipeline> = configs.iter().map(|c| Pipeline::new(seq.rig, *c).unwrap()).collect();
    for k in 0..seq.len() {
        let (l, r) = seq.render_stereo(k);
        for p in &mut pipes {
            p.process_frame(l.clone(), r.clone(), seq.timestamps[k]).unwrap();
        }
    }
    let path: f64 = seq.poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum();
    let truth = seq.poses.last().unwrap();
    pipes
        .iter()
        .map(|p| RunSummary {
            drift: (p.pose().translation - truth.translation).norm(),
            path,
            rotation_deg: truth.relative_to(p.pose()).rotation_angle().to_degrees(),
        })
        .collect()
}

fn forward_twist() -> Twist {
    Twist::new(Vector3::new(0.0, 0.003, 0.0), Vector3::new(0.0, 0.0, 0.02))
}

fn end_to_end(report: &mut Report) {
    let frames = 500;
    let twist = forward_twist();
    let ray = PipelineConfig::default();
    let pixel = PipelineConfig {
        mode: EstimationMode::Pixel,
        ..ray
    };

    let pinhole = CameraIntrinsics::pinhole(320.0, 320.0, 319.5, 239.5, 640, 480).unwrap();
    let seq = SyntheticSequence::constant_twist(StereoRig::rectified(pinhole, 0.1).unwrap(), &twist, frames, 20.0, 3.0, 11);
    let pin = &run_lockstep(&seq, &[ray])[0];
    let pin_pct = 100.0 * pin.drift / pin.path;

    // 120 degree horizontal field of view: 320 px = f * 60 degrees
    let f = 320.0 / 60f64.to_radians();
    let fisheye = CameraIntrinsics::equidistant(f, f, 319.5, 239.5, [0.0; 4], 640, 480).unwrap();
    let seq = SyntheticSequence::constant_twist(StereoRig::rectified(fisheye, 0.1).unwrap(), &twist, frames, 20.0, 3.0, 11);
    let fish = run_lockstep(&seq, &[ray, pixel]);
    let (fr, fp) = (&fish[0], &fish[1]);

    report.check(
        6,
        "end-to-end synthetic trajectory",
        pin_pct < 1.0 && fr.drift < fp.drift,
        format!(
            "pinhole ray+opt drift {:.4} m = {pin_pct:.3}% of {:.2} m (rot {:.3} deg); \
             fisheye 120 deg: ray {:.4} m ({:.3}%) vs pixel {:.4} m ({:.3}%)",
            pin.drift,
            pin.path,
            pin.rotation_deg,
            fr.drift,
            100.0 * fr.drift / fr.path,
            fp.drift,
            100.0 * fp.drift / fp.path
        ),
    );
}

fn static_camera(report: &mut Report) {
    let cam = CameraIntrinsics::pinhole(320.0, 320.0, 319.5, 239.5, 640, 480).unwrap();
    let seq = SyntheticSequence::constant_twist(StereoRig::rectified(cam, 0.1).unwrap(), &Twist::zero(), 1, 20.0, 3.0, 7);
    let (l, r) = seq.render_stereo(0);
    let mut pipe = Pipeline::new(seq.rig, PipelineConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let res = pipe.process_frame(l.clone(), r.clone(), k as f64 * 0.05).unwrap();
        worst = worst.max(res.pose.translation.norm());
    }
    let rot = pipe.pose().rotation_angle();
    report.check(
        7,
        "static camera",
        worst < 1e-6,
        format!("max position drift {worst:.2e} m, final rotation {rot:.2e} rad over 100 frames"),
    );
}

fn throughput(report: &mut Report) {
    let cam = CameraIntrinsics::pinhole(320.0, 320.0, 319.5, 239.5, 640, 480).unwrap();
    let seq = SyntheticSequence::constant_twist(StereoRig::rectified(cam, 0.1).unwrap(), &forward_twist(), 61, 20.0, 3.0, 11);
    let mut config = PipelineConfig::default();
    // finer cells fill the image with about 200 features
    config.detector.cell_size = 20;
    let mut pipe = Pipeline::new(seq.rig, config).unwrap();
    let mut core = Vec::new();
    let mut total = Vec::new();
    let mut features = Vec::new();
    for k in 0..seq.len() {
        let (l, r) = seq.render_stereo(k);
        let res = pipe.process_frame(l, r, seq.timestamps[k]).unwrap();
        if k > 0 {
            let t = res.timings;
            core.push((t.track_us + t.ransac_us + t.opt_us) as f64 / 1000.0);
            total.push(t.total_us as f64 / 1000.0);
            features.push(res.feature_count as f64);
        }
    }
    let feats = features.iter().sum::<f64>() / features.len() as f64;
    let med = median(core);
    report.check(
        8,
        "throughput",
        med < 10.0 && feats >= 180.0,
        format!(
            "median core (track+ransac+opt) {med:.2} ms/frame, median total incl. stereo {:.2} ms, {feats:.0} features/frame",
            median(total)
        ),
    );
}

fn euroc(report: &mut Report) {
    let Some(root) = std::env::var_os(EUROC_ENV).map(PathBuf::from) else {
        report.line(8, "EuRoC MH01", Outcome::Skip, format!("set {EUROC_ENV} to a converted sequence to run"));
        return;
    };
    let outcome = (|| -> smfvo::Result<(f64, usize)> {
        let reader = DatasetReader::open(&root, DatasetFormat::Euroc)?;
        let mut pipe = Pipeline::new(reader.calibration.rig, PipelineConfig::default())?;
        for frame in reader.stream() {
            let frame = frame?;
            pipe.process_frame(frame.left, frame.right, frame.timestamp)?;
        }
        let gt = reader.ground_truth.as_ref().ok_or_else(|| smfvo::Error::EmptySequence(root.clone()))?;
        let est = Trajectory::new(pipe.trajectory().to_vec())?;
        Ok((ate_rmse(&est, gt, Alignment::FirstFrame)?, est.len()))
    })();
    match outcome {
        Ok((ate, n)) => report.check(8, "EuRoC MH01", ate <= 0.30, format!("ATE RMSE {ate:.4} m over {n} frames, first-frame alignment")),
        Err(e) => report.check(8, "EuRoC MH01", false, format!("run failed: {e}")),
    }
}

fn stamped(n: usize, pose: impl Fn(usize) -> Pose) -> Trajectory {
    Trajectory::new(
        (0..n)
            .map(|k| StampedPose {
                timestamp: k as f64 * 0.05,
                pose: pose(k),
            })
            .collect(),
    )
    .unwrap()
}

fn ate_examples(report: &mut Report) {
    let wiggle = |k: usize| {
        let s = k as f64 * 0.1;
        Pose::new(exp_so3(&Vector3::new(0.1 * s.sin(), 0.2 * s, 0.0)), Vector3::new(s.cos(), 0.3 * s, s))
    };
    let gt = stamped(101, wiggle);

    let same = ate_rmse(&gt, &gt, Alignment::FirstFrame).unwrap();

    let offset = Pose::new(Rotation3::identity(), Vector3::new(1.0, 0.0, 0.0));
    let displaced = stamped(101, |k| offset.compose(&wiggle(k)));
    let rigid = ate_rmse(&displaced, &gt, Alignment::FirstFrame).unwrap();

    let still = stamped(101, |_| Pose::identity());
    let ramp = stamped(101, |k| Pose::new(Rotation3::identity(), Vector3::new(k as f64 / 100.0, 0.0, 0.0)));
    let linear = ate_rmse(&ramp, &still, Alignment::FirstFrame).unwrap();
    let closed_form = ((0..=100).map(|k| (k as f64 / 100.0).powi(2)).sum::<f64>() / 101.0).sqrt();

    report.check(
        9,
        "ATE evaluator",
        same.abs() < 1e-6 && rigid.abs() < 1e-6 && (linear - closed_form).abs() < 1e-6,
        format!("identical {same:.2e}, rigidly displaced {rigid:.2e}, linear ramp {linear:.6} (closed form {closed_form:.6})"),
    );
}

#[test]
fn acceptance() {
    let only: Option<Vec<u32>> =
        std::env::var(ONLY_ENV).ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut report = Report { failures: Vec::new() };
    let suite: [Criterion; 10] = [
        (1, exact_recovery),
        (2, first_order),
        (3, pixel_ray_equivalence),
        (4, ransac_robustness),
        (5, optimizer_suite),
        (9, ate_examples),
        (7, static_camera),
        (8, throughput),
        (8, euroc),
        // slowest last: renders 1000 frames
        (6, end_to_end),
    ];
    for (id, run) in suite {
        if wanted(id) {
            run(&mut report);
        }
    }
    assert!(report.failures.is_empty(), "failed criteria: {:?}", report.failures);
}
