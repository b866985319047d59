//! Run configuration as flat `section.key = value` text. Every tunable
//! default has a key; angles are given in degrees.

use std::fmt::Write as _;
use std::path::Path;

use super::ate::Alignment;
use super::kv::KeyValues;
use crate::pipeline::PipelineConfig;
use crate::synth::SceneParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Config {
    pub pipeline: PipelineConfig,
    /// Random-scene generator used by the synthetic checks.
    pub scene: SceneParams,
    pub align: Alignment,
}

/// Calls `$m!(key, place, unit)` for every key; `unit` is `raw` or `deg`.
macro_rules! for_each_key {
    ($m:ident, $c:expr) => {
        $m!("pipeline.mode", $c.pipeline.mode, raw);
        $m!("pipeline.optimize", $c.pipeline.optimize, raw);
        $m!("pipeline.pyramid_levels", $c.pipeline.pyramid_levels, raw);
        $m!("pipeline.replenish_ratio", $c.pipeline.replenish_ratio, raw);
        $m!("pipeline.keyframe_window", $c.pipeline.keyframe_window, raw);
        $m!("pipeline.landmark_max_error", $c.pipeline.landmark_max_error, raw);
        $m!("ransac.seed", $c.pipeline.ransac_seed, raw);
        $m!("ransac.success_probability", $c.pipeline.ransac.success_probability, raw);
        $m!("ransac.sample_size", $c.pipeline.ransac.sample_size, raw);
        $m!("ransac.max_iterations", $c.pipeline.ransac.max_iterations, raw);
        $m!("ransac.early_termination_ratio", $c.pipeline.ransac.early_termination_ratio, raw);
        $m!("ransac.tau_pi_deg", $c.pipeline.ransac.tau_pi, deg);
        $m!("ransac.tau_theta_deg", $c.pipeline.ransac.tau_theta, deg);
        $m!("ransac.textbook_adaptation", $c.pipeline.ransac.textbook_adaptation, raw);
        $m!("detector.target_count", $c.pipeline.detector.target_count, raw);
        $m!("detector.cell_size", $c.pipeline.detector.cell_size, raw);
        $m!("detector.min_score", $c.pipeline.detector.min_score, raw);
        $m!("detector.block_radius", $c.pipeline.detector.block_radius, raw);
        $m!("detector.border", $c.pipeline.detector.border, raw);
        $m!("klt.window", $c.pipeline.klt.window, raw);
        $m!("klt.max_iters", $c.pipeline.klt.max_iters, raw);
        $m!("klt.epsilon", $c.pipeline.klt.epsilon, raw);
        $m!("klt.fb_threshold", $c.pipeline.klt.fb_threshold, raw);
        $m!("klt.min_eigen", $c.pipeline.klt.min_eigen, raw);
        $m!("stereo.max_reproj_px", $c.pipeline.stereo.max_reproj_px, raw);
        $m!("stereo.max_depth", $c.pipeline.stereo.max_depth, raw);
        $m!("keyframe.tau_n", $c.pipeline.keyframe.tau_n, raw);
        $m!("keyframe.max_elapsed", $c.pipeline.keyframe.max_elapsed, raw);
        $m!("keyframe.rot_thresh_deg", $c.pipeline.keyframe.rot_thresh, deg);
        $m!("keyframe.trans_thresh", $c.pipeline.keyframe.trans_thresh, raw);
        $m!("opt.cauchy_c", $c.pipeline.optimizer.cauchy_c, raw);
        $m!("opt.max_iters", $c.pipeline.optimizer.max_iters, raw);
        $m!("opt.step_tol", $c.pipeline.optimizer.step_tol, raw);
        $m!("opt.damping_init", $c.pipeline.optimizer.damping_init, raw);
        $m!("opt.damping_scale", $c.pipeline.optimizer.damping_scale, raw);
        $m!("opt.min_observations", $c.pipeline.optimizer.min_observations, raw);
        $m!("synth.num_points", $c.scene.num_points, raw);
        $m!("synth.half_extent", $c.scene.half_extent, raw);
        $m!("synth.min_depth", $c.scene.min_depth, raw);
        $m!("synth.max_depth", $c.scene.max_depth, raw);
        $m!("synth.max_omega", $c.scene.max_omega, raw);
        $m!("synth.max_v", $c.scene.max_v, raw);
        $m!("eval.align", $c.align, raw);
    };
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, source)?;
        let mut cfg = Config::default();
        macro_rules! read {
            ($key:expr, $place:expr, raw) => {
                kv.take($key, &mut $place)?;
            };
            ($key:expr, $place:expr, deg) => {{
                let mut deg = $place.to_degrees();
                kv.take($key, &mut deg)?;
                $place = deg.to_radians();
            }};
        }
        for_each_key!(read, cfg);
        kv.finish()?;
        // tau_u follows tau_pi; the pipeline recomputes it for the active mode
        cfg.pipeline.ransac.tau_u = crate::robust::ray_flow_threshold(cfg.pipeline.ransac.tau_pi);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Full listing of every key, parseable by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = self;
        macro_rules! write_key {
            ($key:expr, $place:expr, raw) => {
                let _ = writeln!(out, "{} = {}", $key, $place);
            };
            ($key:expr, $place:expr, deg) => {
                let _ = writeln!(out, "{} = {}", $key, $place.to_degrees());
            };
        }
        for_each_key!(write_key, c);
        out
    }

    fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        p.ransac.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if p.pyramid_levels == 0 {
            return bad("pipeline.pyramid_levels must be >= 1");
        }
        if p.klt.window < 3 || p.klt.window.is_multiple_of(2) {
            return bad("klt.window must be odd and >= 3");
        }
        if !(0.0..=1.0).contains(&p.replenish_ratio) {
            return bad("pipeline.replenish_ratio must lie in [0, 1]");
        }
        if !(p.optimizer.cauchy_c > 0.0) {
            return bad("opt.cauchy_c must be positive");
        }
        if p.keyframe_window == 0 {
            return bad("pipeline.keyframe_window must be >= 1");
        }
        let s = &self.scene;
        if !(s.min_depth > 0.0 && s.max_depth > s.min_depth && s.half_extent > 0.0) {
            return bad("synth depth range or extent invalid");
        }
        Ok(())
    }
}
