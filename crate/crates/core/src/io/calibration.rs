//! Stereo calibration file.
//!
//! ```text
//! left.model = pinhole            # pinhole | pinhole_radtan | equidistant
//! left.fx = 458.654
//! left.fy = 457.296
//! left.cx = 367.215
//! left.cy = 248.375
//! left.dist = -0.28340811 0.07395907 0.00019359 1.76187114e-05
//! left.width = 752
//! left.height = 480
//! right.* = ...                   # same keys
//! stereo.q_rl = qx qy qz qw       # X_right = R_rl X_left + t_rl
//! stereo.t_rl = tx ty tz
//! body.q_bc = qx qy qz qw         # optional: left camera in the ground-truth body frame
//! body.t_bc = tx ty tz
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::kv::KeyValues;
use super::trajectory::{quaternion_to_rotation, rotation_to_quaternion};
use crate::camera::{CameraIntrinsics, CameraModel, StereoRig};
use crate::lie::Pose;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub rig: StereoRig,
    /// Left camera pose in the body frame that ground truth refers to.
    pub body_from_camera: Option<Pose>,
}

impl Calibration {
    pub fn new(rig: StereoRig) -> Self {
        Self {
            rig,
            body_from_camera: None,
        }
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, source)?;
        let left = read_camera(&mut kv, "left")?;
        let right = read_camera(&mut kv, "right")?;
        let (rotation_rl, translation_rl) = read_transform(&mut kv, "stereo.q_rl", "stereo.t_rl", true)?;
        let rig = StereoRig::new(left, right, rotation_rl, translation_rl)?;
        let body_from_camera = if kv.contains("body.q_bc") || kv.contains("body.t_bc") {
            let (r, t) = read_transform(&mut kv, "body.q_bc", "body.t_bc", false)?;
            Some(Pose::new(r, t))
        } else {
            None
        };
        kv.finish()?;
        Ok(Self { rig, body_from_camera })
    }

    /// `MissingCalibration` when the file does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingCalibration(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, cam) in [("left", &self.rig.left), ("right", &self.rig.right)] {
            let _ = writeln!(out, "{name}.model = {}", cam.model.as_str());
            for (key, v) in [("fx", cam.fx), ("fy", cam.fy), ("cx", cam.cx), ("cy", cam.cy)] {
                let _ = writeln!(out, "{name}.{key} = {v}");
            }
            let d = cam.dist;
            let _ = writeln!(out, "{name}.dist = {} {} {} {}", d[0], d[1], d[2], d[3]);
            let _ = writeln!(out, "{name}.width = {}", cam.width);
            let _ = writeln!(out, "{name}.height = {}", cam.height);
        }
        write_transform(&mut out, "stereo.q_rl", "stereo.t_rl", &Pose::new(self.rig.rotation_rl, self.rig.translation_rl));
        if let Some(b) = &self.body_from_camera {
            write_transform(&mut out, "body.q_bc", "body.t_bc", b);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn read_camera(kv: &mut KeyValues, name: &str) -> Result<CameraIntrinsics> {
    let model: CameraModel = kv.require(&format!("{name}.model"))?;
    let fx = kv.require(&format!("{name}.fx"))?;
    let fy = kv.require(&format!("{name}.fy"))?;
    let cx = kv.require(&format!("{name}.cx"))?;
    let cy = kv.require(&format!("{name}.cy"))?;
    let width = kv.require(&format!("{name}.width"))?;
    let height = kv.require(&format!("{name}.height"))?;
    let mut dist = [0.0; 4];
    kv.take_array(&format!("{name}.dist"), &mut dist)?;
    CameraIntrinsics::new(model, fx, fy, cx, cy, dist, width, height)
}

fn read_transform(
    kv: &mut KeyValues,
    q_key: &str,
    t_key: &str,
    need_translation: bool,
) -> Result<(nalgebra::Rotation3<f64>, Vector3<f64>)> {
    let mut q = [0.0, 0.0, 0.0, 1.0];
    let mut t = [0.0; 3];
    kv.take_array(q_key, &mut q)?;
    if need_translation && !kv.contains(t_key) {
        return Err(Error::Config(format!("missing key `{t_key}`")));
    }
    kv.take_array(t_key, &mut t)?;
    let rotation = quaternion_to_rotation(q).ok_or_else(|| Error::Config(format!("`{q_key}` is not a valid quaternion")))?;
    Ok((rotation, Vector3::from(t)))
}

fn write_transform(out: &mut String, q_key: &str, t_key: &str, pose: &Pose) {
    let q = rotation_to_quaternion(&pose.rotation);
    let t = pose.translation;
    let _ = writeln!(out, "{q_key} = {} {} {} {}", q[0], q[1], q[2], q[3]);
    let _ = writeln!(out, "{t_key} = {} {} {}", t.x, t.y, t.z);
}
