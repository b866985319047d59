//! Plain-text trajectories: one `timestamp tx ty tz qx qy qz qw` line per pose.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::lie::Pose;
use crate::pipeline::StampedPose;
use crate::{Error, Result};

/// Poses with strictly increasing timestamps (seconds).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

pub(crate) fn quaternion_to_rotation(q: [f64; 4]) -> Option<Rotation3<f64>> {
    let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
    let n = quat.norm();
    if !(n.is_finite() && n > 1e-12) {
        return None;
    }
    Some(UnitQuaternion::from_quaternion(quat).to_rotation_matrix())
}

/// `[x, y, z, w]` with `w >= 0`.
pub(crate) fn rotation_to_quaternion(r: &Rotation3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.i, s * q.j, s * q.k, s * q.w]
}

/// Shortest round-trip decimal; zero prints as `0` regardless of sign.
fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self> {
        if let Some(w) = poses.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::NonMonotonicTimestamp {
                previous: w[0].timestamp,
                got: w[1].timestamp,
            });
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.poses.iter().map(|p| p.timestamp)
    }

    /// Pose whose timestamp is nearest to `t`, if within `gate` seconds.
    pub fn nearest(&self, t: f64, gate: f64) -> Option<&StampedPose> {
        let i = self.poses.partition_point(|p| p.timestamp < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.poses.get(j))
            .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
            .filter(|p| (p.timestamp - t).abs() <= gate)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.poses.len() * 96);
        for p in &self.poses {
            let t = p.pose.translation;
            let q = rotation_to_quaternion(&p.pose.rotation);
            let _ = writeln!(
                out,
                "{:.9} {} {} {} {} {} {} {}",
                p.timestamp,
                num(t.x),
                num(t.y),
                num(t.z),
                num(q[0]),
                num(q[1]),
                num(q[2]),
                num(q[3])
            );
        }
        out
    }

    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut poses: Vec<StampedPose> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: idx + 1,
                message,
            };
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| err(format!("non-numeric field in `{line}`")))?;
            if fields.len() != 8 {
                return Err(err(format!("expected 8 fields, got {}", fields.len())));
            }
            let rotation = quaternion_to_rotation([fields[4], fields[5], fields[6], fields[7]])
                .ok_or_else(|| err("zero quaternion".into()))?;
            let timestamp = fields[0];
            if let Some(prev) = poses.last() {
                if !(timestamp > prev.timestamp) {
                    return Err(err(format!("timestamp {timestamp} does not increase")));
                }
            }
            poses.push(StampedPose {
                timestamp,
                pose: Pose::new(rotation, Vector3::new(fields[1], fields[2], fields[3])),
            });
        }
        Ok(Self { poses })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl From<&[StampedPose]> for Trajectory {
    /// Keeps the first pose of every run of non-increasing timestamps.
    fn from(poses: &[StampedPose]) -> Self {
        let mut out: Vec<StampedPose> = Vec::with_capacity(poses.len());
        for p in poses {
            if out.last().is_none_or(|l| p.timestamp > l.timestamp) {
                out.push(*p);
            }
        }
        Self { poses: out }
    }
}
