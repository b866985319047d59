//! Absolute trajectory error.

use nalgebra::{Matrix3, Vector3};

use super::trajectory::Trajectory;
use crate::pipeline::StampedPose;
use crate::{Error, Result};

/// Maximum timestamp difference for associating estimate and ground truth (s).
pub const ASSOCIATION_GATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Rigidly move the estimate so its first pose equals ground truth.
    #[default]
    FirstFrame,
    /// Least-squares rigid alignment of positions at unit scale.
    Similarity,
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_frame" => Ok(Self::FirstFrame),
            "sim" | "similarity" => Ok(Self::Similarity),
            other => Err(Error::Config(format!("unknown alignment '{other}' (expected first|sim)"))),
        }
    }
}

impl std::fmt::Display for Alignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FirstFrame => "first",
            Self::Similarity => "sim",
        })
    }
}

/// Pairs every estimated pose with the nearest ground-truth pose within the gate.
pub fn associate<'a>(est: &'a Trajectory, gt: &'a Trajectory, gate: f64) -> Vec<(&'a StampedPose, &'a StampedPose)> {
    est.poses()
        .iter()
        .filter_map(|e| gt.nearest(e.timestamp, gate).map(|g| (e, g)))
        .collect()
}

/// Rotation and translation minimising `sum |R a_i + t - b_i|^2`.
fn rigid_fit(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let h: Matrix3<f64> = a.iter().zip(b).map(|(p, q)| (p - ca) * (q - cb).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    (r, cb - r * ca)
}

/// RMS translational error after alignment. Needs at least two associated poses.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: Alignment) -> Result<f64> {
    let pairs = associate(est, gt, ASSOCIATION_GATE);
    if pairs.len() < 2 {
        return Err(Error::NoOverlap);
    }
    let (rot, trans) = match align {
        Alignment::FirstFrame => {
            let (e0, g0) = pairs[0];
            let t = g0.pose.compose(&e0.pose.inverse());
            (*t.rotation.matrix(), t.translation)
        }
        Alignment::Similarity => {
            let a: Vec<_> = pairs.iter().map(|(e, _)| e.pose.translation).collect();
            let b: Vec<_> = pairs.iter().map(|(_, g)| g.pose.translation).collect();
            rigid_fit(&a, &b)
        }
    };
    let sum: f64 = pairs
        .iter()
        .map(|(e, g)| (rot * e.pose.translation + trans - g.pose.translation).norm_squared())
        .sum();
    Ok((sum / pairs.len() as f64).sqrt())
}
