use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::klt::{track_point, KltParams};
use super::pyramid::ImagePyramid;
use crate::camera::{Ray, StereoRig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoParams {
    /// Maximum reprojection error in either camera for an accepted match (pixels).
    pub max_reproj_px: f64,
    /// Matches farther than this are dropped (meters).
    pub max_depth: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self {
            max_reproj_px: 1.0,
            max_depth: 50.0,
        }
    }
}

/// Triangulated point in the left camera frame, lying on the left ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoPoint {
    pub point: Vector3<f64>,
    /// Euclidean depth `|point|`.
    pub depth: f64,
    pub px_right: Vector2<f64>,
}

/// Midpoint of the common perpendicular between the left ray through the
/// origin and the right ray (given in the left frame) through `right_center`.
/// Returns `None` for parallel or diverging rays.
pub fn triangulate_midpoint(
    left_ray: &Vector3<f64>,
    right_ray: &Vector3<f64>,
    right_center: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let a = left_ray.normalize();
    let b = right_ray.normalize();
    let c = right_center;
    let ab = a.dot(&b);
    let denom = 1.0 - ab * ab;
    if denom < 1e-14 {
        return None;
    }
    let ac = a.dot(c);
    let bc = b.dot(c);
    let lambda = (ac - ab * bc) / denom;
    let mu = (ab * ac - bc) / denom;
    if !(lambda > 0.0 && mu > 0.0) {
        return None;
    }
    Some(0.5 * (a * lambda + c + b * mu))
}

/// Matches each left pixel into the right image by KLT, starting from the
/// infinite-depth prediction, then triangulates. `None` marks a failed match.
pub fn stereo_depth(
    rig: &StereoRig,
    left: &ImagePyramid,
    right: &ImagePyramid,
    pixels: &[Vector2<f64>],
    klt: &KltParams,
    params: &StereoParams,
) -> Vec<Option<StereoPoint>> {
    let right_center = rig.right_center();
    let r_lr = rig.rotation_rl.inverse();
    let (w, h) = right.base().dims();
    let margin = klt.half_window() as f64;
    pixels
        .par_iter()
        .map(|px_left| {
            let ray_left: Ray = rig.left.unproject(px_left).ok()?;
            let init = rig.right.project(&(rig.rotation_rl * ray_left.into_inner())).ok()?;
            let px_right = track_point(left, right, px_left, &(init - px_left), klt)?;
            if !(px_right.x >= margin
                && px_right.y >= margin
                && px_right.x <= w as f64 - 1.0 - margin
                && px_right.y <= h as f64 - 1.0 - margin)
            {
                return None;
            }
            let back = track_point(right, left, &px_right, &(px_left - px_right), klt)?;
            if (back - px_left).norm() > klt.fb_threshold {
                return None;
            }
            let ray_right = rig.right.unproject(&px_right).ok()?;
            let mid = triangulate_midpoint(&ray_left, &(r_lr * ray_right.into_inner()), &right_center)?;
            let depth = mid.norm();
            if !(depth.is_finite() && depth <= params.max_depth) {
                return None;
            }
            let point = ray_left.into_inner() * depth;
            let reproj = rig.right.project(&rig.left_to_right(&point)).ok()?;
            if (reproj - px_right).norm() > params.max_reproj_px {
                return None;
            }
            Some(StereoPoint {
                point,
                depth,
                px_right,
            })
        })
        .collect()
}
