use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::pyramid::ImagePyramid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KltParams {
    /// Odd window side length.
    pub window: usize,
    pub max_iters: usize,
    /// Stop iterating once the update is below this (pixels at the current level).
    pub epsilon: f64,
    /// Maximum forward-backward round-trip distance (pixels).
    pub fb_threshold: f64,
    /// Minimum smaller eigenvalue of the per-pixel averaged template Hessian.
    pub min_eigen: f64,
}

impl Default for KltParams {
    fn default() -> Self {
        Self {
            window: 21,
            max_iters: 30,
            epsilon: 0.01,
            fb_threshold: 0.5,
            min_eigen: 1e-3,
        }
    }
}

impl KltParams {
    pub fn half_window(&self) -> usize {
        self.window / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackStatus {
    Tracked,
    Lost,
    OutOfBounds,
    FbFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    pub px_prev: Vector2<f64>,
    pub px_cur: Vector2<f64>,
    pub status: TrackStatus,
    pub age: u32,
}

impl FeatureTrack {
    pub fn flow(&self) -> Vector2<f64> {
        self.px_cur - self.px_prev
    }

    pub fn is_tracked(&self) -> bool {
        self.status == TrackStatus::Tracked
    }
}

/// `[a.b, a.c]`, accumulated in eight independent lanes so the loop vectorises.
fn dots(a: &[f32], b: &[f32], c: &[f32]) -> [f64; 2] {
    const L: usize = 8;
    let mut ab = [0.0f32; L];
    let mut ac = [0.0f32; L];
    let (ha, ta) = a.split_at(a.len() / L * L);
    let (hb, tb) = b.split_at(ha.len());
    let (hc, tc) = c.split_at(ha.len());
    for ((ca, cb), cc) in ha.chunks_exact(L).zip(hb.chunks_exact(L)).zip(hc.chunks_exact(L)) {
        let ca: &[f32; L] = ca.try_into().expect("chunk");
        let cb: &[f32; L] = cb.try_into().expect("chunk");
        let cc: &[f32; L] = cc.try_into().expect("chunk");
        for l in 0..L {
            ab[l] += ca[l] * cb[l];
            ac[l] += ca[l] * cc[l];
        }
    }
    let mut out = [ab, ac].map(|s| s.iter().map(|&v| v as f64).sum::<f64>());
    for ((&x, &y), &z) in ta.iter().zip(tb).zip(tc) {
        out[0] += (x * y) as f64;
        out[1] += (x * z) as f64;
    }
    out
}

/// Splits a patch with a one-pixel apron into its centre and Scharr gradients.
fn patch_gradients(padded: &[f32], ext: usize, centre: &mut [f32], gx: &mut [f32], gy: &mut [f32]) {
    let side = ext - 2;
    for j in 0..side {
        let up = &padded[j * ext..(j + 1) * ext];
        let mid = &padded[(j + 1) * ext..(j + 2) * ext];
        let down = &padded[(j + 2) * ext..(j + 3) * ext];
        let o = j * side;
        centre[o..o + side].copy_from_slice(&mid[1..side + 1]);
        let (ul, uc, ur) = (&up[..side], &up[1..side + 1], &up[2..]);
        let (ml, mr) = (&mid[..side], &mid[2..]);
        let (dl, dc, dr) = (&down[..side], &down[1..side + 1], &down[2..]);
        let (ox, oy) = (&mut gx[o..o + side], &mut gy[o..o + side]);
        for i in 0..side {
            ox[i] = (3.0 * (ur[i] - ul[i]) + 10.0 * (mr[i] - ml[i]) + 3.0 * (dr[i] - dl[i])) / 32.0;
            oy[i] = (3.0 * (dl[i] - ul[i]) + 10.0 * (dc[i] - uc[i]) + 3.0 * (dr[i] - ur[i])) / 32.0;
        }
    }
}

/// Inverse-compositional Lucas-Kanade for a translation, coarse to fine.
///
/// `guess` is the initial displacement at level 0. Returns the tracked
/// position in `cur`, or `None` when the template has no texture or the
/// iteration diverges.
pub fn track_point(
    prev: &ImagePyramid,
    cur: &ImagePyramid,
    point: &Vector2<f64>,
    guess: &Vector2<f64>,
    params: &KltParams,
) -> Option<Vector2<f64>> {
    let levels = prev.num_levels().min(cur.num_levels());
    let half = params.half_window();
    let n = (2 * half + 1) * (2 * half + 1);
    let ext = 2 * half + 3;
    let mut padded = vec![0.0f32; ext * ext];
    let mut template = vec![0.0f32; n];
    let mut tgx = vec![0.0f32; n];
    let mut tgy = vec![0.0f32; n];
    let mut warped = vec![0.0f32; n];

    let top = levels - 1;
    let mut flow = guess / f64::from(1u32 << top);
    for level in (0..levels).rev() {
        let scale = f64::from(1u32 << level);
        let p = point / scale;
        let img_prev = &prev.levels[level];
        let img_cur = &cur.levels[level];

        // Scharr on the interpolated patch equals interpolating the Scharr
        // image, away from the clamped border
        img_prev.sample_patch(p.x, p.y, half + 1, &mut padded);
        patch_gradients(&padded, ext, &mut template, &mut tgx, &mut tgy);
        let [hxx, hxy] = dots(&tgx, &tgx, &tgy);
        let [hyy, _] = dots(&tgy, &tgy, &tgy);
        let hessian = Matrix2::new(hxx, hxy, hxy, hyy);
        let half_diff = 0.5 * (hxx - hyy);
        let min_eig = 0.5 * (hxx + hyy) - (half_diff * half_diff + hxy * hxy).sqrt();
        if min_eig / (n as f64) < params.min_eigen {
            return None;
        }
        let inv = hessian.try_inverse()?;

        for _ in 0..params.max_iters {
            img_cur.sample_patch(p.x + flow.x, p.y + flow.y, half, &mut warped);
            for (w, t) in warped.iter_mut().zip(&template) {
                *w -= t;
            }
            let [bx, by] = dots(&warped, &tgx, &tgy);
            let delta = inv * Vector2::new(bx, by);
            flow -= delta;
            if !flow.x.is_finite() || !flow.y.is_finite() {
                return None;
            }
            if delta.norm() < params.epsilon {
                break;
            }
        }
        if level > 0 {
            flow *= 2.0;
        }
    }
    Some(point + flow)
}

fn in_bounds(p: &Vector2<f64>, w: usize, h: usize, margin: f64) -> bool {
    p.x >= margin && p.y >= margin && p.x <= w as f64 - 1.0 - margin && p.y <= h as f64 - 1.0 - margin
}

/// Tracks `points` from `prev` to `cur` with forward-backward verification.
/// The output order matches the input order.
pub fn track_klt(
    prev: &ImagePyramid,
    cur: &ImagePyramid,
    points: &[(u64, Vector2<f64>, u32)],
    params: &KltParams,
) -> Vec<FeatureTrack> {
    track_klt_guided(prev, cur, points, &[], params)
}

/// [`track_klt`] starting each point from a predicted displacement.
/// Points beyond the end of `guesses` start from zero.
pub fn track_klt_guided(
    prev: &ImagePyramid,
    cur: &ImagePyramid,
    points: &[(u64, Vector2<f64>, u32)],
    guesses: &[Vector2<f64>],
    params: &KltParams,
) -> Vec<FeatureTrack> {
    let (w, h) = cur.base().dims();
    let margin = params.half_window() as f64;
    points
        .par_iter()
        .enumerate()
        .map(|(i, &(id, px_prev, age))| {
            let mut track = FeatureTrack {
                id,
                px_prev,
                px_cur: px_prev,
                status: TrackStatus::Lost,
                age,
            };
            if !in_bounds(&px_prev, w, h, margin) {
                track.status = TrackStatus::OutOfBounds;
                return track;
            }
            let guess = guesses.get(i).copied().unwrap_or_else(Vector2::zeros);
            let Some(fwd) = track_point(prev, cur, &px_prev, &guess, params) else {
                return track;
            };
            track.px_cur = fwd;
            if !in_bounds(&fwd, w, h, margin) {
                track.status = TrackStatus::OutOfBounds;
                return track;
            }
            let back = track_point(cur, prev, &fwd, &(px_prev - fwd), params);
            track.status = match back {
                Some(b) if (b - px_prev).norm() <= params.fb_threshold => {
                    track.age = age + 1;
                    TrackStatus::Tracked
                }
                _ => TrackStatus::FbFailed,
            };
            track
        })
        .collect()
}
