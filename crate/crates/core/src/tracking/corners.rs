use nalgebra::Vector2;

use super::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub target_count: usize,
    pub cell_size: usize,
    /// Minimum of the smaller structure-tensor eigenvalue (intensity^2 / px^2).
    pub min_score: f64,
    /// Half size of the structure-tensor window.
    pub block_radius: usize,
    /// Detections keep at least this many pixels to the border.
    pub border: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            target_count: 200,
            cell_size: 32,
            min_score: 20.0,
            block_radius: 2,
            border: 12,
        }
    }
}

/// Box sum over `[i - r, i + r]` clipped to the slice, for every index.
fn box_sum_1d(src: &[f32], r: usize, dst: &mut [f32]) {
    let n = src.len();
    let edge = |i: usize| src[i.saturating_sub(r)..(i + r + 1).min(n)].iter().sum::<f32>();
    if n <= 2 * r {
        for (i, d) in dst.iter_mut().enumerate() {
            *d = edge(i);
        }
        return;
    }
    let inner = &mut dst[r..n - r];
    inner.fill(0.0);
    for k in 0..=2 * r {
        for (d, &v) in inner.iter_mut().zip(&src[k..k + n - 2 * r]) {
            *d += v;
        }
    }
    for i in (0..r).chain(n - r..n) {
        dst[i] = edge(i);
    }
}

/// Shi-Tomasi response: smaller eigenvalue of the box-averaged structure
/// tensor over a `(2 r + 1)^2` window clipped to the image.
pub fn min_eigen_response(gx: &Image, gy: &Image, block_radius: usize) -> Image {
    let (w, h) = gx.dims();
    let r = block_radius;
    let (dx, dy) = (gx.data(), gy.data());
    // horizontal pass on the tensor entries
    let mut hxx = vec![0.0f32; w * h];
    let mut hxy = vec![0.0f32; w * h];
    let mut hyy = vec![0.0f32; w * h];
    let mut row = vec![0.0f32; w];
    for y in 0..h {
        let (a, b) = (&dx[y * w..(y + 1) * w], &dy[y * w..(y + 1) * w]);
        for (dst, prod) in [
            (&mut hxx, (a, a)),
            (&mut hxy, (a, b)),
            (&mut hyy, (b, b)),
        ] {
            for ((o, &p), &q) in row.iter_mut().zip(prod.0).zip(prod.1) {
                *o = p * q;
            }
            box_sum_1d(&row, r, &mut dst[y * w..(y + 1) * w]);
        }
    }
    let count = |i: usize, n: usize| ((i + r + 1).min(n) - i.saturating_sub(r)) as f32;
    let col_counts: Vec<f32> = (0..w).map(|x| count(x, w)).collect();
    let mut out = Image::new(w, h);
    let mut sxx = vec![0.0f32; w];
    let mut sxy = vec![0.0f32; w];
    let mut syy = vec![0.0f32; w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for (s, src) in [(&mut sxx, &hxx), (&mut sxy, &hxy), (&mut syy, &hyy)] {
            s.copy_from_slice(&src[y0 * w..(y0 + 1) * w]);
            for yy in y0 + 1..y1 {
                for (acc, &v) in s.iter_mut().zip(&src[yy * w..(yy + 1) * w]) {
                    *acc += v;
                }
            }
        }
        let rows = (y1 - y0) as f32;
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for x in 0..w {
            let inv = 1.0 / (rows * col_counts[x]);
            let (a, b, c) = (sxx[x] * inv, sxy[x] * inv, syy[x] * inv);
            let half_diff = 0.5 * (a - c);
            dst[x] = (0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt()).max(0.0);
        }
    }
    out
}

/// Shi-Tomasi response of `img` on `[x0, x1) x [y0, y1)`, identical to the
/// same window of `min_eigen_response` over the whole image but touching
/// only the pixels it needs.
fn window_response(img: &Image, r: usize, (x0, x1): (usize, usize), (y0, y1): (usize, usize)) -> Image {
    let (w, h) = img.dims();
    let (wx0, wx1) = (x0.saturating_sub(r), (x1 + r).min(w));
    let (wy0, wy1) = (y0.saturating_sub(r), (y1 + r).min(h));
    // one extra pixel so the gradients inside match the clamped full-image ones
    let padded = Image::from_fn(wx1 - wx0 + 2, wy1 - wy0 + 2, |i, j| {
        img.at_clamped((wx0 + i) as isize - 1, (wy0 + j) as isize - 1)
    });
    let (pgx, pgy) = padded.gradients();
    let crop = |g: &Image| Image::from_fn(wx1 - wx0, wy1 - wy0, |i, j| g.at(i + 1, j + 1));
    let resp = min_eigen_response(&crop(&pgx), &crop(&pgy), r);
    Image::from_fn(x1 - x0, y1 - y0, |i, j| resp.at(i + x0 - wx0, j + y0 - wy0))
}

/// Strongest response in the image; the first maximum in row order wins.
fn strongest(response: &Image) -> Option<(f32, usize, usize)> {
    let mut best: Option<(f32, usize, usize)> = None;
    let (w, h) = response.dims();
    for y in 0..h {
        for x in 0..w {
            let s = response.at(x, y);
            if best.is_none_or(|(b, _, _)| s > b) {
                best = Some((s, x, y));
            }
        }
    }
    best
}

/// Fills grid cells that hold no `existing` feature with the strongest
/// corner of the cell, keeping every new corner at least one cell size away
/// from all other features. The corner score is only evaluated in empty cells.
pub fn detect_features(img: &Image, existing: &[Vector2<f64>], params: &DetectorParams) -> Vec<Vector2<f64>> {
    if existing.len() >= params.target_count || params.cell_size == 0 {
        return Vec::new();
    }
    let (w, h) = img.dims();
    let cell = params.cell_size;
    let cols = w.div_ceil(cell);
    let rows = h.div_ceil(cell);
    let mut occupied = vec![false; cols * rows];
    for p in existing {
        if p.x >= 0.0 && p.y >= 0.0 {
            let (cx, cy) = (p.x as usize / cell, p.y as usize / cell);
            if cx < cols && cy < rows {
                occupied[cy * cols + cx] = true;
            }
        }
    }

    let border = params.border;
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for cy in 0..rows {
        for cx in 0..cols {
            if occupied[cy * cols + cx] {
                continue;
            }
            let ys = (cy * cell).max(border);
            let ye = ((cy + 1) * cell).min(h.saturating_sub(border));
            let xs = (cx * cell).max(border);
            let xe = ((cx + 1) * cell).min(w.saturating_sub(border));
            if xs >= xe || ys >= ye {
                continue;
            }
            let response = window_response(img, params.block_radius, (xs, xe), (ys, ye));
            if let Some((s, x, y)) = strongest(&response) {
                if s as f64 >= params.min_score {
                    candidates.push((s, x + xs, y + ys));
                }
            }
        }
    }
    // strongest first; ties broken by position for determinism
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });

    let min_dist2 = (cell * cell) as f64;
    let budget = params.target_count - existing.len();
    let mut accepted: Vec<Vector2<f64>> = Vec::new();
    for (_, x, y) in candidates {
        if accepted.len() >= budget {
            break;
        }
        let p = Vector2::new(x as f64, y as f64);
        let far = existing
            .iter()
            .chain(accepted.iter())
            .all(|q| (q - p).norm_squared() >= min_dist2);
        if far {
            accepted.push(p);
        }
    }
    accepted
}
