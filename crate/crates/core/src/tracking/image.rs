use crate::{Error, Result};

/// Single-channel `f32` image, row-major, intensities on a 0..255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ImageSizeMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_gray8(img: &image::GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        let raw = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self::from_gray8(&image::open(path)?.to_luma8()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_gray8().save(path)?;
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel access with coordinates clamped to the border.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation with border clamping.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xf = x.floor();
        let yf = y.floor();
        let ax = x - xf;
        let ay = y - yf;
        let x0 = xf as isize;
        let y0 = yf as isize;
        if x0 >= 0 && y0 >= 0 && (x0 as usize) + 1 < self.width && (y0 as usize) + 1 < self.height {
            let i = y0 as usize * self.width + x0 as usize;
            let p00 = self.data[i] as f64;
            let p10 = self.data[i + 1] as f64;
            let p01 = self.data[i + self.width] as f64;
            let p11 = self.data[i + self.width + 1] as f64;
            return (1.0 - ay) * ((1.0 - ax) * p00 + ax * p10) + ay * ((1.0 - ax) * p01 + ax * p11);
        }
        let p00 = self.at_clamped(x0, y0) as f64;
        let p10 = self.at_clamped(x0 + 1, y0) as f64;
        let p01 = self.at_clamped(x0, y0 + 1) as f64;
        let p11 = self.at_clamped(x0 + 1, y0 + 1) as f64;
        (1.0 - ay) * ((1.0 - ax) * p00 + ax * p10) + ay * ((1.0 - ax) * p01 + ax * p11)
    }

    /// Samples the `(2 half + 1)^2` window centred on `(x, y)` row by row into
    /// `out`, with the same border clamping as [`sample`](Self::sample). All
    /// taps share one set of bilinear weights.
    pub fn sample_patch(&self, x: f64, y: f64, half: usize, out: &mut [f32]) {
        let side = 2 * half + 1;
        debug_assert_eq!(out.len(), side * side);
        let xf = x.floor();
        let yf = y.floor();
        let (ax, ay) = (x - xf, y - yf);
        let x0 = xf as isize - half as isize;
        let y0 = yf as isize - half as isize;
        let (w00, w10) = (((1.0 - ax) * (1.0 - ay)) as f32, (ax * (1.0 - ay)) as f32);
        let (w01, w11) = (((1.0 - ax) * ay) as f32, (ax * ay) as f32);
        let (w, h) = (self.width as isize, self.height as isize);
        // columns [lo, hi) have both taps inside; outside that range both taps
        // clamp to the same border column
        let lo = (-x0).clamp(0, side as isize) as usize;
        let hi = (w - 1 - x0).clamp(lo as isize, side as isize) as usize;
        let (top_w, bottom_w) = (w00 + w10, w01 + w11);
        for (j, dst) in out.chunks_exact_mut(side).enumerate() {
            let yy = y0 + j as isize;
            let r0 = (yy.clamp(0, h - 1) * w) as usize;
            let r1 = ((yy + 1).clamp(0, h - 1) * w) as usize;
            if lo > 0 {
                let v = top_w * self.data[r0] + bottom_w * self.data[r1];
                dst[..lo].fill(v);
            }
            if hi < side {
                let last = self.width - 1;
                let v = top_w * self.data[r0 + last] + bottom_w * self.data[r1 + last];
                dst[hi..].fill(v);
            }
            if hi > lo {
                let c = (x0 + lo as isize) as usize;
                let n = hi - lo;
                let t0 = &self.data[r0 + c..r0 + c + n];
                let t1 = &self.data[r0 + c + 1..r0 + c + 1 + n];
                let b0 = &self.data[r1 + c..r1 + c + n];
                let b1 = &self.data[r1 + c + 1..r1 + c + 1 + n];
                for ((((d, &a), &b), &c), &e) in dst[lo..hi].iter_mut().zip(t0).zip(t1).zip(b0).zip(b1) {
                    *d = w00 * a + w10 * b + w01 * c + w11 * e;
                }
            }
        }
    }

    /// Horizontal and vertical Scharr derivatives, normalised to intensity per pixel.
    pub fn gradients(&self) -> (Image, Image) {
        let (w, h) = (self.width, self.height);
        let mut gx = Image::new(w, h);
        let mut gy = Image::new(w, h);
        let scharr = |img: &Image, x: isize, y: isize| {
            let p = |dx: isize, dy: isize| img.at_clamped(x + dx, y + dy);
            let dx = 3.0 * (p(1, -1) - p(-1, -1)) + 10.0 * (p(1, 0) - p(-1, 0)) + 3.0 * (p(1, 1) - p(-1, 1));
            let dy = 3.0 * (p(-1, 1) - p(-1, -1)) + 10.0 * (p(0, 1) - p(0, -1)) + 3.0 * (p(1, 1) - p(1, -1));
            (dx / 32.0, dy / 32.0)
        };
        for y in 0..h {
            let interior_row = y > 0 && y + 1 < h && w > 2;
            if !interior_row {
                for x in 0..w {
                    let (a, b) = scharr(self, x as isize, y as isize);
                    gx.data[y * w + x] = a;
                    gy.data[y * w + x] = b;
                }
                continue;
            }
            let up = &self.data[(y - 1) * w..y * w];
            let mid = &self.data[y * w..(y + 1) * w];
            let down = &self.data[(y + 1) * w..(y + 2) * w];
            let ox = &mut gx.data[y * w..(y + 1) * w];
            let oy = &mut gy.data[y * w..(y + 1) * w];
            let n = w - 2;
            let (ul, uc, ur) = (&up[..n], &up[1..n + 1], &up[2..]);
            let (ml, mr) = (&mid[..n], &mid[2..]);
            let (dl, dc, dr) = (&down[..n], &down[1..n + 1], &down[2..]);
            for i in 0..n {
                ox[i + 1] = (3.0 * (ur[i] - ul[i]) + 10.0 * (mr[i] - ml[i]) + 3.0 * (dr[i] - dl[i])) / 32.0;
                oy[i + 1] = (3.0 * (dl[i] - ul[i]) + 10.0 * (dc[i] - uc[i]) + 3.0 * (dr[i] - ur[i])) / 32.0;
            }
            for x in [0, w - 1] {
                let (a, b) = scharr(self, x as isize, y as isize);
                ox[x] = a;
                oy[x] = b;
            }
        }
        (gx, gy)
    }

    /// 5-tap binomial blur followed by 2x decimation.
    pub fn pyr_down(&self) -> Image {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let nw = w.div_ceil(2);
        let nh = h.div_ceil(2);
        // horizontal pass at decimated columns
        let mut tmp = vec![0.0f32; nw * h];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for nx in 0..nw {
                let x = 2 * nx;
                tmp[y * nw + nx] = if x >= 2 && x + 2 < w {
                    K[0] * row[x - 2] + K[1] * row[x - 1] + K[2] * row[x] + K[3] * row[x + 1] + K[4] * row[x + 2]
                } else {
                    K.iter()
                        .enumerate()
                        .map(|(k, wk)| wk * self.at_clamped(x as isize + k as isize - 2, y as isize))
                        .sum()
                };
            }
        }
        let mut out = Image::new(nw, nh);
        for ny in 0..nh {
            let y = (2 * ny) as isize;
            for nx in 0..nw {
                let mut acc = 0.0;
                for (k, wk) in K.iter().enumerate() {
                    let yy = (y + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += wk * tmp[yy * nw + nx];
                }
                out.data[ny * nw + nx] = acc;
            }
        }
        out
    }
}
