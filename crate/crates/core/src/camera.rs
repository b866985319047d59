//! Camera models mapping between pixels and unit viewing rays.

use nalgebra::{Matrix2, Matrix2x3, Rotation3, Unit, Vector2, Vector3};

use crate::{Error, Result};

/// Unit-norm viewing direction in the camera frame.
pub type Ray = Unit<Vector3<f64>>;

/// Maximum Newton iterations used to invert a distortion model.
pub const UNDISTORT_MAX_ITERS: usize = 20;
/// Convergence tolerance of the distortion inversion, in pixels.
pub const UNDISTORT_TOL_PX: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    Pinhole,
    /// Pinhole with radial-tangential distortion `[k1, k2, p1, p2]`.
    PinholeRadTan,
    /// Equidistant fisheye `theta_d = theta (1 + k1 theta^2 + ... + k4 theta^8)`.
    EquidistantFisheye,
}

impl CameraModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CameraModel::Pinhole => "pinhole",
            CameraModel::PinholeRadTan => "pinhole_radtan",
            CameraModel::EquidistantFisheye => "equidistant",
        }
    }
}

impl std::str::FromStr for CameraModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pinhole" => Ok(CameraModel::Pinhole),
            "pinhole_radtan" | "radtan" => Ok(CameraModel::PinholeRadTan),
            "equidistant" | "fisheye" | "kannala_brandt" => Ok(CameraModel::EquidistantFisheye),
            other => Err(Error::Config(format!("unknown camera model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub model: CameraModel,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: [f64; 4],
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: CameraModel,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        dist: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx >= 0.0 && cy >= 0.0 && cx <= width as f64 && cy <= height as f64) {
            return Err(Error::Config(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        if dist.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("distortion coefficients must be finite".into()));
        }
        Ok(Self {
            model,
            fx,
            fy,
            cx,
            cy,
            dist,
            width,
            height,
        })
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(CameraModel::Pinhole, fx, fy, cx, cy, [0.0; 4], width, height)
    }

    pub fn equidistant(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::new(CameraModel::EquidistantFisheye, fx, fy, cx, cy, k, width, height)
    }

    /// Mean focal length, used where a single `f` is required.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    /// Whether `px` lies inside the image with at least `margin` pixels to every border.
    pub fn contains(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= margin
            && px.y >= margin
            && px.x <= self.width as f64 - 1.0 - margin
            && px.y <= self.height as f64 - 1.0 - margin
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > 0.0) || !p.iter().all(|c| c.is_finite()) {
            return Err(Error::PointBehindCamera);
        }
        let (mx, my) = match self.model {
            CameraModel::Pinhole => (p.x / p.z, p.y / p.z),
            CameraModel::PinholeRadTan => {
                let d = self.distort_radtan(&Vector2::new(p.x / p.z, p.y / p.z));
                (d.x, d.y)
            }
            CameraModel::EquidistantFisheye => {
                let rho = p.x.hypot(p.y);
                let theta = rho.atan2(p.z);
                let scale = if rho < 1e-300 {
                    1.0 / p.z
                } else {
                    self.kb_theta_d(theta) / rho
                };
                (p.x * scale, p.y * scale)
            }
        };
        Ok(Vector2::new(self.fx * mx + self.cx, self.fy * my + self.cy))
    }

    /// Back-projects a pixel to a unit ray.
    pub fn unproject(&self, px: &Vector2<f64>) -> Result<Ray> {
        let mx = (px.x - self.cx) / self.fx;
        let my = (px.y - self.cy) / self.fy;
        let dir = match self.model {
            CameraModel::Pinhole => Vector3::new(mx, my, 1.0),
            CameraModel::PinholeRadTan => {
                let n = self.undistort_radtan(&Vector2::new(mx, my))?;
                Vector3::new(n.x, n.y, 1.0)
            }
            CameraModel::EquidistantFisheye => {
                let theta_d = mx.hypot(my);
                if theta_d < 1e-300 {
                    Vector3::z()
                } else {
                    let theta = self.kb_invert(theta_d)?;
                    let s = theta.sin() / theta_d;
                    Vector3::new(mx * s, my * s, theta.cos())
                }
            }
        };
        Ok(Unit::new_normalize(dir))
    }

    /// Jacobian of the distortion-free pinhole projection with respect to the point.
    ///
    /// Ignores `dist`; used to map ray flow onto pixel flow in the ideal pinhole case.
    pub fn ideal_projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        )
    }

    fn distort_radtan(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    fn distort_radtan_jacobian(&self, n: &Vector2<f64>) -> Matrix2<f64> {
        let [k1, k2, p1, p2] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        let d_radial = k1 + 2.0 * k2 * r2; // d(radial)/d(r2)
        let dxx = radial + 2.0 * x * x * d_radial + 2.0 * p1 * y + 6.0 * p2 * x;
        let dxy = 2.0 * x * y * d_radial + 2.0 * p1 * x + 2.0 * p2 * y;
        let dyx = 2.0 * x * y * d_radial + 2.0 * p1 * x + 2.0 * p2 * y;
        let dyy = radial + 2.0 * y * y * d_radial + 6.0 * p1 * y + 2.0 * p2 * x;
        Matrix2::new(dxx, dxy, dyx, dyy)
    }

    // Damped Newton on the 2x2 distortion map.
    fn undistort_radtan(&self, distorted: &Vector2<f64>) -> Result<Vector2<f64>> {
        let mut n = *distorted;
        let scale = self.fx.max(self.fy);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let err = self.distort_radtan(&n) - distorted;
            if err.norm() * scale < UNDISTORT_TOL_PX {
                return Ok(n);
            }
            let j = self.distort_radtan_jacobian(&n);
            let step = match j.try_inverse() {
                Some(inv) => inv * err,
                None => err,
            };
            let mut alpha = 1.0;
            let base = err.norm();
            loop {
                let cand = n - step * alpha;
                if (self.distort_radtan(&cand) - distorted).norm() < base || alpha < 1e-3 {
                    n = cand;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if (self.distort_radtan(&n) - distorted).norm() * scale < UNDISTORT_TOL_PX {
            Ok(n)
        } else {
            Err(Error::NoConvergence {
                iterations: UNDISTORT_MAX_ITERS,
            })
        }
    }

    fn kb_theta_d(&self, theta: f64) -> f64 {
        let [k1, k2, k3, k4] = self.dist;
        let t2 = theta * theta;
        theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
    }

    fn kb_theta_d_derivative(&self, theta: f64) -> f64 {
        let [k1, k2, k3, k4] = self.dist;
        let t2 = theta * theta;
        1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))
    }

    fn kb_invert(&self, theta_d: f64) -> Result<f64> {
        if self.dist.iter().all(|&k| k == 0.0) {
            return Ok(theta_d);
        }
        let scale = self.fx.max(self.fy);
        let mut theta = theta_d;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let err = self.kb_theta_d(theta) - theta_d;
            if err.abs() * scale < UNDISTORT_TOL_PX {
                return Ok(theta);
            }
            let deriv = self.kb_theta_d_derivative(theta);
            if deriv.abs() < 1e-12 {
                break;
            }
            theta -= err / deriv;
        }
        if (self.kb_theta_d(theta) - theta_d).abs() * scale < UNDISTORT_TOL_PX {
            Ok(theta)
        } else {
            Err(Error::NoConvergence {
                iterations: UNDISTORT_MAX_ITERS,
            })
        }
    }
}

/// Calibrated stereo pair. `rotation_rl`, `translation_rl` map left-camera
/// coordinates into the right camera: `X_r = R_rl X_l + t_rl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    pub rotation_rl: Rotation3<f64>,
    pub translation_rl: Vector3<f64>,
}

impl StereoRig {
    pub fn new(
        left: CameraIntrinsics,
        right: CameraIntrinsics,
        rotation_rl: Rotation3<f64>,
        translation_rl: Vector3<f64>,
    ) -> Result<Self> {
        if !(translation_rl.norm() > 0.0) {
            return Err(Error::Config("stereo baseline must be non-zero".into()));
        }
        Ok(Self {
            left,
            right,
            rotation_rl,
            translation_rl,
        })
    }

    /// Rectified rig with the right camera `baseline` meters along +x of the left one.
    pub fn rectified(camera: CameraIntrinsics, baseline: f64) -> Result<Self> {
        Self::new(
            camera,
            camera,
            Rotation3::identity(),
            Vector3::new(-baseline, 0.0, 0.0),
        )
    }

    pub fn baseline(&self) -> f64 {
        self.translation_rl.norm()
    }

    /// Right camera center in the left camera frame.
    pub fn right_center(&self) -> Vector3<f64> {
        -(self.rotation_rl.inverse() * self.translation_rl)
    }

    pub fn left_to_right(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_rl * p + self.translation_rl
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn radtan() -> CameraIntrinsics {
        CameraIntrinsics::new(
            CameraModel::PinholeRadTan,
            458.654,
            457.296,
            367.215,
            248.375,
            [-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05],
            752,
            480,
        )
        .unwrap()
    }

    fn fisheye() -> CameraIntrinsics {
        CameraIntrinsics::equidistant(
            190.978,
            190.973,
            254.932,
            256.897,
            [0.0034823, 0.000715, -0.0020532, 0.0002029],
            512,
            512,
        )
        .unwrap()
    }

    fn pinhole() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn pinhole_projection_examples() {
        let cam = CameraIntrinsics::pinhole(100.0, 100.0, 0.0, 0.0, 640, 480).unwrap();
        let px = cam.project(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));

        let cam = CameraIntrinsics::pinhole(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        let px = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vector2::new(420.0, 240.0), epsilon = 1e-12);

        let r = cam.unproject(&Vector2::new(420.0, 240.0)).unwrap();
        let expected = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert_relative_eq!(r.into_inner(), expected, epsilon = 1e-15);
    }

    #[test]
    fn fisheye_radius_is_focal_times_angle() {
        let cam = CameraIntrinsics::equidistant(150.0, 150.0, 320.0, 320.0, [0.0; 4], 640, 640)
            .unwrap();
        let theta = PI / 3.0;
        let p = Vector3::new(theta.sin(), 0.0, theta.cos()) * 3.0;
        let px = cam.project(&p).unwrap();
        assert_relative_eq!((px - cam.principal_point()).norm(), 150.0 * PI / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn principal_point_maps_to_axis() {
        for cam in [pinhole(), radtan(), fisheye()] {
            let r = cam.unproject(&cam.principal_point()).unwrap();
            assert_relative_eq!(r.into_inner(), Vector3::z(), epsilon = 1e-15);
        }
    }

    #[test]
    fn behind_camera_is_rejected() {
        for cam in [pinhole(), radtan(), fisheye()] {
            assert!(matches!(
                cam.project(&Vector3::new(0.1, 0.0, -1.0)),
                Err(Error::PointBehindCamera)
            ));
        }
    }

    #[test]
    fn pixel_roundtrip_all_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for cam in [pinhole(), radtan(), fisheye()] {
            let mut worst = 0.0f64;
            let mut samples = 0;
            while samples < 1000 {
                let px = Vector2::new(
                    rng.random_range(0.0..cam.width as f64),
                    rng.random_range(0.0..cam.height as f64),
                );
                // keep fisheye samples inside the ~170 degree image circle
                if cam.model == CameraModel::EquidistantFisheye
                    && (px - cam.principal_point()).norm() > 1.45 * cam.fx
                {
                    continue;
                }
                samples += 1;
                let r = cam.unproject(&px).unwrap();
                assert_relative_eq!(r.norm(), 1.0, epsilon = 1e-12);
                let back = cam.project(&r).unwrap();
                worst = worst.max((back - px).norm());
            }
            assert!(worst < 1e-6, "{:?}: worst round-trip {worst}", cam.model);
        }
    }

    #[test]
    fn ray_roundtrip_within_fov() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (cam, max_angle) in [(pinhole(), 0.6), (radtan(), 0.6), (fisheye(), 1.3)] {
            for _ in 0..1000 {
                let angle: f64 = rng.random_range(0.0..max_angle);
                let az: f64 = rng.random_range(-PI..PI);
                let r = Vector3::new(angle.sin() * az.cos(), angle.sin() * az.sin(), angle.cos());
                let back = cam.unproject(&cam.project(&r).unwrap()).unwrap();
                assert!(back.dot(&r) > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn pinhole_and_fisheye_agree_near_axis() {
        let pin = CameraIntrinsics::pinhole(300.0, 300.0, 320.0, 240.0, 640, 480).unwrap();
        let fish =
            CameraIntrinsics::equidistant(300.0, 300.0, 320.0, 240.0, [0.0; 4], 640, 480).unwrap();
        // 1 degree at f=300 is ~5.2 px.
        for offset in [(0.5, 0.0), (3.0, -2.0), (0.0, 5.0), (-3.5, 3.5)] {
            let px = Vector2::new(320.0 + offset.0, 240.0 + offset.1);
            let a = pin.unproject(&px).unwrap();
            let b = fish.unproject(&px).unwrap();
            assert!((a.into_inner() - b.into_inner()).norm() < 1e-3);
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::pinhole(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::pinhole(1.0, 1.0, 11.0, 1.0, 10, 10).is_err());
    }

    #[test]
    fn rectified_rig_geometry() {
        let rig = StereoRig::rectified(pinhole(), 0.1).unwrap();
        assert_relative_eq!(rig.right_center(), Vector3::new(0.1, 0.0, 0.0));
        assert_relative_eq!(rig.baseline(), 0.1);
        assert!(StereoRig::rectified(pinhole(), 0.0).is_err());
    }
}
