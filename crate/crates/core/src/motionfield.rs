//! Linear motion-field systems relating sparse flow to the camera twist.
//!
//! A static point `P` seen from a camera moving with angular velocity `omega`
//! and linear velocity `v` moves as `dP/dt = -v - omega x P` in the camera
//! frame. Projecting that motion gives constraints that are linear in the
//! twist `s = [omega; v]`:
//!
//! * pixel form, two rows per observation: `u = [A(p) | B(p)/Z] s`
//! * ray form, three rows (rank two) per observation:
//!   `rdot = [r]x omega + (r r^T - I) v / d`
//!
//! Both are solved as a 6x6 normal-equation system, with an SVD fallback
//! once the normal matrix becomes poorly conditioned.

use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x6, Matrix6, Vector2, Vector3, Vector6,
};

use crate::camera::Ray;
use crate::lie::skew;
use crate::{Error, Result};

/// Normal matrices with a condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Above this condition number the solve switches from Cholesky to SVD.
pub const CHOLESKY_CONDITION: f64 = 1e8;

/// Instantaneous camera motion, angular part first. Per-frame units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(s: &Vector6<f64>) -> Self {
        Self::new(s.fixed_rows::<3>(0).into(), s.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut s = Vector6::zeros();
        s.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        s.fixed_rows_mut::<3>(3).copy_from(&self.v);
        s
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.omega * k, self.v * k)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Finite components and a rotation inside the principal range.
    pub fn is_valid(&self) -> bool {
        self.omega.iter().chain(self.v.iter()).all(|c| c.is_finite())
            && self.omega.norm() < std::f64::consts::PI
    }
}

/// A pixel velocity measured at `p` (relative to the principal point) for a
/// pinhole camera with focal length `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObservation {
    pub p: Vector2<f64>,
    pub f: f64,
    pub u: Vector2<f64>,
    /// Depth along the optical axis.
    pub z: f64,
}

impl PixelObservation {
    pub fn new(p: Vector2<f64>, f: f64, u: Vector2<f64>, z: f64) -> Self {
        Self { p, f, u, z }
    }

    /// Camera-frame position of the tracked point.
    pub fn point(&self) -> Vector3<f64> {
        Vector3::new(self.p.x / self.f, self.p.y / self.f, 1.0) * self.z
    }
}

/// A tracked point as a unit ray in the previous camera, its ray flow
/// `r_cur - r_prev`, Euclidean depth `d = |P|` and the point `P = d r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayObservation {
    pub ray: Ray,
    pub flow: Vector3<f64>,
    pub depth: f64,
    pub point: Vector3<f64>,
}

impl RayObservation {
    pub fn new(ray: Ray, flow: Vector3<f64>, depth: f64) -> Self {
        Self {
            ray,
            flow,
            depth,
            point: ray.into_inner() * depth,
        }
    }

    /// Builds the observation from the previous-frame point and the ray
    /// observed in the current frame.
    pub fn from_rays(point_prev: Vector3<f64>, ray_cur: &Ray) -> Self {
        let depth = point_prev.norm();
        let ray = Ray::new_normalize(point_prev);
        Self {
            ray,
            flow: ray_cur.into_inner() - ray.into_inner(),
            depth,
            point: point_prev,
        }
    }
}

/// Anything that contributes linear constraints on the twist.
pub trait MotionConstraint {
    /// Constraint rows and the measured flow. Observations with fewer than
    /// three rows pad with zeros.
    fn constraint(&self) -> (Matrix3x6<f64>, Vector3<f64>);

    /// Residual norm between the measured and predicted flow.
    fn flow_residual(&self, twist: &Twist) -> f64 {
        let (m, y) = self.constraint();
        (y - m * twist.to_vector()).norm()
    }

    /// Direction of the tracked point as observed in the current frame.
    fn observed_direction(&self) -> Vector3<f64>;

    /// Position of the tracked point in the previous camera frame.
    fn landmark(&self) -> Vector3<f64>;
}

/// `A(p)` and `B(p)` of the pixel motion field.
pub fn pixel_jacobian(p: &Vector2<f64>, f: f64) -> (Matrix2x3<f64>, Matrix2x3<f64>) {
    let (x, y) = (p.x, p.y);
    let a = Matrix2x3::new(
        x * y / f,
        -f - x * x / f,
        y,
        f + y * y / f,
        -x * y / f,
        -x,
    );
    let b = Matrix2x3::new(-f, 0.0, x, 0.0, -f, y);
    (a, b)
}

/// `[r]x` and `(r r^T - I) / d` of the ray motion field.
pub fn ray_block(r: &Ray, depth: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let r = r.into_inner();
    let a = skew(&r);
    let b = (r * r.transpose() - Matrix3::identity()) / depth;
    (a, b)
}

pub fn predict_pixel_flow(obs: &PixelObservation, twist: &Twist) -> Vector2<f64> {
    let (a, b) = pixel_jacobian(&obs.p, obs.f);
    a * twist.omega + b * twist.v / obs.z
}

pub fn predict_ray_flow(r: &Ray, depth: f64, twist: &Twist) -> Vector3<f64> {
    let ri = r.into_inner();
    ri.cross(&twist.omega) + (ri * ri.dot(&twist.v) - twist.v) / depth
}

impl MotionConstraint for PixelObservation {
    fn constraint(&self) -> (Matrix3x6<f64>, Vector3<f64>) {
        let (a, b) = pixel_jacobian(&self.p, self.f);
        let mut m = Matrix3x6::zeros();
        m.fixed_view_mut::<2, 3>(0, 0).copy_from(&a);
        m.fixed_view_mut::<2, 3>(0, 3).copy_from(&(b / self.z));
        (m, Vector3::new(self.u.x, self.u.y, 0.0))
    }

    fn flow_residual(&self, twist: &Twist) -> f64 {
        (self.u - predict_pixel_flow(self, twist)).norm()
    }

    fn observed_direction(&self) -> Vector3<f64> {
        Vector3::new(self.p.x + self.u.x, self.p.y + self.u.y, self.f)
    }

    fn landmark(&self) -> Vector3<f64> {
        self.point()
    }
}

impl MotionConstraint for RayObservation {
    fn constraint(&self) -> (Matrix3x6<f64>, Vector3<f64>) {
        let (a, b) = ray_block(&self.ray, self.depth);
        let mut m = Matrix3x6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&b);
        (m, self.flow)
    }

    fn flow_residual(&self, twist: &Twist) -> f64 {
        (self.flow - predict_ray_flow(&self.ray, self.depth, twist)).norm()
    }

    fn observed_direction(&self) -> Vector3<f64> {
        self.ray.into_inner() + self.flow
    }

    fn landmark(&self) -> Vector3<f64> {
        self.point
    }
}

/// Least-squares twist together with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistSolution {
    pub twist: Twist,
    /// `sqrt(mean |y_i - M_i s|^2)` over the observations used.
    pub residual_rms: f64,
    /// Condition number of the 6x6 normal matrix.
    pub condition: f64,
}

/// Solves the stacked system over `obs[indices]`.
pub fn solve_twist_indexed<O: MotionConstraint>(
    obs: &[O],
    indices: &[usize],
) -> Result<TwistSolution> {
    if indices.len() < 3 {
        return Err(Error::InsufficientObservations {
            required: 3,
            available: indices.len(),
        });
    }
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for &i in indices {
        let (m, y) = obs[i].constraint();
        let mt = m.transpose();
        h += mt * m;
        g += mt * y;
    }

    let eig = h.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e.abs()))
    });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        // All-zero systems (no information) also land here.
        return Err(Error::DegenerateSystem { condition });
    }

    let s = if condition <= CHOLESKY_CONDITION {
        match h.cholesky() {
            Some(chol) => chol.solve(&g),
            None => return Err(Error::DegenerateSystem { condition }),
        }
    } else {
        solve_stacked_svd(obs, indices).ok_or(Error::DegenerateSystem { condition })?
    };

    let twist = Twist::from_vector(&s);
    let sq: f64 = indices
        .iter()
        .map(|&i| {
            let r = obs[i].flow_residual(&twist);
            r * r
        })
        .sum();
    Ok(TwistSolution {
        twist,
        residual_rms: (sq / indices.len() as f64).sqrt(),
        condition,
    })
}

fn solve_stacked_svd<O: MotionConstraint>(obs: &[O], indices: &[usize]) -> Option<Vector6<f64>> {
    let rows = indices.len() * 3;
    let mut m = DMatrix::<f64>::zeros(rows, 6);
    let mut y = DVector::<f64>::zeros(rows);
    for (k, &i) in indices.iter().enumerate() {
        let (mi, yi) = obs[i].constraint();
        m.view_mut((3 * k, 0), (3, 6)).copy_from(&mi);
        y.rows_mut(3 * k, 3).copy_from(&yi);
    }
    let svd = m.svd(true, true);
    let s = svd.solve(&y, 1e-14).ok()?;
    Some(Vector6::from_iterator(s.iter().copied()))
}

/// Least-squares twist over all observations.
pub fn solve_twist<O: MotionConstraint>(obs: &[O]) -> Result<TwistSolution> {
    let indices: Vec<usize> = (0..obs.len()).collect();
    solve_twist_indexed(obs, &indices)
}

pub fn solve_twist_pixel(obs: &[PixelObservation]) -> Result<TwistSolution> {
    solve_twist(obs)
}

pub fn solve_twist_ray(obs: &[RayObservation]) -> Result<TwistSolution> {
    solve_twist(obs)
}
