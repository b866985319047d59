//! Python bindings: twist solvers, the odometry pipeline over datasets,
//! synthetic sequence generation and trajectory evaluation.

use std::path::PathBuf;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use smfvo::camera::{CameraIntrinsics, StereoRig};
use smfvo::io::{ate_rmse, write_synthetic_dataset, Alignment, Config, DatasetFormat, DatasetReader, Trajectory};
use smfvo::lie::Pose;
use smfvo::motionfield::{solve_twist_ray, RayObservation, Twist};
use smfvo::pipeline::{EstimationMode, Pipeline, StampedPose};
use smfvo::synth::SyntheticSequence;
use smfvo::Error;

/// `(t, tx, ty, tz, qx, qy, qz, qw)`
type PoseRow = (f64, f64, f64, f64, f64, f64, f64, f64);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_rows(traj: &[StampedPose]) -> Vec<PoseRow> {
    traj.iter()
        .map(|p| {
            let t = p.pose.translation;
            let q = UnitQuaternion::from_rotation_matrix(&p.pose.rotation);
            (p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w)
        })
        .collect()
}

fn from_rows(rows: &[PoseRow]) -> smfvo::Result<Trajectory> {
    let poses = rows
        .iter()
        .map(|&(ts, x, y, z, qx, qy, qz, qw)| {
            let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
            if !(q.norm() > 1e-12) {
                return Err(Error::Config(format!("zero quaternion at t = {ts}")));
            }
            Ok(StampedPose {
                timestamp: ts,
                pose: Pose::new(UnitQuaternion::from_quaternion(q).to_rotation_matrix(), Vector3::new(x, y, z)),
            })
        })
        .collect::<smfvo::Result<Vec<_>>>()?;
    Trajectory::new(poses)
}

fn twist_from(s: [f64; 6]) -> Twist {
    Twist::from_vector(&Vector6::from_column_slice(&s))
}

fn twist_to(t: &Twist) -> [f64; 6] {
    let v = t.to_vector();
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

/// Least-squares twist `(wx, wy, wz, vx, vy, vz)` from unit rays, their
/// flows and the Euclidean depths of the points.
#[pyfunction]
fn solve_twist(rays: Vec<[f64; 3]>, flows: Vec<[f64; 3]>, depths: Vec<f64>) -> PyResult<[f64; 6]> {
    if rays.len() != flows.len() || rays.len() != depths.len() {
        return Err(PyValueError::new_err("rays, flows and depths must have equal length"));
    }
    let obs: Vec<RayObservation> = rays
        .iter()
        .zip(&flows)
        .zip(&depths)
        .map(|((r, f), &d)| {
            RayObservation::new(nalgebra::Unit::new_normalize(Vector3::from(*r)), Vector3::from(*f), d)
        })
        .collect();
    let sol = solve_twist_ray(&obs).map_err(to_py)?;
    Ok(twist_to(&sol.twist))
}

/// RMSE of the absolute trajectory error; `align` is `"first"` or `"sim"`.
#[pyfunction]
#[pyo3(signature = (est, gt, align = "first"))]
fn ate(est: Vec<PoseRow>, gt: Vec<PoseRow>, align: &str) -> PyResult<f64> {
    let align: Alignment = align.parse().map_err(to_py)?;
    ate_rmse(&from_rows(&est).map_err(to_py)?, &from_rows(&gt).map_err(to_py)?, align).map_err(to_py)
}

#[pyfunction]
fn read_trajectory(path: PathBuf) -> PyResult<Vec<PoseRow>> {
    Ok(to_rows(Trajectory::read(&path).map_err(to_py)?.poses()))
}

#[pyfunction]
fn write_trajectory(path: PathBuf, poses: Vec<PoseRow>) -> PyResult<()> {
    from_rows(&poses).and_then(|t| t.write(&path)).map_err(to_py)
}

/// Renders a constant-twist stereo dataset (pinhole, 90 degree field of view).
#[pyfunction]
#[pyo3(signature = (out, twist, frames = 100, seed = 0, width = 640, height = 480, baseline = 0.1, rate = 20.0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    out: PathBuf,
    twist: [f64; 6],
    frames: usize,
    seed: u64,
    width: usize,
    height: usize,
    baseline: f64,
    rate: f64,
) -> PyResult<()> {
    let f = width as f64 / 2.0;
    let cam = CameraIntrinsics::pinhole(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
        .map_err(to_py)?;
    let rig = StereoRig::rectified(cam, baseline).map_err(to_py)?;
    let seq = SyntheticSequence::constant_twist(rig, &twist_from(twist), frames, rate, 3.0, seed);
    write_synthetic_dataset(&seq, &out).map_err(to_py)
}

/// Runs the odometry over a dataset and returns the estimated trajectory.
#[pyfunction]
#[pyo3(signature = (dataset, format = "euroc", mode = None, optimize = None, config = None))]
fn run(
    py: Python<'_>,
    dataset: PathBuf,
    format: &str,
    mode: Option<&str>,
    optimize: Option<bool>,
    config: Option<PathBuf>,
) -> PyResult<Vec<PoseRow>> {
    let format: DatasetFormat = format.parse().map_err(to_py)?;
    let mut cfg = match config {
        Some(p) => Config::load(&p).map_err(to_py)?.pipeline,
        None => Config::default().pipeline,
    };
    if let Some(m) = mode {
        cfg.mode = m.parse::<EstimationMode>().map_err(to_py)?;
    }
    if let Some(o) = optimize {
        cfg.optimize = o;
    }
    py.detach(|| {
        let reader = DatasetReader::open(&dataset, format)?;
        let mut pipeline = Pipeline::new(reader.calibration.rig, cfg)?;
        for frame in reader.stream() {
            let frame = frame?;
            pipeline.process_frame(frame.left, frame.right, frame.timestamp)?;
        }
        Ok(to_rows(pipeline.trajectory()))
    })
    .map_err(to_py)
}

#[pymodule]
fn smfvo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(solve_twist, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(write_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
