//! Stereo visual odometry that estimates the per-frame camera twist directly
//! from sparse optical flow using motion-field least squares.
//!
//! The crate is organised bottom-up:
//!
//! * [`camera`] maps pixels to unit rays and back (pinhole, rad-tan, equidistant fisheye).
//! * [`motionfield`] builds and solves the linear motion-field systems.
//! * [`robust`] wraps the solvers in RANSAC with the dual inlier test.
//! * [`tracking`] is the KLT front-end with grid corner detection and stereo depth.
//! * [`backend`] holds the keyframe policy and the single-keyframe robust refinement.
//! * [`pipeline`] runs everything frame by frame and integrates the trajectory.
//! * [`synth`] generates exact synthetic observations and rendered images.
//! * [`io`] covers datasets, calibration, config, trajectories and ATE.

pub mod backend;
pub mod camera;
mod error;
pub mod io;
pub mod lie;
pub mod motionfield;
pub mod pipeline;
pub mod robust;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
