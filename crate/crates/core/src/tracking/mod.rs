//! Sparse front-end: grid-distributed corners, pyramidal KLT and stereo depth.

mod corners;
mod image;
mod klt;
mod pyramid;
mod stereo;

pub use self::corners::{detect_features, min_eigen_response, DetectorParams};
pub use self::image::Image;
pub use self::klt::{track_klt, track_klt_guided, track_point, FeatureTrack, KltParams, TrackStatus};
pub use self::pyramid::ImagePyramid;
pub use self::stereo::{stereo_depth, triangulate_midpoint, StereoParams, StereoPoint};
