//! Datasets, calibration, configuration, trajectories, statistics and ATE.

mod ate;
mod calibration;
mod config;
mod dataset;
mod kv;
mod stats;
mod trajectory;

pub use self::ate::{associate, ate_rmse, Alignment, ASSOCIATION_GATE};
pub use self::calibration::Calibration;
pub use self::config::Config;
pub use self::dataset::{
    write_synthetic_dataset, DatasetFormat, DatasetReader, DatasetWriter, FrameEntry, StereoFrame,
    CALIBRATION_FILE, GROUND_TRUTH_FILE, PAIRING_TOLERANCE_NS,
};
pub use self::stats::{StatsWriter, STATS_HEADER};
pub use self::trajectory::Trajectory;
