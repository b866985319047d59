//! Stereo datasets in the EuRoC folder layout.
//!
//! ```text
//! <root>/[mav0/]cam0/data.csv        #timestamp [ns],filename
//! <root>/[mav0/]cam0/data/<ns>.png
//! <root>/[mav0/]cam1/...             same for the right camera
//! <root>/calib.txt                   see `Calibration`
//! <root>/groundtruth.txt             optional, left-camera trajectory
//! ```
//!
//! EuRoC sequences may instead carry ground truth in
//! `mav0/state_groundtruth_estimate0/data.csv` (body poses); it is mapped to
//! the left camera with `body.q_bc` / `body.t_bc` from the calibration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use nalgebra::Vector3;

use super::calibration::Calibration;
use super::trajectory::{quaternion_to_rotation, Trajectory};
use crate::lie::Pose;
use crate::pipeline::StampedPose;
use crate::tracking::Image;
use crate::{Error, Result};

/// Left and right frames closer than this are paired (ns).
pub const PAIRING_TOLERANCE_NS: i64 = 1_000_000;

pub const CALIBRATION_FILE: &str = "calib.txt";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Euroc,
    Synth,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euroc" => Ok(Self::Euroc),
            "synth" => Ok(Self::Synth),
            other => Err(Error::Config(format!("unknown dataset format '{other}' (expected euroc|synth)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub timestamp_ns: i64,
    pub left: PathBuf,
    pub right: PathBuf,
}

impl FrameEntry {
    pub fn timestamp(&self) -> f64 {
        ns_to_seconds(self.timestamp_ns)
    }
}

#[derive(Debug, Clone)]
pub struct StereoFrame {
    pub timestamp: f64,
    pub left: Image,
    pub right: Image,
}

fn ns_to_seconds(ns: i64) -> f64 {
    // split to keep sub-microsecond digits of epoch timestamps
    (ns / 1_000_000_000) as f64 + (ns % 1_000_000_000) as f64 * 1e-9
}

fn seconds_to_ns(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

/// Frames of one camera as `(timestamp_ns, image path)`, sorted and deduplicated.
fn read_camera_index(cam_dir: &Path) -> Result<Option<Vec<(i64, PathBuf)>>> {
    let csv = cam_dir.join("data.csv");
    if !csv.is_file() {
        return Ok(None);
    }
    let source = csv.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(File::open(&csv)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.clone(),
            line: idx + 1,
            message,
        };
        let (ts, name) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected `timestamp,filename`, got `{line}`")))?;
        let ts: i64 = ts.trim().parse().map_err(|_| err(format!("bad timestamp `{ts}`")))?;
        out.push((ts, cam_dir.join("data").join(name.trim())));
    }
    out.sort_by_key(|(t, _)| *t);
    out.dedup_by_key(|(t, _)| *t);
    Ok(Some(out))
}

/// Greedy nearest-neighbour pairing of two sorted streams within the tolerance.
fn pair_streams(left: &[(i64, PathBuf)], right: &[(i64, PathBuf)]) -> Vec<FrameEntry> {
    let mut used = vec![false; right.len()];
    let mut out = Vec::new();
    for (t, lp) in left {
        let i = right.partition_point(|(r, _)| r < t);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < right.len() && !used[j])
            .min_by_key(|&j| (right[j].0 - t).abs());
        if let Some(j) = best.filter(|&j| (right[j].0 - t).abs() <= PAIRING_TOLERANCE_NS) {
            used[j] = true;
            out.push(FrameEntry {
                timestamp_ns: *t,
                left: lp.clone(),
                right: right[j].1.clone(),
            });
        }
    }
    out
}

/// EuRoC ground-truth CSV: `ns, px, py, pz, qw, qx, qy, qz, ...`.
fn read_euroc_ground_truth(path: &Path, body_from_camera: Option<Pose>) -> Result<Trajectory> {
    let source = path.display().to_string();
    let body_from_camera = body_from_camera.unwrap_or_else(|| {
        log::warn!("no body.q_bc/body.t_bc in calibration; using body poses as camera poses");
        Pose::identity()
    });
    let mut poses: Vec<StampedPose> = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.clone(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 8 {
            return Err(err(format!("expected at least 8 fields, got {}", fields.len())));
        }
        let ns: i64 = fields[0].parse().map_err(|_| err("bad timestamp".into()))?;
        let v: Vec<f64> = fields[1..8]
            .iter()
            .map(|s| s.parse().ok())
            .collect::<Option<_>>()
            .ok_or_else(|| err("non-numeric field".into()))?;
        let rotation = quaternion_to_rotation([v[4], v[5], v[6], v[3]]).ok_or_else(|| err("zero quaternion".into()))?;
        let body = Pose::new(rotation, Vector3::new(v[0], v[1], v[2]));
        let timestamp = ns_to_seconds(ns);
        if poses.last().is_some_and(|p| timestamp <= p.timestamp) {
            continue;
        }
        poses.push(StampedPose {
            timestamp,
            pose: body.compose(&body_from_camera),
        });
    }
    Trajectory::new(poses)
}

#[derive(Debug, Clone)]
pub struct DatasetReader {
    pub root: PathBuf,
    pub format: DatasetFormat,
    pub calibration: Calibration,
    pub ground_truth: Option<Trajectory>,
    frames: Vec<FrameEntry>,
}

impl DatasetReader {
    pub fn open(root: &Path, format: DatasetFormat) -> Result<Self> {
        let data_root = match format {
            DatasetFormat::Euroc if root.join("mav0").is_dir() => root.join("mav0"),
            _ => root.to_path_buf(),
        };
        let calib_path = [root.join(CALIBRATION_FILE), data_root.join(CALIBRATION_FILE)]
            .into_iter()
            .find(|p| p.is_file())
            .unwrap_or_else(|| root.join(CALIBRATION_FILE));
        let calibration = Calibration::load(&calib_path)?;

        let left = read_camera_index(&data_root.join("cam0"))?.unwrap_or_default();
        if left.is_empty() {
            return Err(Error::EmptySequence(root.to_path_buf()));
        }
        let right = read_camera_index(&data_root.join("cam1"))?
            .ok_or_else(|| Error::UnpairableStreams(format!("no cam1/data.csv under {}", data_root.display())))?;
        let frames = pair_streams(&left, &right);
        if frames.is_empty() {
            return Err(Error::UnpairableStreams(format!(
                "none of {} left frames has a right frame within {} ms",
                left.len(),
                PAIRING_TOLERANCE_NS as f64 * 1e-6
            )));
        }
        if frames.len() < left.len() {
            log::warn!("{} of {} left frames have no right partner", left.len() - frames.len(), left.len());
        }

        let gt_file = root.join(GROUND_TRUTH_FILE);
        let euroc_gt = data_root.join("state_groundtruth_estimate0").join("data.csv");
        let ground_truth = if gt_file.is_file() {
            Some(Trajectory::read(&gt_file)?)
        } else if format == DatasetFormat::Euroc && euroc_gt.is_file() {
            Some(read_euroc_ground_truth(&euroc_gt, calibration.body_from_camera)?)
        } else {
            None
        };
        Ok(Self {
            root: root.to_path_buf(),
            format,
            calibration,
            ground_truth,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn entries(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn load(&self, index: usize) -> Result<StereoFrame> {
        load_entry(&self.frames[index])
    }

    /// Frames in timestamp order, decoding the next pair on a helper thread
    /// while the caller works on the current one.
    pub fn stream(&self) -> impl Iterator<Item = Result<StereoFrame>> {
        let entries = self.frames.clone();
        let (tx, rx) = mpsc::sync_channel(1);
        std::thread::spawn(move || {
            for e in &entries {
                if tx.send(load_entry(e)).is_err() {
                    break;
                }
            }
        });
        rx.into_iter()
    }
}

fn load_entry(e: &FrameEntry) -> Result<StereoFrame> {
    Ok(StereoFrame {
        timestamp: e.timestamp(),
        left: Image::load(&e.left)?,
        right: Image::load(&e.right)?,
    })
}

/// Writes a dataset in the layout [`DatasetReader`] reads.
pub struct DatasetWriter {
    root: PathBuf,
    csv: [BufWriter<File>; 2],
    last_ns: Option<i64>,
}

impl DatasetWriter {
    pub fn create(root: &Path, calibration: &Calibration) -> Result<Self> {
        let mut csv = Vec::with_capacity(2);
        for cam in ["cam0", "cam1"] {
            std::fs::create_dir_all(root.join(cam).join("data"))?;
            let mut w = BufWriter::new(File::create(root.join(cam).join("data.csv"))?);
            writeln!(w, "#timestamp [ns],filename")?;
            csv.push(w);
        }
        calibration.save(&root.join(CALIBRATION_FILE))?;
        let csv: [BufWriter<File>; 2] = csv.try_into().map_err(|_| Error::Config("writer setup".into()))?;
        Ok(Self {
            root: root.to_path_buf(),
            csv,
            last_ns: None,
        })
    }

    /// Appends a stereo pair; timestamps must increase.
    pub fn push(&mut self, timestamp: f64, left: &Image, right: &Image) -> Result<()> {
        let ns = seconds_to_ns(timestamp);
        if let Some(prev) = self.last_ns {
            if ns <= prev {
                return Err(Error::NonMonotonicTimestamp {
                    previous: ns_to_seconds(prev),
                    got: timestamp,
                });
            }
        }
        let name = format!("{ns}.png");
        for (k, (cam, img)) in [("cam0", left), ("cam1", right)].into_iter().enumerate() {
            img.save(&self.root.join(cam).join("data").join(&name))?;
            writeln!(self.csv[k], "{ns},{name}")?;
        }
        self.last_ns = Some(ns);
        Ok(())
    }

    pub fn finish(mut self, ground_truth: Option<&Trajectory>) -> Result<()> {
        for w in &mut self.csv {
            w.flush()?;
        }
        if let Some(gt) = ground_truth {
            gt.write(&self.root.join(GROUND_TRUTH_FILE))?;
        }
        Ok(())
    }
}

/// Renders `seq` into `root` together with its left-camera ground truth.
pub fn write_synthetic_dataset(seq: &crate::synth::SyntheticSequence, root: &Path) -> Result<()> {
    let mut writer = DatasetWriter::create(root, &Calibration::new(seq.rig))?;
    let mut gt = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        let (l, r) = seq.render_stereo(k);
        // store the timestamp exactly as it will be read back
        let timestamp = ns_to_seconds(seconds_to_ns(seq.timestamps[k]));
        writer.push(timestamp, &l, &r)?;
        gt.push(StampedPose {
            timestamp,
            pose: seq.poses[k],
        });
    }
    writer.finish(Some(&Trajectory::new(gt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, StereoRig};
    use crate::motionfield::Twist;
    use crate::synth::SyntheticSequence;

    fn small_sequence(frames: usize) -> SyntheticSequence {
        let cam = CameraIntrinsics::pinhole(80.0, 80.0, 39.5, 29.5, 80, 60).unwrap();
        let rig = StereoRig::rectified(cam, 0.1).unwrap();
        let twist = Twist::new(Vector3::new(0.0, 0.01, 0.0), Vector3::new(0.0, 0.0, 0.05));
        SyntheticSequence::constant_twist(rig, &twist, frames, 20.0, 2.0, 3)
    }

    fn write_csv(path: &Path, rows: &[i64]) {
        let mut s = String::from("#timestamp [ns],filename\n");
        for r in rows {
            s.push_str(&format!("{r},{r}.png\n"));
        }
        std::fs::write(path, s).unwrap();
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = small_sequence(10);
        write_synthetic_dataset(&seq, dir.path()).unwrap();
        let reader = DatasetReader::open(dir.path(), DatasetFormat::Synth).unwrap();
        assert_eq!(reader.len(), 10);
        assert_eq!(reader.calibration.rig, seq.rig);
        let gt = reader.ground_truth.as_ref().unwrap();
        assert_eq!(gt.len(), 10);
        let frames: Vec<_> = reader.stream().collect::<Result<_>>().unwrap();
        assert_eq!(frames.len(), 10);
        for (k, f) in frames.iter().enumerate() {
            assert!((f.timestamp - seq.timestamps[k]).abs() < 1e-9);
            assert_eq!(f.left.dims(), (80, 60));
            let (l, _) = seq.render_stereo(k);
            let max_diff = l.data().iter().zip(f.left.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(max_diff <= 0.5);
        }
        assert!(frames.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn pairing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let seq = small_sequence(1);
        assert!(matches!(DatasetReader::open(root, DatasetFormat::Euroc), Err(Error::MissingCalibration(_))));
        Calibration::new(seq.rig).save(&root.join(CALIBRATION_FILE)).unwrap();
        assert!(matches!(DatasetReader::open(root, DatasetFormat::Euroc), Err(Error::EmptySequence(_))));

        std::fs::create_dir_all(root.join("cam0")).unwrap();
        let left = [1_000_000_000i64, 1_050_000_000, 1_100_000_000, 1_150_000_000];
        write_csv(&root.join("cam0/data.csv"), &left);
        assert!(matches!(DatasetReader::open(root, DatasetFormat::Euroc), Err(Error::UnpairableStreams(_))));

        std::fs::create_dir_all(root.join("cam1")).unwrap();
        write_csv(&root.join("cam1/data.csv"), &[5_000_000_000]);
        assert!(matches!(DatasetReader::open(root, DatasetFormat::Euroc), Err(Error::UnpairableStreams(_))));

        // 0.4 ms offsets pair; a 2 ms offset does not; out-of-order rows are sorted
        write_csv(
            &root.join("cam1/data.csv"),
            &[1_100_400_000, 1_000_400_000, 1_049_600_000, 1_152_000_000],
        );
        let reader = DatasetReader::open(root, DatasetFormat::Euroc).unwrap();
        let ts: Vec<_> = reader.entries().iter().map(|e| e.timestamp_ns).collect();
        assert_eq!(ts, vec![1_000_000_000, 1_050_000_000, 1_100_000_000]);
        assert!(reader.entries()[0].right.ends_with("1000400000.png"));
        assert!(reader.ground_truth.is_none());
    }

    #[test]
    fn euroc_ground_truth_in_camera_frame() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let seq = small_sequence(1);
        let mut calib = Calibration::new(seq.rig);
        calib.body_from_camera = Some(Pose::new(nalgebra::Rotation3::identity(), Vector3::new(0.0, 0.1, 0.0)));
        calib.save(&root.join(CALIBRATION_FILE)).unwrap();
        for cam in ["mav0/cam0", "mav0/cam1"] {
            std::fs::create_dir_all(root.join(cam)).unwrap();
            write_csv(&root.join(cam).join("data.csv"), &[1_000_000_000]);
        }
        std::fs::create_dir_all(root.join("mav0/state_groundtruth_estimate0")).unwrap();
        std::fs::write(
            root.join("mav0/state_groundtruth_estimate0/data.csv"),
            "#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x\n1000000000,1,2,3,1,0,0,0,0\n1005000000,1,2,4,0,0,0,1,0\n",
        )
        .unwrap();
        let reader = DatasetReader::open(root, DatasetFormat::Euroc).unwrap();
        let gt = reader.ground_truth.unwrap();
        assert_eq!(gt.len(), 2);
        assert!((gt.poses()[0].pose.translation - Vector3::new(1.0, 2.1, 3.0)).norm() < 1e-12);
        // 180 degrees about z flips the body offset
        assert!((gt.poses()[1].pose.translation - Vector3::new(1.0, 1.9, 4.0)).norm() < 1e-12);
    }

    #[test]
    fn timestamp_conversion() {
        let ns = 1_403_636_579_763_555_584;
        assert_eq!(seconds_to_ns(ns_to_seconds(ns)) / 1000, ns / 1000);
        assert_eq!(ns_to_seconds(1_500_000_000), 1.5);
    }
}
