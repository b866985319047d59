//! Per-frame timing and tracking statistics as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::pipeline::FrameResult;
use crate::Result;

pub const STATS_HEADER: &str = "timestamp,track_us,depth_us,ransac_us,opt_us,total_us,features,inliers,keyframe";

pub struct StatsWriter<W: Write> {
    out: W,
}

impl StatsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> StatsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{STATS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &FrameResult) -> Result<()> {
        let t = &r.timings;
        writeln!(
            self.out,
            "{:.9},{},{},{},{},{},{},{},{}",
            r.timestamp,
            t.track_us,
            t.depth_us,
            t.ransac_us,
            t.opt_us,
            t.total_us,
            r.feature_count,
            r.inlier_count,
            u8::from(r.is_keyframe)
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
