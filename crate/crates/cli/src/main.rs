use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector6;

use smfvo::camera::{CameraIntrinsics, StereoRig};
use smfvo::io::{
    ate_rmse, write_synthetic_dataset, Alignment, Config, DatasetFormat, DatasetReader, StatsWriter, Trajectory,
};
use smfvo::motionfield::Twist;
use smfvo::pipeline::{EstimationMode, Pipeline};
use smfvo::synth::SyntheticSequence;

#[derive(Parser)]
#[command(name = "smfvo", version, about = "Stereo visual odometry from sparse motion fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Euroc,
    Synth,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ray,
    Pixel,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    First,
    Sim,
}

#[derive(Clone, Copy, ValueEnum)]
enum CameraArg {
    Pinhole,
    Fisheye,
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry over a stereo dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "euroc")]
        format: FormatArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `pipeline.mode` from the config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Skip the keyframe refinement.
        #[arg(long)]
        no_opt: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// RMSE of the absolute trajectory error.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "first")]
        align: AlignArg,
    },
    /// Render a constant-twist stereo sequence with ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Per-frame twist `wx,wy,wz,vx,vy,vz` (rad, m).
        #[arg(long, default_value = "0,0.003,0,0,0,0.02", allow_hyphen_values = true)]
        twist: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pinhole")]
        camera: CameraArg,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        /// Horizontal field of view in degrees.
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        #[arg(long, default_value_t = 0.1)]
        baseline: f64,
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
    },
}

fn parse_twist(s: &str) -> Result<Twist, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad twist component `{p}`")))
        .collect::<Result<_, _>>()?;
    if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("twist needs 6 finite comma-separated numbers, got `{s}`"));
    }
    Ok(Twist::from_vector(&Vector6::from_column_slice(&v)))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            dataset,
            format,
            config,
            mode,
            no_opt,
            out,
            stats,
        } => {
            let cfg = match config {
                Some(path) => Config::load(&path)?,
                None => Config::default(),
            };
            let mut pcfg = cfg.pipeline;
            if let Some(m) = mode {
                pcfg.mode = match m {
                    ModeArg::Ray => EstimationMode::Ray,
                    ModeArg::Pixel => EstimationMode::Pixel,
                };
            }
            if no_opt {
                pcfg.optimize = false;
            }
            let format = match format {
                FormatArg::Euroc => DatasetFormat::Euroc,
                FormatArg::Synth => DatasetFormat::Synth,
            };
            let reader = DatasetReader::open(&dataset, format)?;
            let mut pipeline = Pipeline::new(reader.calibration.rig, pcfg)?;
            let mut stats = stats.map(|p| StatsWriter::create(&p)).transpose()?;
            let mut total_us = 0u64;
            for frame in reader.stream() {
                let frame = frame?;
                let res = pipeline.process_frame(frame.left, frame.right, frame.timestamp)?;
                total_us += res.timings.total_us;
                if let Some(s) = stats.as_mut() {
                    s.write(&res)?;
                }
            }
            if let Some(s) = stats {
                s.finish()?;
            }
            let traj = Trajectory::new(pipeline.trajectory().to_vec())?;
            traj.write(&out)?;
            println!("frames: {}", traj.len());
            println!("mean_ms_per_frame: {:.3}", total_us as f64 / 1000.0 / traj.len().max(1) as f64);
            if let Some(gt) = &reader.ground_truth {
                match ate_rmse(&traj, gt, cfg.align) {
                    Ok(v) => println!("ATE_RMSE_m: {v:.6}"),
                    Err(e) => eprintln!("ground truth not comparable: {e}"),
                }
            }
        }
        Command::Eval { est, gt, align } => {
            let align = match align {
                AlignArg::First => Alignment::FirstFrame,
                AlignArg::Sim => Alignment::Similarity,
            };
            let v = ate_rmse(&Trajectory::read(&est)?, &Trajectory::read(&gt)?, align)?;
            println!("ATE_RMSE_m: {v:.6}");
        }
        Command::Synth {
            seed,
            frames,
            twist,
            out,
            camera,
            width,
            height,
            fov,
            baseline,
            rate,
        } => {
            let twist = parse_twist(&twist)?;
            let max_fov = match camera {
                CameraArg::Pinhole => 180.0,
                CameraArg::Fisheye => 360.0,
            };
            if frames == 0 || !(fov > 0.0 && fov < max_fov) {
                return Err(format!("need frames > 0 and 0 < fov < {max_fov}").into());
            }
            let half = (fov / 2.0).to_radians();
            let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
            let cam = match camera {
                CameraArg::Pinhole => {
                    let f = (width as f64 / 2.0) / half.tan();
                    CameraIntrinsics::pinhole(f, f, cx, cy, width, height)?
                }
                CameraArg::Fisheye => {
                    let f = (width as f64 / 2.0) / half;
                    CameraIntrinsics::equidistant(f, f, cx, cy, [0.0; 4], width, height)?
                }
            };
            let rig = StereoRig::rectified(cam, baseline)?;
            let seq = SyntheticSequence::constant_twist(rig, &twist, frames, rate, 3.0, seed);
            write_synthetic_dataset(&seq, &out)?;
            let path: f64 = seq.poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum();
            println!("frames: {frames}");
            println!("path_length_m: {path:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
