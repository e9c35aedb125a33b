use std::path::PathBuf;

use amc::io::{write_png, DatasetMeta};
use amc::synthetic::{check_fov, make_source, relative_to_first, source_intrinsics, SequenceRenderer, ShakeTrajectory, SourceKind};
use amc::Intrinsics;
use clap::{Args, ValueEnum};

use super::{create_dir, frame_name, write_json};
use crate::dataset::{GROUND_TRUTH_FILE, META_FILE};
use crate::error::CliError;
use crate::records::{self, GroundTruthRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Texture,
    Chart,
}

impl From<SourceArg> for SourceKind {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Texture => SourceKind::Texture,
            SourceArg::Chart => SourceKind::Chart,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Built-in trajectory: flapper12 or static.
    #[arg(long, default_value = "flapper12", conflicts_with = "trajectory")]
    pub preset: String,
    /// Trajectory JSON file used instead of a preset.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 320)]
    pub width: u32,
    #[arg(long, default_value_t = 180)]
    pub height: u32,
    /// Horizontal field of view of the camera, degrees.
    #[arg(long, default_value_t = amc::synthetic::CAMERA_FOV_DEG)]
    pub hfov: f64,
    #[arg(long, value_enum, default_value_t = SourceArg::Texture)]
    pub source: SourceArg,
    /// Side of the square source image in pixels.
    #[arg(long, default_value_t = amc::synthetic::SOURCE_SIZE)]
    pub source_size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Render only the first N frames.
    #[arg(long)]
    pub frames: Option<usize>,
}

fn classify(e: amc::Error) -> CliError {
    match e {
        amc::Error::InvalidArgument(_) | amc::Error::FovExceeded(_) => CliError::config(e),
        other => CliError::data(other),
    }
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    let trajectory = match &args.trajectory {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<ShakeTrajectory>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ShakeTrajectory::preset(&args.preset).map_err(CliError::config)?,
    };
    trajectory.validate().map_err(CliError::config)?;
    let k_cam = Intrinsics::from_hfov(args.width, args.height, args.hfov.to_radians()).map_err(CliError::config)?;
    let k_src = source_intrinsics(args.source_size);
    let count = args.frames.map_or(trajectory.frame_count(), |n| n.min(trajectory.frame_count()));

    // Reject trajectories that leave the source before writing anything.
    for i in 0..count {
        let r = trajectory.orientation_at(trajectory.time_of(i));
        check_fov(&k_src, &r, &k_cam).map_err(|e| CliError::Config(format!("frame {i}: {e}")))?;
    }

    create_dir(&args.out)?;
    let source = make_source(args.source.into(), args.source_size, 3, args.seed).map_err(classify)?;
    let mut rotations = Vec::with_capacity(count);
    for item in SequenceRenderer::new(&source, k_src, &trajectory, k_cam).map_err(classify)?.take(count) {
        let (frame, r) = item.map_err(classify)?;
        write_png(args.out.join(frame_name(rotations.len())), &frame).map_err(CliError::data)?;
        rotations.push(r);
    }

    let mut gt = records::writer(&args.out.join(GROUND_TRUTH_FILE))?;
    for (i, r) in relative_to_first(&rotations).iter().enumerate() {
        let w = records::log_vector(r)?;
        gt.serialize(GroundTruthRow { frame: i as u64, t: trajectory.time_of(i), wx: w[0], wy: w[1], wz: w[2] })?;
    }
    gt.flush().map_err(CliError::data)?;

    let meta = DatasetMeta { fps: trajectory.fps, width: args.width, height: args.height, intrinsics: k_cam, downsample: Some(1) };
    write_json(&args.out.join(META_FILE), &meta)?;
    write_json(&args.out.join("intrinsics.json"), &k_cam)?;
    write_json(&args.out.join("trajectory.json"), &trajectory)?;
    println!("wrote {count} frames to {}", args.out.display());
    Ok(())
}
