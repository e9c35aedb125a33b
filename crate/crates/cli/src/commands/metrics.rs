use std::collections::HashMap;
use std::path::{Path, PathBuf};

use amc::io::{read_png, DatasetMeta};
use amc::metrics::SequenceMetrics;
use amc::{Frame, ValidityMask};
use clap::Args;

use crate::dataset::{list_frames, META_FILE};
use crate::error::CliError;
use crate::records::{self, MetricsRow, RotationRow};

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Directory of numbered PNG frames.
    pub frames: PathBuf,
    /// Mask PNGs written by `stabilize` (same names as the frames).
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Rotations CSV supplying the image and view orientations.
    #[arg(long)]
    pub rotations: Option<PathBuf>,
    /// Frame rate; read from a nearby meta.json when omitted.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Averaging length the masks were scaled by.
    #[arg(long, default_value_t = 6)]
    pub n_avg: usize,
    /// Value of the `mode` column.
    #[arg(long, default_value = "none")]
    pub tag: String,
    /// Output CSV (stdout when omitted).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn resolve_fps(args: &MetricsArgs) -> Result<f64, CliError> {
    if let Some(fps) = args.fps {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(CliError::Config(format!("fps must be positive, got {fps}")));
        }
        return Ok(fps);
    }
    let candidates = [args.frames.join(META_FILE), args.frames.join("..").join(META_FILE)];
    match candidates.iter().find(|p| p.exists()) {
        Some(p) => DatasetMeta::load(p).map(|m| m.fps).map_err(CliError::data),
        None => Ok(60.0),
    }
}

fn frame_number(path: &Path, position: usize) -> u64 {
    path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()).unwrap_or(position as u64)
}

fn read_mask(path: &Path, n_avg: usize, like: &Frame) -> Result<ValidityMask, CliError> {
    let img = read_png(path).map_err(CliError::data)?;
    if img.width() != like.width() || img.height() != like.height() {
        return Err(CliError::Data(format!("{}: mask size differs from its frame", path.display())));
    }
    let counts = img
        .data()
        .chunks(img.channels())
        .map(|px| (px[0] as f64 * n_avg as f64).round() as u16)
        .collect();
    ValidityMask::new(img.width(), img.height(), counts).map_err(CliError::data)
}

pub fn run(args: &MetricsArgs) -> Result<(), CliError> {
    if args.n_avg == 0 || args.n_avg > u16::MAX as usize {
        return Err(CliError::Config("n-avg must be in 1..=65535".into()));
    }
    let fps = resolve_fps(args)?;
    let paths = list_frames(&args.frames)?;
    if paths.len() < 2 {
        return Err(CliError::Data(format!("{} holds fewer than two PNG frames", args.frames.display())));
    }
    let rotations: Option<HashMap<u64, RotationRow>> = args
        .rotations
        .as_ref()
        .map(|p| records::read_rows::<RotationRow>(p).map(|rows| rows.into_iter().map(|r| (r.frame, r)).collect()))
        .transpose()?;

    let mut seq = SequenceMetrics::new(1.0 / fps, args.n_avg as u16);
    let mut rows = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let frame = read_png(path).map_err(CliError::data)?;
        let number = frame_number(path, i);
        let mask = match &args.masks {
            Some(dir) => Some(read_mask(&dir.join(path.file_name().expect("listed file")), args.n_avg, &frame)?),
            None => None,
        };
        let (r_img, r_view) = match &rotations {
            Some(map) => {
                let row = map
                    .get(&number)
                    .ok_or_else(|| CliError::Data(format!("no rotation row for frame {number}")))?;
                (Some(row.rotation()), Some(row.view()))
            }
            None => (None, None),
        };
        if let Some(m) = seq.push(&frame, mask.as_ref(), r_img, r_view).map_err(CliError::data)? {
            rows.push(MetricsRow::new(&args.tag, number, &m));
        }
    }

    let summary = seq.summary();
    let text = serde_json::to_string_pretty(&summary).map_err(CliError::data)?;
    match &args.out {
        Some(p) => {
            let mut w = records::writer(p)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush().map_err(CliError::data)?;
            println!("{text}");
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush().map_err(CliError::data)?;
            eprintln!("{text}");
        }
    }
    Ok(())
}
