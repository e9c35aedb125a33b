use std::path::Path;

use amc::imgproc::rgb_to_gray;
use amc::{OrientationTracker, ViewState};
use serde::Serialize;

use super::{create_dir, preprocessor, write_json};
use crate::config::PipelineArgs;
use crate::dataset::{Dataset, FrameSource};
use crate::error::CliError;
use crate::records::{self, GroundTruthRow, RotationRow};

/// Geodesic error against ground truth, degrees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorStats {
    pub frames: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub last: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return ErrorStats::default();
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |q: f64| sorted[((q * (n - 1) as f64).round() as usize).min(n - 1)];
        ErrorStats {
            frames: n,
            mean: errors.iter().sum::<f64>() / n as f64,
            median: rank(0.5),
            p95: rank(0.95),
            max: sorted[n - 1],
            last: errors[n - 1],
        }
    }
}

#[derive(Debug, Serialize)]
struct TrackSummary {
    frames: usize,
    lost: usize,
    mean_iterations: f64,
    warm_start: bool,
    error_deg: Option<ErrorStats>,
}

pub fn run(dir: &Path, args: &PipelineArgs) -> Result<(), CliError> {
    let dataset = Dataset::open(dir)?;
    let settings = args.resolve(&dataset.meta)?;
    create_dir(&settings.output)?;
    let truth: Option<Vec<GroundTruthRow>> = dataset.ground_truth_path().map(|p| records::read_rows(&p)).transpose()?;

    let cfg = settings.pipeline;
    let mut tracker = OrientationTracker::new(settings.processing_intrinsics, cfg.orientation).map_err(CliError::config)?;
    let mut view = ViewState::default();
    let mut out = records::writer(&settings.output.join("rotations.csv"))?;
    let source = FrameSource::new(dataset.frames.clone(), preprocessor(&dataset, &settings), settings.fps, false, 1);

    let (mut lost, mut tracked, mut iterations) = (0usize, 0usize, 0usize);
    let mut errors = Vec::new();
    for item in source {
        let t = item.index as f64 / settings.fps;
        let (r_0j, was_lost) = match item.frame {
            Ok(frame) => {
                let (r, diag) = tracker.process_frame(&rgb_to_gray(&frame));
                tracked += 1;
                iterations += diag.iterations;
                (r, diag.tracking_lost)
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", item.path.display());
                tracker.skip_frame();
                (tracker.r_0j(), true)
            }
        };
        lost += was_lost as usize;
        view.update(&r_0j, &cfg.filter);
        out.serialize(RotationRow::new(item.index as u64, t, &r_0j, &view.r_view, was_lost, false)?)?;
        if let Some(gt) = truth.as_ref().and_then(|rows| rows.get(item.index)) {
            errors.push(gt.rotation().geodesic_distance(&r_0j).to_degrees());
        }
    }
    out.flush().map_err(CliError::data)?;

    let error_deg = truth.is_some().then(|| ErrorStats::from_errors(&errors));
    let summary = TrackSummary {
        frames: dataset.frames.len(),
        lost,
        mean_iterations: if tracked > 0 { iterations as f64 / tracked as f64 } else { 0.0 },
        warm_start: cfg.orientation.warm_start,
        error_deg,
    };
    write_json(&settings.output.join("track_summary.json"), &summary)?;
    println!("frames {} lost {} mean iterations {:.2}", summary.frames, lost, summary.mean_iterations);
    if let Some(s) = error_deg {
        println!(
            "geodesic error deg: mean {:.4} median {:.4} p95 {:.4} max {:.4} last {:.4}",
            s.mean, s.median, s.p95, s.max, s.last
        );
    }
    Ok(())
}
