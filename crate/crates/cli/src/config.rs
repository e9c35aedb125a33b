//! Pipeline configuration: JSON file, per-field flags and dataset hints.
//!
//! Precedence is flag, then config file, then dataset metadata (downsampling
//! only), then the library defaults.

use std::path::{Path, PathBuf};

use amc::io::DatasetMeta;
use amc::{Intrinsics, PipelineConfig, StabilizationMode, ViewFilterParams};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_DOWNSAMPLE: u32 = 4;

/// Contents of a `--config` JSON file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub intrinsics: Option<PathBuf>,
    pub downsample: Option<u32>,
    pub n_track: Option<usize>,
    pub n_avg: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub margin: Option<f64>,
    pub mode: Option<StabilizationMode>,
    pub saccade_threshold: Option<f64>,
    pub output: Option<PathBuf>,
    pub warm_start: Option<bool>,
    pub max_iterations: Option<usize>,
    pub step_tolerance: Option<f64>,
    pub max_line_search_halvings: Option<usize>,
    pub min_valid_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Intrinsics JSON replacing the dataset's.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Integer block-mean downsampling factor.
    #[arg(long)]
    pub downsample: Option<u32>,
    /// Frames aligned to one template.
    #[arg(long)]
    pub n_track: Option<usize>,
    /// Frames averaged per output.
    #[arg(long)]
    pub n_avg: Option<usize>,
    /// View filter base gain.
    #[arg(long)]
    pub a: Option<f64>,
    /// View filter gain per radian of error.
    #[arg(long)]
    pub b: Option<f64>,
    /// Fraction cropped from each side of the output.
    #[arg(long)]
    pub margin: Option<f64>,
    /// smooth or saccade.
    #[arg(long)]
    pub mode: Option<StabilizationMode>,
    /// Fully covered output fraction below which a saccade occurs.
    #[arg(long)]
    pub saccade_threshold: Option<f64>,
    /// Start every alignment from identity (debugging aid).
    #[arg(long)]
    pub no_warm_start: bool,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Radians.
    #[arg(long)]
    pub step_tolerance: Option<f64>,
    #[arg(long)]
    pub max_line_search_halvings: Option<usize>,
    #[arg(long)]
    pub min_valid_fraction: Option<f64>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub downsample: u32,
    /// Intrinsics of the undistorted full-resolution frames.
    pub intrinsics: Intrinsics,
    /// Intrinsics after downsampling, used by the pipeline.
    pub processing_intrinsics: Intrinsics,
    pub output: PathBuf,
    pub fps: f64,
}

impl PipelineArgs {
    pub fn file_config(&self) -> Result<FileConfig, CliError> {
        match &self.config {
            Some(p) => FileConfig::load(p),
            None => Ok(FileConfig::default()),
        }
    }

    pub fn resolve(&self, meta: &DatasetMeta) -> Result<Settings, CliError> {
        let file = self.file_config()?;
        let mut cfg = PipelineConfig::for_fps(meta.fps);
        let defaults = ViewFilterParams::from_dt(1.0 / meta.fps);

        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(file.$field)
            };
        }
        if let Some(v) = pick!(n_track) {
            cfg.orientation.n_track = v;
        }
        if let Some(v) = pick!(n_avg) {
            cfg.stabilizer.n_avg = v;
        }
        cfg.filter.a = pick!(a).unwrap_or(defaults.a);
        cfg.filter.b = pick!(b).unwrap_or(defaults.b);
        if let Some(v) = pick!(margin) {
            cfg.stabilizer.margin_fraction = v;
        }
        if let Some(v) = pick!(mode) {
            cfg.stabilizer.mode = v;
        }
        if let Some(v) = pick!(saccade_threshold) {
            cfg.stabilizer.saccade_valid_threshold = v;
        }
        if self.no_warm_start {
            cfg.orientation.warm_start = false;
        } else if let Some(v) = file.warm_start {
            cfg.orientation.warm_start = v;
        }
        let tracker = &mut cfg.orientation.tracker;
        if let Some(v) = pick!(max_iterations) {
            tracker.max_iterations = v;
        }
        if let Some(v) = pick!(step_tolerance) {
            tracker.step_tolerance = v;
        }
        if let Some(v) = pick!(max_line_search_halvings) {
            tracker.max_line_search_halvings = v;
        }
        if let Some(v) = pick!(min_valid_fraction) {
            tracker.min_valid_fraction = v;
        }
        cfg.validate().map_err(CliError::config)?;

        let downsample = pick!(downsample).or(meta.downsample).unwrap_or(DEFAULT_DOWNSAMPLE);
        if downsample == 0 {
            return Err(CliError::Config("downsample factor must be at least 1".into()));
        }
        let intrinsics = match self.intrinsics.clone().or(file.intrinsics.clone()) {
            Some(p) => Intrinsics::load_json(&p).map_err(CliError::config)?,
            None => meta.intrinsics,
        };
        if intrinsics.width != meta.width || intrinsics.height != meta.height {
            return Err(CliError::Config(format!(
                "intrinsics are for {}x{} but frames are {}x{}",
                intrinsics.width, intrinsics.height, meta.width, meta.height
            )));
        }
        if !meta.width.is_multiple_of(downsample) || !meta.height.is_multiple_of(downsample) {
            return Err(CliError::Config(format!(
                "downsample factor {downsample} does not divide {}x{}",
                meta.width, meta.height
            )));
        }
        let processing_intrinsics = intrinsics.downsampled(downsample);
        cfg.stabilizer.output_rect(&processing_intrinsics).map_err(CliError::config)?;
        let output = self
            .out
            .clone()
            .or(file.output)
            .ok_or_else(|| CliError::Config("no output directory (use --out or \"output\" in the config)".into()))?;
        Ok(Settings { pipeline: cfg, downsample, intrinsics, processing_intrinsics, output, fps: meta.fps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> DatasetMeta {
        let k = Intrinsics::new(1108.0, 1108.0, 639.5, 359.5, 1280, 720).unwrap();
        DatasetMeta { fps: 60.0, width: 1280, height: 720, intrinsics: k, downsample: None }
    }

    fn with_out() -> PipelineArgs {
        PipelineArgs { out: Some("out".into()), ..Default::default() }
    }

    #[test]
    fn defaults_follow_the_library() {
        let s = with_out().resolve(&meta()).unwrap();
        assert_eq!(s.downsample, 4);
        assert_eq!(s.pipeline, PipelineConfig::for_fps(60.0));
        assert_eq!((s.processing_intrinsics.width, s.processing_intrinsics.height), (320, 180));
    }

    #[test]
    fn flags_override_file_and_file_overrides_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n_avg": 3, "downsample": 2, "mode": "saccade", "a": 0.5}"#).unwrap();
        let mut args = with_out();
        args.config = Some(path);
        args.n_avg = Some(4);
        let mut m = meta();
        m.downsample = Some(1);
        let s = args.resolve(&m).unwrap();
        assert_eq!(s.pipeline.stabilizer.n_avg, 4);
        assert_eq!(s.downsample, 2);
        assert_eq!(s.pipeline.stabilizer.mode, StabilizationMode::Saccade);
        assert_eq!(s.pipeline.filter.a, 0.5);
        assert_eq!(s.pipeline.filter.b, 40.0 / 60.0);

        args.config = None;
        assert_eq!(args.resolve(&m).unwrap().downsample, 1);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut args = with_out();
        args.n_track = Some(0);
        assert_eq!(args.resolve(&meta()).unwrap_err().exit_code(), 2);

        let mut args = with_out();
        args.downsample = Some(7);
        assert_eq!(args.resolve(&meta()).unwrap_err().exit_code(), 2);

        assert_eq!(PipelineArgs::default().resolve(&meta()).unwrap_err().exit_code(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n_avg": 3, "bogus": 1}"#).unwrap();
        let args = PipelineArgs { config: Some(path), ..with_out() };
        assert_eq!(args.resolve(&meta()).unwrap_err().exit_code(), 2);
    }
}
