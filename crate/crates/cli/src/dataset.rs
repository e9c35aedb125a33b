//! Image-sequence datasets: numbered PNGs, `meta.json`, optional `remap.bin`
//! and, for synthetic data, `ground_truth.csv`.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use amc::imgproc::downsample;
use amc::io::{read_png, DatasetMeta, RemapTable};
use amc::Frame;

use crate::error::CliError;

pub const META_FILE: &str = "meta.json";
pub const REMAP_FILE: &str = "remap.bin";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Sorted PNG paths of a directory. Names with a numeric stem sort by value.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    let key = |p: &PathBuf| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        (stem.parse::<u64>().ok(), stem)
    };
    frames.sort_by_key(key);
    Ok(frames)
}

#[derive(Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub frames: Vec<PathBuf>,
    pub remap: Option<RemapTable>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("{} is not a directory", dir.display())));
        }
        let meta = DatasetMeta::load(dir.join(META_FILE)).map_err(CliError::data)?;
        let frames = list_frames(dir)?;
        if frames.is_empty() {
            return Err(CliError::Data(format!("no PNG frames in {}", dir.display())));
        }
        let remap_path = dir.join(REMAP_FILE);
        let remap = if remap_path.exists() {
            let r = RemapTable::read(&remap_path).map_err(CliError::data)?;
            if r.width != meta.width as usize || r.height != meta.height as usize {
                return Err(CliError::Data(format!(
                    "remap is {}x{} but meta says {}x{}",
                    r.width, r.height, meta.width, meta.height
                )));
            }
            Some(r)
        } else {
            None
        };
        Ok(Dataset { dir: dir.to_owned(), meta, frames, remap })
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        let p = self.dir.join(GROUND_TRUTH_FILE);
        p.exists().then_some(p)
    }
}

/// Undistortion and downsampling applied to every raw frame.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub remap: Option<RemapTable>,
    pub downsample: u32,
    pub width: usize,
    pub height: usize,
}

impl Preprocessor {
    pub fn apply(&self, raw: Frame) -> amc::Result<Frame> {
        if raw.width() != self.width || raw.height() != self.height {
            return Err(amc::Error::ShapeMismatch(format!(
                "frame is {}x{}, dataset is {}x{}",
                raw.width(),
                raw.height(),
                self.width,
                self.height
            )));
        }
        let undistorted = match &self.remap {
            Some(r) => r.apply(&raw)?,
            None => raw,
        };
        downsample(&undistorted, self.downsample as usize)
    }
}

/// One input frame after decoding and preprocessing.
pub struct LoadedFrame {
    pub index: usize,
    pub path: PathBuf,
    pub frame: Result<Frame, String>,
    pub load_time: Duration,
}

fn load_one(index: usize, path: &Path, pre: &Preprocessor, fps: f64) -> LoadedFrame {
    let start = Instant::now();
    let frame = read_png(path)
        .and_then(|f| pre.apply(f))
        .map(|f| f.with_meta(index as u64, index as f64 / fps))
        .map_err(|e| e.to_string());
    LoadedFrame { index, path: path.to_owned(), frame, load_time: start.elapsed() }
}

/// Frames in order, decoded either inline or on a helper thread that runs at
/// most `capacity` frames ahead.
pub enum FrameSource {
    Inline { paths: Vec<PathBuf>, pre: Preprocessor, fps: f64, next: usize },
    Threaded { rx: Receiver<LoadedFrame>, handle: Option<JoinHandle<()>> },
}

impl FrameSource {
    pub fn new(paths: Vec<PathBuf>, pre: Preprocessor, fps: f64, threaded: bool, capacity: usize) -> Self {
        if !threaded {
            return FrameSource::Inline { paths, pre, fps, next: 0 };
        }
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for (i, p) in paths.iter().enumerate() {
                if tx.send(load_one(i, p, &pre, fps)).is_err() {
                    break;
                }
            }
        });
        FrameSource::Threaded { rx, handle: Some(handle) }
    }
}

impl Iterator for FrameSource {
    type Item = LoadedFrame;

    fn next(&mut self) -> Option<LoadedFrame> {
        match self {
            FrameSource::Inline { paths, pre, fps, next } => {
                let p = paths.get(*next)?;
                let out = load_one(*next, p, pre, *fps);
                *next += 1;
                Some(out)
            }
            FrameSource::Threaded { rx, handle } => {
                let item = rx.recv().ok();
                if item.is_none() {
                    if let Some(h) = handle.take() {
                        let _ = h.join();
                    }
                }
                item
            }
        }
    }
}
