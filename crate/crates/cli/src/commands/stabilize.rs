use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use amc::io::write_png;
use amc::metrics::{MetricsSummary, SequenceMetrics};
use amc::{Frame, Pipeline, Rotation, StabilizationMode, ValidityMask};
use serde::Serialize;

use super::{create_dir, frame_name, preprocessor, write_json};
use crate::config::{PipelineArgs, Settings};
use crate::dataset::{Dataset, FrameSource};
use crate::error::CliError;
use crate::records::{self, MetricsRow, RotationRow};

pub fn mode_tag(mode: StabilizationMode) -> &'static str {
    match mode {
        StabilizationMode::Smooth => "stab",
        StabilizationMode::Saccade => "sacc",
    }
}

/// Mask image: contribution count scaled so that `full` maps to white.
fn mask_image(mask: &ValidityMask, full: usize) -> Frame {
    let data = mask.counts().iter().map(|&c| (c as f32 / full as f32).min(1.0)).collect();
    Frame::new(mask.width(), mask.height(), 1, data).expect("mask dimensions are valid")
}

struct Job {
    frame_path: PathBuf,
    frame: Frame,
    mask_path: PathBuf,
    mask: Frame,
}

fn write_job(job: &Job) -> Result<Duration, CliError> {
    let start = Instant::now();
    write_png(&job.frame_path, &job.frame).map_err(CliError::data)?;
    write_png(&job.mask_path, &job.mask).map_err(CliError::data)?;
    Ok(start.elapsed())
}

/// PNG encoder, inline or on a helper thread behind a bounded queue.
enum Sink {
    Inline(Duration),
    Threaded { tx: SyncSender<Job>, handle: JoinHandle<Result<Duration, CliError>> },
}

impl Sink {
    fn new(threaded: bool, capacity: usize) -> Self {
        if !threaded {
            return Sink::Inline(Duration::ZERO);
        }
        let (tx, rx) = sync_channel::<Job>(capacity.max(1));
        let handle = std::thread::spawn(move || {
            let mut total = Duration::ZERO;
            for job in rx {
                total += write_job(&job)?;
            }
            Ok(total)
        });
        Sink::Threaded { tx, handle }
    }

    fn push(&mut self, job: Job) -> Result<(), CliError> {
        match self {
            Sink::Inline(total) => {
                *total += write_job(&job)?;
                Ok(())
            }
            Sink::Threaded { tx, .. } => {
                tx.send(job).map_err(|_| CliError::Data("frame writer stopped".into()))
            }
        }
    }

    /// Waits for outstanding writes; returns the total encode time.
    fn finish(self) -> Result<Duration, CliError> {
        match self {
            Sink::Inline(total) => Ok(total),
            Sink::Threaded { tx, handle } => {
                drop(tx);
                handle.join().map_err(|_| CliError::Data("frame writer panicked".into()))?
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct StageMs {
    decode: f64,
    track: f64,
    view: f64,
    render: f64,
    encode: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    mode: StabilizationMode,
    pipelined: bool,
    frames: usize,
    processed: usize,
    lost: usize,
    saccades: usize,
    mean_stage_ms: StageMs,
    /// Frames per second of tracking, view filtering and rendering.
    compute_fps: f64,
    /// Frames per second including PNG decode and encode.
    wall_fps: f64,
    metrics_none: MetricsSummary,
    metrics_stabilized: MetricsSummary,
    settings: &'a Settings,
}

pub fn run(dir: &Path, args: &PipelineArgs, pipelined: bool) -> Result<(), CliError> {
    let wall = Instant::now();
    let dataset = Dataset::open(dir)?;
    let settings = args.resolve(&dataset.meta)?;
    let cfg = settings.pipeline;
    let k = settings.processing_intrinsics;
    let frames_dir = settings.output.join("frames");
    let masks_dir = settings.output.join("masks");
    create_dir(&frames_dir)?;
    create_dir(&masks_dir)?;

    let mut pipeline = Pipeline::new(k, cfg).map_err(CliError::config)?;
    let rect = cfg.stabilizer.output_rect(&k).map_err(CliError::config)?;
    let n_avg = cfg.stabilizer.n_avg;
    let dt = 1.0 / settings.fps;
    let full = n_avg.min(u16::MAX as usize) as u16;
    let tag = mode_tag(cfg.stabilizer.mode);
    let mut none = SequenceMetrics::new(dt, full);
    let mut stab = SequenceMetrics::new(dt, full);

    let mut rotations = records::writer(&settings.output.join("rotations.csv"))?;
    let mut metrics = records::writer(&settings.output.join("metrics.csv"))?;
    let source = FrameSource::new(dataset.frames.clone(), preprocessor(&dataset, &settings), settings.fps, pipelined, n_avg);
    let mut sink = Sink::new(pipelined, n_avg);

    let (mut processed, mut lost, mut saccades) = (0usize, 0usize, 0usize);
    let mut decode = Duration::ZERO;
    let mut last_view = Rotation::identity();
    for item in source {
        decode += item.load_time;
        let index = item.index as u64;
        let t = item.index as f64 / settings.fps;
        let frame = match item.frame {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping {}: {e}", item.path.display());
                pipeline.skip_frame();
                lost += 1;
                rotations.serialize(RotationRow::new(index, t, &pipeline.tracker().r_0j(), &last_view, true, false)?)?;
                continue;
            }
        };
        let out = pipeline.process(&frame).map_err(CliError::data)?;
        processed += 1;
        lost += out.tracking.tracking_lost as usize;
        saccades += out.saccaded as usize;
        last_view = out.r_rendered;
        rotations.serialize(RotationRow::new(
            index,
            t,
            &out.r_0j,
            &out.r_rendered,
            out.tracking.tracking_lost,
            out.saccaded,
        )?)?;

        let raw = rect.crop_frame(&frame);
        if let Some(m) = none.push(&raw, None, Some(out.r_0j), Some(out.r_0j)).map_err(CliError::data)? {
            metrics.serialize(MetricsRow::new("none", index, &m))?;
        }
        if let Some(m) = stab
            .push(&out.frame, Some(&out.mask), Some(out.r_0j), Some(out.r_rendered))
            .map_err(CliError::data)?
        {
            metrics.serialize(MetricsRow::new(tag, index, &m))?;
        }
        let name = frame_name(item.index);
        sink.push(Job {
            frame_path: frames_dir.join(&name),
            mask: mask_image(&out.mask, n_avg),
            mask_path: masks_dir.join(&name),
            frame: out.frame,
        })?;
    }
    let encode = sink.finish()?;
    rotations.flush().map_err(CliError::data)?;
    metrics.flush().map_err(CliError::data)?;

    let timings = *pipeline.timings();
    let per_frame = |d: Duration| if processed > 0 { d.as_secs_f64() * 1e3 / processed as f64 } else { 0.0 };
    let elapsed = wall.elapsed().as_secs_f64();
    let summary = Summary {
        mode: cfg.stabilizer.mode,
        pipelined,
        frames: dataset.frames.len(),
        processed,
        lost,
        saccades,
        mean_stage_ms: StageMs {
            decode: per_frame(decode),
            track: timings.mean_track_ms(),
            view: timings.mean_view_ms(),
            render: timings.mean_render_ms(),
            encode: per_frame(encode),
        },
        compute_fps: timings.fps(),
        wall_fps: if elapsed > 0.0 { processed as f64 / elapsed } else { 0.0 },
        metrics_none: none.summary(),
        metrics_stabilized: stab.summary(),
        settings: &settings,
    };
    write_json(&settings.output.join("summary.json"), &summary)?;
    let (a, b) = (summary.metrics_none, summary.metrics_stabilized);
    println!("frames {processed}/{} lost {lost} saccades {saccades}", summary.frames);
    println!("none: NF {:.4} px, dI {:.5}", a.nf_rms, a.delta_i_rms);
    println!("{tag}: NF {:.4} px, dI {:.5}, valid {:.1}%", b.nf_rms, b.delta_i_rms, b.valid_pct);
    println!("compute {:.1} fps, wall {:.1} fps", summary.compute_fps, summary.wall_fps);
    Ok(())
}
