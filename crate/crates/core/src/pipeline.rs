//! Per-frame stabilization loop: orientation tracking, view filtering,
//! buffering and rendering.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Rotation};
use crate::imgproc::{rgb_to_gray, Frame, ValidityMask};
use crate::orientation::{OrientationConfig, OrientationTracker, TrackDiagnostics};
use crate::stabilizer::{
    stabilize_smooth, BufferEntry, FrameBuffer, SaccadeState, StabilizationMode, StabilizerConfig,
};
use crate::view_filter::{ViewFilterParams, ViewState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub orientation: OrientationConfig,
    pub stabilizer: StabilizerConfig,
    pub filter: ViewFilterParams,
}

impl PipelineConfig {
    /// Default configuration for a stream at `fps`.
    pub fn for_fps(fps: f64) -> Self {
        PipelineConfig {
            orientation: OrientationConfig::default(),
            stabilizer: StabilizerConfig::default(),
            filter: ViewFilterParams::from_dt(1.0 / fps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.orientation.validate()?;
        self.stabilizer.validate()?;
        self.filter.validate()
    }
}

/// Accumulated wall-clock time per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub frames: usize,
    pub track: Duration,
    pub view: Duration,
    pub render: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.track + self.view + self.render
    }

    fn mean_ms(&self, d: Duration) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            d.as_secs_f64() * 1e3 / self.frames as f64
        }
    }

    pub fn mean_track_ms(&self) -> f64 {
        self.mean_ms(self.track)
    }

    pub fn mean_view_ms(&self) -> f64 {
        self.mean_ms(self.view)
    }

    pub fn mean_render_ms(&self) -> f64 {
        self.mean_ms(self.render)
    }

    /// Frames per second of the compute stages.
    pub fn fps(&self) -> f64 {
        let t = self.total().as_secs_f64();
        if t > 0.0 {
            self.frames as f64 / t
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub index: u64,
    pub timestamp: f64,
    /// Estimated cumulative orientation `R_{0,j}`.
    pub r_0j: Rotation,
    /// Output of the low-pass view filter.
    pub r_view_filtered: Rotation,
    /// Viewpoint the output was rendered from (the filtered view in smooth
    /// mode, the fixed viewpoint in saccade mode).
    pub r_rendered: Rotation,
    pub frame: Frame,
    pub mask: ValidityMask,
    /// Number of frames averaged into this output.
    pub averaged: usize,
    pub saccaded: bool,
    pub view_snapped: bool,
    pub tracking: TrackDiagnostics,
}

/// Streaming stabilizer over ordered frames.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    intrinsics: Intrinsics,
    tracker: OrientationTracker,
    view: ViewState,
    buffer: FrameBuffer,
    saccade: SaccadeState,
    timings: StageTimings,
}

impl Pipeline {
    pub fn new(intrinsics: Intrinsics, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            tracker: OrientationTracker::new(intrinsics, cfg.orientation)?,
            view: ViewState::default(),
            buffer: FrameBuffer::new(cfg.stabilizer.n_avg),
            saccade: SaccadeState::new(cfg.stabilizer.n_avg),
            timings: StageTimings::default(),
            cfg,
            intrinsics,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    pub fn buffer(&self) -> &FrameBuffer {
        &self.buffer
    }

    pub fn saccade_state(&self) -> &SaccadeState {
        &self.saccade
    }

    pub fn tracker(&self) -> &OrientationTracker {
        &self.tracker
    }

    /// Records a missing input frame; returns the index it would have had.
    pub fn skip_frame(&mut self) -> u64 {
        self.tracker.skip_frame()
    }

    /// Estimates the orientation of `frame` and renders its stabilized output.
    pub fn process(&mut self, frame: &Frame) -> Result<PipelineOutput> {
        if frame.width() != self.intrinsics.width as usize || frame.height() != self.intrinsics.height as usize {
            return Err(Error::ShapeMismatch(format!(
                "frame {}x{} vs intrinsics {}x{}",
                frame.width(),
                frame.height(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        let t0 = Instant::now();
        let gray = rgb_to_gray(frame);
        let (r_0j, tracking) = self.tracker.process_frame(&gray);
        let t1 = Instant::now();
        let update = self.view.update(&r_0j, &self.cfg.filter);
        let r_view = self.view.r_view;
        let t2 = Instant::now();

        let entry = BufferEntry { frame: frame.clone(), r_0i: r_0j, r_view };
        let (out, mask, saccaded, r_rendered, averaged) = match self.cfg.stabilizer.mode {
            StabilizationMode::Smooth => {
                self.buffer.push(entry);
                let (out, mask) = stabilize_smooth(&self.buffer, &self.cfg.stabilizer, &self.intrinsics)?;
                (out, mask, false, r_view, self.buffer.len())
            }
            StabilizationMode::Saccade => {
                let res = self.saccade.push(frame, &r_0j, &self.cfg.stabilizer, &self.intrinsics)?;
                let fixed = self.saccade.r_fixed().expect("fixed viewpoint after push");
                (res.frame, res.mask, res.saccaded, fixed, self.saccade.cached_len())
            }
        };
        let t3 = Instant::now();

        self.timings.frames += 1;
        self.timings.track += t1 - t0;
        self.timings.view += t2 - t1;
        self.timings.render += t3 - t2;

        Ok(PipelineOutput {
            index: frame.index,
            timestamp: frame.timestamp,
            r_0j,
            r_view_filtered: r_view,
            r_rendered,
            frame: out,
            mask,
            averaged,
            saccaded,
            view_snapped: update.snapped,
            tracking,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_stream_outputs_cropped_input() {
        let k = Intrinsics::from_hfov(64, 48, 1.0).unwrap();
        let f = Frame::from_fn(64, 48, 3, |x, y, c| {
            (0.5 + 0.2 * ((0.3 * x as f32 + c as f32).sin() + (0.2 * y as f32).cos()) * 0.5).clamp(0.0, 1.0)
        })
        .unwrap();
        for mode in [StabilizationMode::Smooth, StabilizationMode::Saccade] {
            let mut cfg = PipelineConfig::for_fps(60.0);
            cfg.stabilizer.mode = mode;
            let mut p = Pipeline::new(k, cfg).unwrap();
            let rect = cfg.stabilizer.output_rect(&k).unwrap();
            let want = rect.crop_frame(&f);
            for i in 0..10 {
                let out = p.process(&f.clone().with_meta(i, i as f64 / 60.0)).unwrap();
                assert_eq!(out.r_0j, Rotation::identity());
                assert!(!out.saccaded);
                for (a, b) in out.frame.data().iter().zip(want.data()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
            assert_eq!(p.timings().frames, 10);
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let k = Intrinsics::from_hfov(64, 48, 1.0).unwrap();
        let mut p = Pipeline::new(k, PipelineConfig::for_fps(30.0)).unwrap();
        assert!(p.process(&Frame::filled(32, 48, 3, 0.5).unwrap()).is_err());
    }
}
