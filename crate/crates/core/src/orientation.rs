//! Cumulative orientation from periodically reset templates.
//!
//! Every frame `j` is aligned to the current template `k`, warm-started from
//! the previous template-to-frame estimate, and the cumulative orientation is
//! `R_{0,j} = R_{0,k} R_{k,j}`. After frame `j` with `j mod N_track == N_track - 1`
//! the template is replaced by frame `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Rotation};
use crate::imgproc::Frame;
use crate::lk::{Template, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationConfig {
    /// Frames aligned against one template before it is replaced.
    pub n_track: usize,
    pub tracker: TrackerConfig,
    /// Initialize each alignment from the previous estimate instead of identity.
    pub warm_start: bool,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        OrientationConfig { n_track: 5, tracker: TrackerConfig::default(), warm_start: true }
    }
}

impl OrientationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_track == 0 {
            return Err(Error::InvalidArgument("n_track must be at least 1".into()));
        }
        self.tracker.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackDiagnostics {
    pub frame_index: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    /// Alignment failed; the template-relative rotation was frozen and the
    /// template forcibly reset.
    pub tracking_lost: bool,
    /// This frame became the new template.
    pub template_reset: bool,
    pub loss_history: Vec<f64>,
    pub failure: Option<String>,
}

/// State machine over an ordered stream of gray frames.
#[derive(Debug, Clone)]
pub struct OrientationTracker {
    cfg: OrientationConfig,
    intrinsics: Intrinsics,
    template: Option<Template>,
    /// Cumulative orientation of the current template frame.
    r_0k: Rotation,
    /// Template-to-current-frame rotation.
    r_kj: Rotation,
    next_index: u64,
}

impl OrientationTracker {
    pub fn new(intrinsics: Intrinsics, cfg: OrientationConfig) -> Result<Self> {
        cfg.validate()?;
        intrinsics.validate()?;
        Ok(OrientationTracker {
            cfg,
            intrinsics,
            template: None,
            r_0k: Rotation::identity(),
            r_kj: Rotation::identity(),
            next_index: 0,
        })
    }

    pub fn config(&self) -> &OrientationConfig {
        &self.cfg
    }

    pub fn template(&self) -> Option<&Template> {
        self.template.as_ref()
    }

    pub fn r_0k(&self) -> Rotation {
        self.r_0k
    }

    pub fn r_kj(&self) -> Rotation {
        self.r_kj
    }

    /// Current cumulative estimate `R_{0,k} R_{k,j}`.
    pub fn r_0j(&self) -> Rotation {
        self.r_0k * self.r_kj
    }

    /// Index that the next processed frame will receive.
    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Accounts for a frame that could not be read. The estimate is held and
    /// the next frame is aligned to the current template as usual; only the
    /// reset schedule advances.
    pub fn skip_frame(&mut self) -> u64 {
        let j = self.next_index;
        self.next_index += 1;
        j
    }

    fn reset_template(&mut self, frame: &Frame, diag: &mut TrackDiagnostics) {
        self.r_0k = Rotation::orthonormalized(*self.r_0j().matrix());
        self.r_kj = Rotation::identity();
        diag.template_reset = true;
        match Template::build(frame, &self.intrinsics) {
            Ok(t) => self.template = Some(t),
            Err(e) => {
                log::warn!("frame {}: template rejected: {e}", diag.frame_index);
                self.template = None;
                diag.tracking_lost = true;
                diag.failure.get_or_insert_with(|| e.to_string());
            }
        }
    }

    /// Aligns the next frame and returns its cumulative orientation `R_{0,j}`.
    pub fn process_frame(&mut self, frame: &Frame) -> (Rotation, TrackDiagnostics) {
        let j = self.next_index;
        self.next_index += 1;
        let mut diag = TrackDiagnostics { frame_index: j, ..Default::default() };
        let n = self.cfg.n_track as u64;

        let Some(template) = self.template.as_ref() else {
            // first frame, or recovery after a rejected template: seed a template here
            if j > 0 {
                diag.tracking_lost = true;
            }
            diag.converged = true;
            let r_0j = self.r_0j();
            self.reset_template(frame, &mut diag);
            return (r_0j, diag);
        };

        let init = if self.cfg.warm_start { self.r_kj.transpose() } else { Rotation::identity() };
        match template.track(frame, &init, &self.cfg.tracker) {
            Ok(res) => {
                diag.iterations = res.iterations;
                diag.final_loss = res.final_loss;
                diag.converged = res.converged;
                diag.loss_history = res.loss_history;
                self.r_kj = res.rotation.transpose();
            }
            Err(e) => {
                log::warn!("frame {j}: tracking lost: {e}");
                diag.tracking_lost = true;
                diag.failure = Some(e.to_string());
            }
        }
        let r_0j = self.r_0j();
        if diag.tracking_lost || j % n == n - 1 {
            self.reset_template(frame, &mut diag);
        }
        (r_0j, diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, shift: f32) -> Frame {
        Frame::from_fn(w, h, 1, |x, y, _| {
            let (x, y) = (x as f32 + shift, y as f32);
            0.5 + 0.2 * (0.13 * x + 0.02 * y).sin() + 0.15 * (0.09 * y - 0.05 * x).cos()
        })
        .unwrap()
    }

    fn camera() -> Intrinsics {
        Intrinsics::from_hfov(96, 64, 60f64.to_radians()).unwrap()
    }

    #[test]
    fn static_stream_stays_at_identity() {
        let mut t = OrientationTracker::new(camera(), OrientationConfig::default()).unwrap();
        let f = textured(96, 64, 0.0);
        for _ in 0..12 {
            let (r, diag) = t.process_frame(&f);
            assert_eq!(r, Rotation::identity());
            assert!(!diag.tracking_lost);
        }
    }

    #[test]
    fn resets_follow_the_period() {
        let mut t = OrientationTracker::new(camera(), OrientationConfig::default()).unwrap();
        let f = textured(96, 64, 0.0);
        let resets: Vec<u64> = (0..20)
            .filter_map(|_| {
                let (_, d) = t.process_frame(&f);
                (d.template_reset && d.frame_index > 0).then_some(d.frame_index)
            })
            .collect();
        assert_eq!(resets, vec![4, 9, 14, 19]);
    }

    #[test]
    fn composition_is_exact() {
        let mut t = OrientationTracker::new(camera(), OrientationConfig::default()).unwrap();
        for i in 0..8 {
            let (r, d) = t.process_frame(&textured(96, 64, 0.3 * i as f32));
            if !d.template_reset {
                assert_eq!(r, t.r_0k() * t.r_kj());
            }
        }
    }

    #[test]
    fn loss_of_tracking_freezes_and_resets() {
        let mut t = OrientationTracker::new(camera(), OrientationConfig::default()).unwrap();
        t.process_frame(&textured(96, 64, 0.0));
        t.process_frame(&textured(96, 64, 0.5));
        let before = t.r_0j();
        // a frame of the wrong size can be neither tracked nor used as a template
        let bad = Frame::filled(80, 64, 1, 0.5).unwrap();
        let (r, d) = t.process_frame(&bad);
        assert!(d.tracking_lost && d.template_reset);
        assert_eq!(r, before);
        assert!(t.template().is_none());
        // the stream continues and re-seeds on the next good frame, holding the estimate
        let (r2, d2) = t.process_frame(&textured(96, 64, 0.5));
        assert!(d2.template_reset && d2.tracking_lost);
        assert_eq!(r2.geodesic_distance(&before), 0.0);
        assert!(t.template().is_some());
        let (_, d3) = t.process_frame(&textured(96, 64, 0.5));
        assert!(!d3.tracking_lost);
    }

    #[test]
    fn skipped_frames_keep_the_schedule() {
        let mut t = OrientationTracker::new(camera(), OrientationConfig::default()).unwrap();
        let f = textured(96, 64, 0.0);
        t.process_frame(&f);
        assert_eq!(t.skip_frame(), 1);
        let (r, d) = t.process_frame(&f);
        assert_eq!(d.frame_index, 2);
        assert_eq!(r, Rotation::identity());
        t.skip_frame();
        let (_, d) = t.process_frame(&f);
        assert_eq!(d.frame_index, 4);
        assert!(d.template_reset);
    }

    #[test]
    fn zero_period_is_rejected() {
        let cfg = OrientationConfig { n_track: 0, ..Default::default() };
        assert!(OrientationTracker::new(camera(), cfg).is_err());
    }
}
