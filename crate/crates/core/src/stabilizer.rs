//! Rendering of stabilized frames.
//!
//! Smooth mode re-renders the last `n_avg` frames from the current filtered
//! view and averages them. Saccade mode holds a fixed viewpoint and keeps a
//! running sum that adds the newest warped frame and subtracts the one leaving
//! the window; when too few output pixels are covered by every buffered frame
//! the viewpoint jumps to the current orientation.
//!
//! Frame `i` seen from view `j` uses the stabilizing rotation
//! `R^stab_{j,i} = R_view_j^T R_{0,i}`; destination pixel `p` samples frame `i`
//! at `R^stab_{i,j} p`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Rotation};
use crate::imgproc::{average_from_sums, warp_accumulate, warp_frame, CropRect, Frame, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StabilizationMode {
    #[default]
    Smooth,
    Saccade,
}

impl std::str::FromStr for StabilizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(StabilizationMode::Smooth),
            "saccade" => Ok(StabilizationMode::Saccade),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?} (smooth|saccade)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizerConfig {
    pub n_avg: usize,
    /// Fraction of width/height removed from each side of the output.
    pub margin_fraction: f64,
    pub mode: StabilizationMode,
    /// Saccade when fewer than this fraction of output pixels are fully covered.
    pub saccade_valid_threshold: f64,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            n_avg: 6,
            margin_fraction: 0.125,
            mode: StabilizationMode::Smooth,
            saccade_valid_threshold: 0.9,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_avg == 0 || self.n_avg > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("n_avg {} out of range", self.n_avg)));
        }
        if !(0.0..0.5).contains(&self.margin_fraction) {
            return Err(Error::InvalidArgument(format!("margin {} not in [0, 0.5)", self.margin_fraction)));
        }
        if !(self.saccade_valid_threshold > 0.0 && self.saccade_valid_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "saccade threshold {} not in (0, 1]",
                self.saccade_valid_threshold
            )));
        }
        Ok(())
    }

    /// Output geometry for input intrinsics `k`.
    pub fn output_rect(&self, k: &Intrinsics) -> Result<CropRect> {
        CropRect::from_margin(k.width as usize, k.height as usize, self.margin_fraction)
    }
}

#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub frame: Frame,
    /// Estimated orientation `R_{0,i}`.
    pub r_0i: Rotation,
    /// View `R^view_{0,i}` at the time the frame arrived.
    pub r_view: Rotation,
}

/// Bounded window of the most recent frames with their rotations.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        FrameBuffer { entries: VecDeque::with_capacity(capacity), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, entry: BufferEntry) {
        if let Some(last) = self.entries.back() {
            debug_assert!(last.frame.index < entry.frame.index || entry.frame.index == 0);
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn latest(&self) -> Option<&BufferEntry> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }
}

/// Averages the buffered frames rendered from `r_view` into the cropped output.
pub fn render_average<'a>(
    frames: impl Iterator<Item = (&'a Frame, &'a Rotation)>,
    r_view: &Rotation,
    k: &Intrinsics,
    rect: &CropRect,
    channels: usize,
) -> (Frame, ValidityMask) {
    let k_out = rect.intrinsics(k);
    let n = rect.width * rect.height;
    let mut sum = vec![0.0f64; n * channels];
    let mut counts = vec![0u16; n];
    for (frame, r_0i) in frames {
        // destination (view) pixel samples frame i along R_{i,view} = R_0i^T R_view
        let r = r_0i.transpose() * *r_view;
        warp_accumulate(frame, &r, k, &k_out, &mut sum, &mut counts);
    }
    let out = average_from_sums(rect.width, rect.height, channels, &sum, &counts);
    (out, ValidityMask::new(rect.width, rect.height, counts).expect("mask size"))
}

/// Smooth-view output for the newest buffered frame.
pub fn stabilize_smooth(buffer: &FrameBuffer, config: &StabilizerConfig, k: &Intrinsics) -> Result<(Frame, ValidityMask)> {
    let latest = buffer.latest().ok_or_else(|| Error::InvalidArgument("empty frame buffer".into()))?;
    let rect = config.output_rect(k)?;
    let (out, mask) = render_average(
        buffer.iter().map(|e| (&e.frame, &e.r_0i)),
        &latest.r_view,
        k,
        &rect,
        latest.frame.channels(),
    );
    Ok((out.with_meta(latest.frame.index, latest.frame.timestamp), mask))
}

#[derive(Debug, Clone)]
struct CachedFrame {
    raw: Frame,
    r_0i: Rotation,
    warped: Frame,
    mask: ValidityMask,
}

#[derive(Debug, Clone)]
pub struct SaccadeOutput {
    pub frame: Frame,
    pub mask: ValidityMask,
    pub saccaded: bool,
    /// Fraction of output pixels covered by every cached frame, before any saccade.
    pub filled_fraction: f64,
}

/// Fixed-viewpoint renderer with an O(1)-per-frame running sum.
#[derive(Debug, Clone)]
pub struct SaccadeState {
    r_fixed: Option<Rotation>,
    sum: Vec<f64>,
    counts: Vec<u16>,
    cache: VecDeque<CachedFrame>,
    n_avg: usize,
}

impl SaccadeState {
    pub fn new(n_avg: usize) -> Self {
        SaccadeState { r_fixed: None, sum: Vec::new(), counts: Vec::new(), cache: VecDeque::new(), n_avg: n_avg.max(1) }
    }

    pub fn r_fixed(&self) -> Option<Rotation> {
        self.r_fixed
    }

    pub fn cached_len(&self) -> usize {
        self.cache.len()
    }

    /// Running sums and counts (for invariant checks).
    pub fn accumulator(&self) -> (&[f64], &[u16]) {
        (&self.sum, &self.counts)
    }

    /// Cached raw frames with their orientations, oldest first.
    pub fn cached_frames(&self) -> impl Iterator<Item = (&Frame, &Rotation)> {
        self.cache.iter().map(|c| (&c.raw, &c.r_0i))
    }

    fn add(&mut self, c: &CachedFrame) {
        let ch = c.warped.channels();
        for (i, &m) in c.mask.counts().iter().enumerate() {
            if m == 0 {
                continue;
            }
            self.counts[i] += m;
            for k in 0..ch {
                self.sum[i * ch + k] += c.warped.data()[i * ch + k] as f64;
            }
        }
    }

    fn remove(&mut self, c: &CachedFrame) {
        let ch = c.warped.channels();
        for (i, &m) in c.mask.counts().iter().enumerate() {
            if m == 0 {
                continue;
            }
            self.counts[i] -= m;
            for k in 0..ch {
                self.sum[i * ch + k] -= c.warped.data()[i * ch + k] as f64;
            }
            if self.counts[i] == 0 {
                // exact zero rather than cancellation residue
                for k in 0..ch {
                    self.sum[i * ch + k] = 0.0;
                }
            }
        }
    }

    fn warp(raw: &Frame, r_0i: &Rotation, r_fixed: &Rotation, k: &Intrinsics, k_out: &Intrinsics) -> (Frame, ValidityMask) {
        warp_frame(raw, &(r_0i.transpose() * *r_fixed), k, k_out)
    }

    fn rebuild(&mut self, r_fixed: Rotation, k: &Intrinsics, k_out: &Intrinsics) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.counts.iter_mut().for_each(|v| *v = 0);
        let cache = std::mem::take(&mut self.cache);
        for mut c in cache {
            let (warped, mask) = Self::warp(&c.raw, &c.r_0i, &r_fixed, k, k_out);
            c.warped = warped;
            c.mask = mask;
            self.add(&c);
            self.cache.push_back(c);
        }
        self.r_fixed = Some(r_fixed);
    }

    fn fully_filled_fraction(&self) -> f64 {
        let full = self.cache.len() as u16;
        self.counts.iter().filter(|&&c| c == full).count() as f64 / self.counts.len().max(1) as f64
    }

    /// Adds a frame with orientation `r_0j` and returns the fixed-view output.
    pub fn push(&mut self, frame: &Frame, r_0j: &Rotation, config: &StabilizerConfig, k: &Intrinsics) -> Result<SaccadeOutput> {
        let rect = config.output_rect(k)?;
        let k_out = rect.intrinsics(k);
        let n = rect.width * rect.height;
        let ch = frame.channels();
        if self.sum.len() != n * ch {
            self.sum = vec![0.0; n * ch];
            self.counts = vec![0; n];
            self.cache.clear();
            self.r_fixed = None;
        }
        let r_fixed = *self.r_fixed.get_or_insert(*r_0j);

        let (warped, mask) = Self::warp(frame, r_0j, &r_fixed, k, &k_out);
        let entry = CachedFrame { raw: frame.clone(), r_0i: *r_0j, warped, mask };
        self.add(&entry);
        self.cache.push_back(entry);
        while self.cache.len() > self.n_avg {
            let old = self.cache.pop_front().expect("non-empty cache");
            self.remove(&old);
        }

        let filled_fraction = self.fully_filled_fraction();
        let saccaded = filled_fraction < config.saccade_valid_threshold;
        if saccaded {
            self.rebuild(*r_0j, k, &k_out);
        }
        let out = average_from_sums(rect.width, rect.height, ch, &self.sum, &self.counts)
            .with_meta(frame.index, frame.timestamp);
        let mask = ValidityMask::new(rect.width, rect.height, self.counts.clone())?;
        Ok(SaccadeOutput { frame: out, mask, saccaded, filled_fraction })
    }
}

/// Free-function form of [`SaccadeState::push`].
pub fn stabilize_saccade(
    state: &mut SaccadeState,
    frame: &Frame,
    r_0j: &Rotation,
    config: &StabilizerConfig,
    k: &Intrinsics,
) -> Result<SaccadeOutput> {
    state.push(frame, r_0j, config, k)
}
