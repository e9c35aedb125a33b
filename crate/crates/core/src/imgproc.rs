//! Frames, sampling, gradients and rotational remapping.

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PixelCoord, PixelWarp, Rotation};

pub const MIN_FRAME_SIDE: usize = 8;

/// Row-major `H x W x C` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    pub timestamp: f64,
    pub index: u64,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("unsupported channel count {channels}")));
        }
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::InvalidArgument(format!(
                "frame {width}x{height} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} frame",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Frame { width, height, channels, data, timestamp: 0.0, index: 0 })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Frame::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a frame from a per-pixel function returning one value per channel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Frame::new(width, height, channels, data)
    }

    // Internal constructor for outputs that are in range by construction.
    pub(crate) fn from_parts(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Frame { width, height, channels, data, timestamp: 0.0, index: 0 }
    }

    pub fn with_meta(mut self, index: u64, timestamp: f64) -> Self {
        self.index = index;
        self.timestamp = timestamp;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel number of source frames that contributed to a rendered pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    counts: Vec<u16>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, counts: Vec<u16>) -> Result<Self> {
        if counts.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for a {width}x{height} mask",
                counts.len()
            )));
        }
        Ok(ValidityMask { width, height, counts })
    }

    pub fn filled(width: usize, height: usize, count: u16) -> Self {
        ValidityMask { width, height, counts: vec![count; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u16] {
        &self.counts
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.counts[y * self.width + x]
    }

    /// Fraction of pixels whose count equals `full`.
    pub fn fraction_at_least(&self, full: u16) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().filter(|&&c| c >= full).count() as f64 / self.counts.len() as f64
    }
}

/// Horizontal and vertical intensity derivatives, per pixel and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// Coordinates this close outside the image are snapped onto its border, so
/// round-off in a composed warp does not drop edge pixels.
pub const EDGE_TOLERANCE: f64 = 1e-6;

/// Bilinear interpolation; `None` when a contributing neighbour is outside the image.
///
/// Returns the top-left neighbour `(x0, y0)` and the fractional offsets. The
/// neighbour is kept at most at `(width - 2, height - 2)`, so `x0 + 1` and
/// `y0 + 1` are always in bounds and a coordinate on the last row or column
/// gets an offset of 1.
#[inline(always)]
pub fn bilinear_weights(width: usize, height: usize, u: f64, v: f64) -> Option<(usize, usize, f32, f32)> {
    let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
    if !(u >= -EDGE_TOLERANCE && v >= -EDGE_TOLERANCE && u <= wm + EDGE_TOLERANCE && v <= hm + EDGE_TOLERANCE) {
        return None;
    }
    let (u, v) = (u.clamp(0.0, wm), v.clamp(0.0, hm));
    let x0 = (u as usize).min(width - 2);
    let y0 = (v as usize).min(height - 2);
    Some((x0, y0, (u - x0 as f64) as f32, (v - y0 as f64) as f32))
}

#[inline(always)]
fn interp_channel(frame: &Frame, x0: usize, y0: usize, ax: f32, ay: f32, c: usize) -> f32 {
    let (w, ch) = (frame.width, frame.channels);
    let i = (y0 * w + x0) * ch + c;
    let d = &frame.data[i..i + (w + 1) * ch + 1];
    let (p00, p01, p10, p11) = (d[0], d[ch], d[w * ch], d[w * ch + ch]);
    let top = p00 + ax * (p01 - p00);
    let bottom = p10 + ax * (p11 - p10);
    top + ay * (bottom - top)
}

/// Samples channel `c` at a continuous pixel coordinate.
#[inline]
pub fn sample_channel(frame: &Frame, px: PixelCoord, c: usize) -> Option<f32> {
    let (x0, y0, ax, ay) = bilinear_weights(frame.width, frame.height, px.u, px.v)?;
    Some(interp_channel(frame, x0, y0, ax, ay, c))
}

/// Samples every channel; the flag is false (and values zero) outside the image.
pub fn bilinear_sample(frame: &Frame, px: PixelCoord) -> (Vec<f32>, bool) {
    match bilinear_weights(frame.width, frame.height, px.u, px.v) {
        Some((x0, y0, ax, ay)) => {
            ((0..frame.channels).map(|c| interp_channel(frame, x0, y0, ax, ay, c)).collect(), true)
        }
        None => (vec![0.0; frame.channels], false),
    }
}

/// 3x3 Sobel derivatives scaled by 1/8, so a unit-slope ramp has gradient 1.
/// Borders replicate the edge pixels.
pub fn sobel_gradients(frame: &Frame) -> GradientField {
    let (w, h, ch) = (frame.width, frame.height, frame.channels);
    let mut gx = vec![0.0; w * h * ch];
    let mut gy = vec![0.0; w * h * ch];
    let d = &frame.data;
    let at = |x: usize, y: usize, c: usize| d[(y * w + x) * ch + c] as f64;
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            for c in 0..ch {
                let right = at(xp, ym, c) + 2.0 * at(xp, y, c) + at(xp, yp, c);
                let left = at(xm, ym, c) + 2.0 * at(xm, y, c) + at(xm, yp, c);
                let down = at(xm, yp, c) + 2.0 * at(x, yp, c) + at(xp, yp, c);
                let up = at(xm, ym, c) + 2.0 * at(x, ym, c) + at(xp, ym, c);
                let i = (y * w + x) * ch + c;
                gx[i] = (right - left) * 0.125;
                gy[i] = (down - up) * 0.125;
            }
        }
    }
    GradientField { width: w, height: h, channels: ch, gx, gy }
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Rec.601 luma. Gray input is returned unchanged.
pub fn rgb_to_gray(frame: &Frame) -> Frame {
    if frame.channels == 1 {
        return frame.clone();
    }
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]).clamp(0.0, 1.0))
        .collect();
    Frame::from_parts(frame.width, frame.height, 1, data).with_meta(frame.index, frame.timestamp)
}

/// Block-mean downsampling by an integer factor.
pub fn downsample(frame: &Frame, factor: usize) -> Result<Frame> {
    if factor == 0 || !frame.width.is_multiple_of(factor) || !frame.height.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {factor} does not divide {}x{}",
            frame.width, frame.height
        )));
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let (w, h, ch) = (frame.width / factor, frame.height / factor, frame.channels);
    if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
        return Err(Error::InvalidArgument(format!("downsampled frame {w}x{h} is too small")));
    }
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0f32; w * h * ch];
    let mut acc = vec![0.0f64; ch];
    for by in 0..h {
        for bx in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += frame.get(x, y, c) as f64;
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out[(by * w + bx) * ch + c] = ((a * norm) as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Frame::from_parts(w, h, ch, out).with_meta(frame.index, frame.timestamp))
}

/// Renders `src` as seen from a camera rotated by `r` relative to it: the
/// destination pixel `p` samples the source at `rotational_warp(r, p)`.
/// Pixels that sample outside the source (or behind it) are 0 with count 0.
pub fn warp_frame(src: &Frame, r: &Rotation, k_src: &Intrinsics, k_dst: &Intrinsics) -> (Frame, ValidityMask) {
    let (w, h, ch) = (k_dst.width as usize, k_dst.height as usize, src.channels);
    let mut data = vec![0.0f32; w * h * ch];
    let mut counts = vec![0u16; w * h];
    let warp = PixelWarp::new(r, k_src, k_dst);
    match ch {
        1 => warp_kernel::<1>(src, &warp, w, h, |i, px| {
            counts[i] = 1;
            data[i] = px[0];
        }),
        _ => warp_kernel::<3>(src, &warp, w, h, |i, px| {
            counts[i] = 1;
            data[i * 3..i * 3 + 3].copy_from_slice(&px);
        }),
    }
    (
        Frame::from_parts(w, h, ch, data).with_meta(src.index, src.timestamp),
        ValidityMask { width: w, height: h, counts },
    )
}

/// Adds a warped copy of `src` into running sums and per-pixel counts.
pub fn warp_accumulate(
    src: &Frame,
    r: &Rotation,
    k_src: &Intrinsics,
    k_dst: &Intrinsics,
    sum: &mut [f64],
    counts: &mut [u16],
) {
    let (w, h, ch) = (k_dst.width as usize, k_dst.height as usize, src.channels);
    assert_eq!(sum.len(), w * h * ch);
    assert_eq!(counts.len(), w * h);
    let warp = PixelWarp::new(r, k_src, k_dst);
    match ch {
        1 => warp_kernel::<1>(src, &warp, w, h, |i, px| {
            counts[i] += 1;
            sum[i] += px[0] as f64;
        }),
        _ => warp_kernel::<3>(src, &warp, w, h, |i, px| {
            counts[i] += 1;
            let s = &mut sum[i * 3..i * 3 + 3];
            s[0] += px[0] as f64;
            s[1] += px[1] as f64;
            s[2] += px[2] as f64;
        }),
    }
}

/// Samples `src` for every validly mapped destination pixel and hands the
/// destination index and interpolated pixel to `sink`.
#[inline(always)]
fn warp_kernel<const CH: usize>(
    src: &Frame,
    warp: &PixelWarp,
    w: usize,
    h: usize,
    mut sink: impl FnMut(usize, [f32; CH]),
) {
    debug_assert_eq!(src.channels, CH);
    let (sw, sh) = (src.width, src.height);
    let d = &src.data[..];
    let stride = sw * CH;
    for row in 0..h {
        warp.for_each_in_row(row, w, |col, px| {
            let Some(px) = px else { return };
            let Some((x0, y0, ax, ay)) = bilinear_weights(sw, sh, px.u, px.v) else { return };
            let base = y0 * stride + x0 * CH;
            let q = &d[base..base + stride + 2 * CH];
            let mut out = [0.0f32; CH];
            for (c, o) in out.iter_mut().enumerate() {
                let (p00, p01, p10, p11) = (q[c], q[CH + c], q[stride + c], q[stride + CH + c]);
                let top = p00 + ax * (p01 - p00);
                let bottom = p10 + ax * (p11 - p10);
                *o = top + ay * (bottom - top);
            }
            sink(row * w + col, out);
        });
    }
}

/// Divides sums by counts; pixels without contributions are 0.
pub fn average_from_sums(width: usize, height: usize, channels: usize, sum: &[f64], counts: &[u16]) -> Frame {
    let mut data = vec![0.0f32; sum.len()];
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let inv = 1.0 / n as f64;
        for c in 0..channels {
            let k = i * channels + c;
            data[k] = ((sum[k] * inv) as f32).clamp(0.0, 1.0);
        }
    }
    Frame::from_parts(width, height, channels, data)
}

/// Pixel rectangle kept after removing a fractional margin from every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn from_margin(width: usize, height: usize, margin_fraction: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&margin_fraction) {
            return Err(Error::InvalidArgument(format!("margin fraction {margin_fraction} not in [0, 0.5)")));
        }
        let left = (margin_fraction * width as f64).floor() as usize;
        let top = (margin_fraction * height as f64).floor() as usize;
        Ok(CropRect { left, top, width: width - 2 * left, height: height - 2 * top })
    }

    pub fn intrinsics(&self, k: &Intrinsics) -> Intrinsics {
        k.cropped(self.left as u32, self.top as u32, self.width as u32, self.height as u32)
    }

    pub fn crop_frame(&self, frame: &Frame) -> Frame {
        let ch = frame.channels;
        let mut data = Vec::with_capacity(self.width * self.height * ch);
        for y in self.top..self.top + self.height {
            let start = (y * frame.width + self.left) * ch;
            data.extend_from_slice(&frame.data[start..start + self.width * ch]);
        }
        Frame::from_parts(self.width, self.height, ch, data).with_meta(frame.index, frame.timestamp)
    }

    pub fn crop_mask(&self, mask: &ValidityMask) -> ValidityMask {
        let mut counts = Vec::with_capacity(self.width * self.height);
        for y in self.top..self.top + self.height {
            let start = y * mask.width + self.left;
            counts.extend_from_slice(&mask.counts[start..start + self.width]);
        }
        ValidityMask { width: self.width, height: self.height, counts }
    }
}

/// Removes `floor(margin * W)` columns and `floor(margin * H)` rows from each side.
pub fn crop_margins(frame: &Frame, mask: &ValidityMask, margin_fraction: f64) -> Result<(Frame, ValidityMask)> {
    if frame.width != mask.width || frame.height != mask.height {
        return Err(Error::ShapeMismatch("frame and mask sizes differ".into()));
    }
    let rect = CropRect::from_margin(frame.width, frame.height, margin_fraction)?;
    Ok((rect.crop_frame(frame), rect.crop_mask(mask)))
}
