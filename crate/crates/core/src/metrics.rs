//! Image-motion and image-quality metrics for stabilized and raw sequences.
//!
//! All gradients are the 1/8-normalized 3x3 Sobel from [`crate::imgproc`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::imgproc::{rgb_to_gray, sobel_gradients, Frame, ValidityMask};

/// Pixels whose spatial gradient magnitude is below this are left out of normal flow.
pub const NORMAL_FLOW_MIN_GRADIENT: f64 = 15.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// RMS normal-flow magnitude, pixels per frame.
    pub nf_rms: f64,
    /// RMS intensity change from the previous output frame.
    pub delta_i_rms: f64,
    /// RMS gradient magnitude over all channels, intensity per pixel.
    pub sharpness: f64,
    /// Percentage of output pixels filled by every averaged frame.
    pub valid_pct: f64,
    /// Angular speed of the camera estimate, deg/s.
    pub omega_img: f64,
    /// Angular speed of the rendered view, deg/s.
    pub omega_view: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFlow {
    /// Per-pixel magnitude `|dI/dt| / |grad I|`; `None` where excluded.
    pub magnitudes: Vec<Option<f64>>,
    pub rms: f64,
    pub qualifying: usize,
}

impl NormalFlow {
    /// True when no pixel passed the gradient threshold (and `rms` is 0).
    pub fn is_empty(&self) -> bool {
        self.qualifying == 0
    }
}

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Per-pixel validity from two masks: a pixel is usable when both masks have a
/// non-zero count.
pub fn joint_validity(a: &ValidityMask, b: &ValidityMask) -> Result<Vec<bool>> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch("validity masks differ in size".into()));
    }
    Ok(a.counts().iter().zip(b.counts()).map(|(&x, &y)| x > 0 && y > 0).collect())
}

/// Shrinks a validity map so that every kept pixel has a fully valid 3x3
/// neighbourhood (Sobel support).
pub fn erode_validity(valid: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; valid.len()];
    for y in 0..height {
        for x in 0..width {
            let mut ok = true;
            'n: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    if !valid[ny as usize * width + nx as usize] {
                        ok = false;
                        break 'n;
                    }
                }
            }
            out[y * width + x] = ok;
        }
    }
    out
}

/// Normal flow between consecutive gray frames, `n = -I_t grad I / |grad I|^2`,
/// with `I_t = next - prev` and spatial gradients taken on `next`.
pub fn normal_flow(prev: &Frame, next: &Frame) -> Result<NormalFlow> {
    normal_flow_masked(prev, next, None)
}

/// [`normal_flow`] restricted to pixels marked valid.
pub fn normal_flow_masked(prev: &Frame, next: &Frame, valid: Option<&[bool]>) -> Result<NormalFlow> {
    check_shapes(prev, next)?;
    if prev.channels() != 1 {
        return Err(Error::InvalidArgument("normal flow expects gray frames".into()));
    }
    let n = prev.width() * prev.height();
    if let Some(v) = valid {
        if v.len() != n {
            return Err(Error::ShapeMismatch("validity map size".into()));
        }
    }
    let grad = sobel_gradients(next);
    let min2 = NORMAL_FLOW_MIN_GRADIENT * NORMAL_FLOW_MIN_GRADIENT;
    let mut magnitudes = vec![None; n];
    let mut sum = 0.0f64;
    let mut qualifying = 0usize;
    for i in 0..n {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        let g2 = grad.gx[i] * grad.gx[i] + grad.gy[i] * grad.gy[i];
        if g2 < min2 {
            continue;
        }
        let it = next.data()[i] as f64 - prev.data()[i] as f64;
        let m = it.abs() / g2.sqrt();
        magnitudes[i] = Some(m);
        sum += m * m;
        qualifying += 1;
    }
    let rms = if qualifying > 0 { (sum / qualifying as f64).sqrt() } else { 0.0 };
    Ok(NormalFlow { magnitudes, rms, qualifying })
}

/// Normal flow for frames of any channel count (converted to luma first).
pub fn normal_flow_rms(prev: &Frame, next: &Frame, valid: Option<&[bool]>) -> Result<f64> {
    let (p, q) = (rgb_to_gray(prev), rgb_to_gray(next));
    Ok(normal_flow_masked(&p, &q, valid)?.rms)
}

/// `sqrt(mean((next - prev)^2))` over all channels of valid pixels.
pub fn delta_i_rms(prev: &Frame, next: &Frame, valid: Option<&[bool]>) -> Result<f64> {
    check_shapes(prev, next)?;
    let ch = prev.channels();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (a, b)) in prev.data().chunks_exact(ch).zip(next.data().chunks_exact(ch)).enumerate() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        for (x, y) in a.iter().zip(b) {
            let d = *y as f64 - *x as f64;
            sum += d * d;
        }
        count += ch;
    }
    Ok(if count > 0 { (sum / count as f64).sqrt() } else { 0.0 })
}

/// RMS gradient magnitude over pixels and channels.
pub fn sharpness(frame: &Frame) -> f64 {
    sharpness_masked(frame, None)
}

pub fn sharpness_masked(frame: &Frame, valid: Option<&[bool]>) -> f64 {
    let g = sobel_gradients(frame);
    let ch = frame.channels();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..frame.width() * frame.height() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        for c in 0..ch {
            let k = i * ch + c;
            sum += g.gx[k] * g.gx[k] + g.gy[k] * g.gy[k];
        }
        count += ch;
    }
    if count > 0 {
        (sum / count as f64).sqrt()
    } else {
        0.0
    }
}

/// Percentage of pixels whose count reached `full`.
pub fn valid_pct(mask: &ValidityMask, full: u16) -> f64 {
    100.0 * mask.fraction_at_least(full)
}

/// Angular speeds `|log(R_{j-1}^T R_j)| / dt` in deg/s for consecutive rotations.
pub fn angular_velocities(rotations: &[Rotation], dt: f64) -> Vec<f64> {
    rotations.windows(2).map(|w| w[0].geodesic_distance(&w[1]).to_degrees() / dt).collect()
}

/// RMS of [`angular_velocities`].
pub fn angular_velocity_rms(rotations: &[Rotation], dt: f64) -> Result<f64> {
    if rotations.len() < 2 {
        return Err(Error::InvalidArgument("angular velocity needs at least two rotations".into()));
    }
    Ok(rms(&angular_velocities(rotations, dt)))
}

/// Sequence-level aggregate: RMS of the per-frame values, mean valid percentage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub frames: usize,
    pub nf_rms: f64,
    pub delta_i_rms: f64,
    pub sharpness: f64,
    pub valid_pct: f64,
    pub omega_img_rms: f64,
    pub omega_view_rms: f64,
}

#[derive(Debug, Clone)]
struct Previous {
    frame: Frame,
    mask: Option<ValidityMask>,
    r_img: Option<Rotation>,
    r_view: Option<Rotation>,
}

/// Streaming metrics over consecutive output frames.
///
/// Each pushed frame after the first yields one [`FrameMetrics`] row comparing
/// it with its predecessor. Masked frames are compared on jointly valid
/// pixels; gradient-based quantities additionally drop pixels whose Sobel
/// support touches an invalid one.
#[derive(Debug, Clone)]
pub struct SequenceMetrics {
    dt: f64,
    full_count: u16,
    prev: Option<Previous>,
    rows: Vec<FrameMetrics>,
}

impl SequenceMetrics {
    /// `full_count` is the contribution count that makes a pixel "valid" for
    /// `valid_pct` (the averaging length).
    pub fn new(dt: f64, full_count: u16) -> Self {
        SequenceMetrics { dt, full_count, prev: None, rows: Vec::new() }
    }

    pub fn push(
        &mut self,
        frame: &Frame,
        mask: Option<&ValidityMask>,
        r_img: Option<Rotation>,
        r_view: Option<Rotation>,
    ) -> Result<Option<FrameMetrics>> {
        let row = match &self.prev {
            None => None,
            Some(prev) => {
                let (w, h) = (frame.width(), frame.height());
                let valid = match (&prev.mask, mask) {
                    (Some(a), Some(b)) => Some(joint_validity(a, b)?),
                    (None, None) => None,
                    _ => return Err(Error::InvalidArgument("masks must be given for all frames or none".into())),
                };
                let interior = valid.as_ref().map(|v| erode_validity(v, w, h));
                let omega = |a: Option<Rotation>, b: Option<Rotation>| match (a, b) {
                    (Some(a), Some(b)) => a.geodesic_distance(&b).to_degrees() / self.dt,
                    _ => 0.0,
                };
                Some(FrameMetrics {
                    nf_rms: normal_flow_rms(&prev.frame, frame, interior.as_deref())?,
                    delta_i_rms: delta_i_rms(&prev.frame, frame, valid.as_deref())?,
                    sharpness: sharpness_masked(frame, interior.as_deref()),
                    valid_pct: mask.map_or(100.0, |m| valid_pct(m, self.full_count)),
                    omega_img: omega(prev.r_img, r_img),
                    omega_view: omega(prev.r_view, r_view),
                })
            }
        };
        if let Some(r) = row {
            self.rows.push(r);
        }
        self.prev = Some(Previous { frame: frame.clone(), mask: mask.cloned(), r_img, r_view });
        Ok(row)
    }

    pub fn rows(&self) -> &[FrameMetrics] {
        &self.rows
    }

    pub fn summary(&self) -> MetricsSummary {
        let col = |f: fn(&FrameMetrics) -> f64| self.rows.iter().map(f).collect::<Vec<_>>();
        let n = self.rows.len();
        MetricsSummary {
            frames: n,
            nf_rms: rms(&col(|r| r.nf_rms)),
            delta_i_rms: rms(&col(|r| r.delta_i_rms)),
            sharpness: rms(&col(|r| r.sharpness)),
            valid_pct: if n > 0 { col(|r| r.valid_pct).iter().sum::<f64>() / n as f64 } else { 0.0 },
            omega_img_rms: rms(&col(|r| r.omega_img)),
            omega_view_rms: rms(&col(|r| r.omega_view)),
        }
    }
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}
