//! Ground-truth sequences rendered by pure camera rotation inside a wide-angle
//! source image. With the scene at infinity the rotational warp is exact, so the
//! logged rotations are the true inter-frame motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PixelCoord, PixelWarp, Rotation, So3Vector};
use crate::imgproc::{warp_frame, Frame};

pub const SOURCE_SIZE: usize = 2048;
pub const SOURCE_FOV_DEG: f64 = 120.0;
pub const CAMERA_FOV_DEG: f64 = 60.0;

/// Intrinsics of the square wide-angle source image.
pub fn source_intrinsics(size: usize) -> Intrinsics {
    Intrinsics::from_hfov(size as u32, size as u32, SOURCE_FOV_DEG.to_radians()).expect("valid source fov")
}

/// Centred pinhole camera with the default horizontal field of view.
pub fn camera_intrinsics(width: usize, height: usize) -> Intrinsics {
    Intrinsics::from_hfov(width as u32, height as u32, CAMERA_FOV_DEG.to_radians()).expect("valid camera fov")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Multi-octave value noise.
    #[default]
    Texture,
    /// Procedural test chart: zone rings, soft checkers and sector star.
    Chart,
}

/// One octave of lattice noise: node spacing in source pixels and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Octave {
    pub spacing: usize,
    pub amplitude: f32,
}

/// Texture with enough fine detail that a large share of camera pixels pass
/// the normal-flow gradient threshold.
pub const DEFAULT_OCTAVES: [Octave; 6] = [
    Octave { spacing: 128, amplitude: 0.8 },
    Octave { spacing: 64, amplitude: 0.7 },
    Octave { spacing: 32, amplitude: 0.7 },
    Octave { spacing: 16, amplitude: 0.7 },
    Octave { spacing: 8, amplitude: 0.6 },
    Octave { spacing: 4, amplitude: 0.3 },
];

/// Low-frequency texture with a wide convergence basin for direct alignment.
pub const SMOOTH_OCTAVES: [Octave; 5] = [
    Octave { spacing: 512, amplitude: 1.0 },
    Octave { spacing: 256, amplitude: 0.9 },
    Octave { spacing: 128, amplitude: 0.7 },
    Octave { spacing: 64, amplitude: 0.5 },
    Octave { spacing: 32, amplitude: 0.3 },
];

#[inline]
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smoothly interpolated random lattice values, `size x size`, zero mean.
fn lattice_noise(size: usize, octave: Octave, rng: &mut ChaCha8Rng, out: &mut [f32]) {
    let s = octave.spacing.max(1);
    let nodes = size / s + 2;
    let lattice: Vec<f32> = (0..nodes * nodes).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    let inv = 1.0 / s as f32;
    for y in 0..size {
        let gy = y / s;
        let ty = fade((y % s) as f32 * inv);
        for x in 0..size {
            let gx = x / s;
            let tx = fade((x % s) as f32 * inv);
            let a = lattice[gy * nodes + gx];
            let b = lattice[gy * nodes + gx + 1];
            let c = lattice[(gy + 1) * nodes + gx];
            let d = lattice[(gy + 1) * nodes + gx + 1];
            let top = a + tx * (b - a);
            let bottom = c + tx * (d - c);
            out[y * size + x] += octave.amplitude * (top + ty * (bottom - top));
        }
    }
}

fn normalize_field(field: &mut [f32], mean_target: f32, std_target: f32) {
    let n = field.len() as f64;
    let mean = field.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = field.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = std_target as f64 / var.sqrt().max(1e-12);
    for v in field.iter_mut() {
        *v = (mean_target as f64 + (*v as f64 - mean) * scale) as f32;
    }
}

/// Multi-octave value-noise texture with mild, low-frequency colour variation.
pub fn procedural_texture(size: usize, channels: usize, seed: u64, octaves: &[Octave]) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut luma = vec![0.0f32; size * size];
    for &o in octaves {
        lattice_noise(size, o, &mut rng, &mut luma);
    }
    normalize_field(&mut luma, 0.5, 0.16);
    if channels == 1 {
        let data = luma.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        return Frame::new(size, size, 1, data);
    }
    let mut chroma = [vec![0.0f32; size * size], vec![0.0f32; size * size]];
    for field in chroma.iter_mut() {
        for &o in octaves.iter().take(3) {
            lattice_noise(size, o, &mut rng, field);
        }
        normalize_field(field, 0.0, 0.06);
    }
    let mut data = Vec::with_capacity(size * size * 3);
    for i in 0..size * size {
        let (l, u, v) = (luma[i], chroma[0][i], chroma[1][i]);
        // chroma offsets chosen to leave Rec.601 luma unchanged
        data.push((l + u).clamp(0.0, 1.0));
        data.push((l - (0.299 * u + 0.114 * v) / 0.587).clamp(0.0, 1.0));
        data.push((l + v).clamp(0.0, 1.0));
    }
    Frame::new(size, size, 3, data)
}

/// Procedural chart: soft checkerboard, concentric rings and a sector star.
pub fn test_chart(size: usize, channels: usize) -> Result<Frame> {
    let c = size as f32 * 0.5;
    Frame::from_fn(size, size, channels, |x, y, ch| {
        let (dx, dy) = (x as f32 - c, y as f32 - c);
        let r = (dx * dx + dy * dy).sqrt();
        let checker = ((x as f32 / 37.0).sin() * (y as f32 / 37.0).sin() * 4.0).tanh();
        let rings = (r / 23.0).sin();
        let star = (dy.atan2(dx) * 24.0).sin() * (r / (0.15 * size as f32)).min(1.0);
        let tint = if channels == 3 { 0.04 * (ch as f32 - 1.0) * (x as f32 / 300.0).cos() } else { 0.0 };
        (0.5 + 0.18 * checker + 0.12 * rings + 0.1 * star + tint).clamp(0.0, 1.0)
    })
}

pub fn make_source(kind: SourceKind, size: usize, channels: usize, seed: u64) -> Result<Frame> {
    match kind {
        SourceKind::Texture => procedural_texture(size, channels, seed, &DEFAULT_OCTAVES),
        SourceKind::Chart => test_chart(size, channels),
    }
}

/// Checks that every camera pixel viewed at `r` lands inside the source.
pub fn check_fov(k_src: &Intrinsics, r: &Rotation, k_cam: &Intrinsics) -> Result<()> {
    let warp = PixelWarp::new(r, k_src, k_cam);
    let (w, h) = ((k_cam.width - 1) as f64, (k_cam.height - 1) as f64);
    let (sw, sh) = ((k_src.width - 1) as f64, (k_src.height - 1) as f64);
    // The camera rectangle maps to a convex quadrilateral when all corners are in front.
    for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
        match warp.apply(u, v) {
            Some(PixelCoord { u: su, v: sv }) if su >= 0.0 && sv >= 0.0 && su <= sw && sv <= sh => {}
            other => {
                return Err(Error::FovExceeded(format!(
                    "camera corner ({u}, {v}) maps to {other:?}, outside the {}x{} source",
                    k_src.width, k_src.height
                )))
            }
        }
    }
    Ok(())
}

/// Camera image at orientation `r` (camera to source frame).
pub fn render_view(source: &Frame, k_src: &Intrinsics, r: &Rotation, k_cam: &Intrinsics) -> Result<Frame> {
    check_fov(k_src, r, k_cam)?;
    let (frame, mask) = warp_frame(source, r, k_src, k_cam);
    if mask.counts().contains(&0) {
        return Err(Error::FovExceeded("rendered view has unfilled pixels".into()));
    }
    Ok(frame)
}

/// Sinusoidal perturbation about one body axis (0 = x, 1 = y, 2 = z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub axis: usize,
    /// Radians.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
}

/// Constant body-rate segment of the slow base motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSegment {
    /// Seconds.
    pub duration: f64,
    /// Body angular velocity, rad/s.
    pub omega: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShakeTrajectory {
    #[serde(default)]
    pub base: Vec<BaseSegment>,
    #[serde(default)]
    pub perturbation: Vec<Sinusoid>,
    pub fps: f64,
    /// Seconds.
    pub duration: f64,
}

/// Per-axis shake amplitude of the `flapper12` preset (radians, fundamental).
pub const FLAPPER12_AMPLITUDE: f64 = 0.0035;

impl ShakeTrajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument("trajectory needs positive fps and duration".into()));
        }
        for s in &self.perturbation {
            if s.axis > 2 {
                return Err(Error::InvalidArgument(format!("perturbation axis {} not in 0..3", s.axis)));
            }
            if !(s.amplitude.abs() < 0.2) {
                return Err(Error::InvalidArgument(format!("amplitude {} rad must be below 0.2", s.amplitude)));
            }
            if !(s.frequency >= 0.0 && s.frequency < 0.5 * self.fps) {
                return Err(Error::InvalidArgument(format!(
                    "frequency {} Hz must be below Nyquist ({} Hz)",
                    s.frequency,
                    0.5 * self.fps
                )));
            }
        }
        for b in &self.base {
            if !(b.duration >= 0.0) || b.omega.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("base segment needs finite rate and non-negative duration".into()));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    fn base_at(&self, t: f64) -> Rotation {
        let mut r = Rotation::identity();
        let mut start = 0.0;
        for seg in &self.base {
            let span = (t - start).clamp(0.0, seg.duration);
            if span > 0.0 {
                r = r * So3Vector::from(seg.omega).scaled(span).exp();
            }
            start += seg.duration;
            if t <= start {
                break;
            }
        }
        r
    }

    fn perturbation_at(&self, t: f64) -> So3Vector {
        let mut w = [0.0; 3];
        for s in &self.perturbation {
            w[s.axis] += s.amplitude * (2.0 * std::f64::consts::PI * s.frequency * t + s.phase).sin();
        }
        So3Vector::from(w)
    }

    /// Camera-to-source rotation at time `t`.
    pub fn orientation_at(&self, t: f64) -> Rotation {
        self.base_at(t) * self.perturbation_at(t).exp()
    }

    /// No motion at all.
    pub fn static_preset(fps: f64, duration: f64) -> Self {
        ShakeTrajectory { base: Vec::new(), perturbation: Vec::new(), fps, duration }
    }

    /// Three-axis 12 Hz shake with a 24 Hz harmonic at half amplitude over a
    /// slow square pan.
    pub fn flapper12() -> Self {
        let a = FLAPPER12_AMPLITUDE;
        let phases = [(0.0, 1.1), (2.1, 0.4), (4.2, 2.9)];
        let mut perturbation = Vec::new();
        for (axis, &(p1, p2)) in phases.iter().enumerate() {
            perturbation.push(Sinusoid { axis, amplitude: a, frequency: 12.0, phase: p1 });
            perturbation.push(Sinusoid { axis, amplitude: 0.5 * a, frequency: 24.0, phase: p2 });
        }
        let yaw = 2f64.to_radians();
        let pitch = 1f64.to_radians();
        ShakeTrajectory {
            base: vec![
                BaseSegment { duration: 5.0, omega: [0.0, yaw, 0.0] },
                BaseSegment { duration: 5.0, omega: [pitch, 0.0, 0.0] },
                BaseSegment { duration: 5.0, omega: [0.0, -yaw, 0.0] },
                BaseSegment { duration: 5.0, omega: [-pitch, 0.0, 0.0] },
            ],
            perturbation,
            fps: 60.0,
            duration: 20.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "flapper12" => Ok(Self::flapper12()),
            "static" => Ok(Self::static_preset(60.0, 2.0)),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?} (flapper12|static)"))),
        }
    }
}

/// Renders trajectory frames one at a time.
pub struct SequenceRenderer<'a> {
    source: &'a Frame,
    k_src: Intrinsics,
    k_cam: Intrinsics,
    trajectory: &'a ShakeTrajectory,
    next: usize,
}

impl<'a> SequenceRenderer<'a> {
    pub fn new(source: &'a Frame, k_src: Intrinsics, trajectory: &'a ShakeTrajectory, k_cam: Intrinsics) -> Result<Self> {
        trajectory.validate()?;
        Ok(SequenceRenderer { source, k_src, k_cam, trajectory, next: 0 })
    }
}

impl Iterator for SequenceRenderer<'_> {
    /// Frame with its exact camera-to-source rotation.
    type Item = Result<(Frame, Rotation)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.trajectory.frame_count() {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let t = self.trajectory.time_of(i);
        let r = self.trajectory.orientation_at(t);
        Some(render_view(self.source, &self.k_src, &r, &self.k_cam).map(|f| (f.with_meta(i as u64, t), r)))
    }
}

/// Renders every frame of a trajectory with its camera-to-source rotation.
pub fn generate_sequence(
    source: &Frame,
    k_src: &Intrinsics,
    trajectory: &ShakeTrajectory,
    k_cam: &Intrinsics,
) -> Result<(Vec<Frame>, Vec<Rotation>)> {
    SequenceRenderer::new(source, *k_src, trajectory, *k_cam)?.collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
}

/// Rotations relative to the first, `R_{0,j} = R_0^T R_j`.
pub fn relative_to_first(rotations: &[Rotation]) -> Vec<Rotation> {
    let Some(first) = rotations.first() else { return Vec::new() };
    rotations.iter().map(|r| first.transpose() * *r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::angular_velocity_rms;

    fn small_source() -> (Frame, Intrinsics) {
        let size = 512;
        (procedural_texture(size, 1, 1, &DEFAULT_OCTAVES[2..]).unwrap(), source_intrinsics(size))
    }

    #[test]
    fn identity_view_is_a_central_crop_when_scales_match() {
        let size = 200;
        let src = procedural_texture(size, 1, 3, &DEFAULT_OCTAVES[3..]).unwrap();
        let k_src = Intrinsics::new(150.0, 150.0, 99.5, 99.5, 200, 200).unwrap();
        let k_cam = Intrinsics::new(150.0, 150.0, 39.5, 29.5, 80, 60).unwrap();
        let f = render_view(&src, &k_src, &Rotation::identity(), &k_cam).unwrap();
        for y in 0..60 {
            for x in 0..80 {
                assert!((f.get(x, y, 0) - src.get(x + 60, y + 70, 0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fov_violation_is_an_error() {
        let (src, k_src) = small_source();
        let k_cam = camera_intrinsics(64, 36);
        assert!(render_view(&src, &k_src, &Rotation::ry(0.2), &k_cam).is_ok());
        let err = render_view(&src, &k_src, &Rotation::ry(0.9), &k_cam).unwrap_err();
        assert!(matches!(err, Error::FovExceeded(_)));
    }

    #[test]
    fn roll_render_is_in_plane_rotation() {
        let (src, k_src) = small_source();
        let k_cam = Intrinsics::from_hfov(65, 65, 50f64.to_radians()).unwrap();
        let upright = render_view(&src, &k_src, &Rotation::identity(), &k_cam).unwrap();
        let rolled = render_view(&src, &k_src, &Rotation::rz(std::f64::consts::FRAC_PI_2), &k_cam).unwrap();
        let mut se = 0.0;
        for y in 0..65usize {
            for x in 0..65usize {
                let (dx, dy) = (x as i64 - 32, y as i64 - 32);
                let (sx, sy) = ((32 - dy) as usize, (32 + dx) as usize);
                se += ((rolled.get(x, y, 0) - upright.get(sx, sy, 0)) as f64).powi(2);
            }
        }
        assert!((se / (65.0 * 65.0)).sqrt() < 1e-2);
    }

    #[test]
    fn static_trajectory_gives_identical_frames() {
        let (src, k_src) = small_source();
        let traj = ShakeTrajectory::static_preset(60.0, 0.1);
        let (frames, rots) = generate_sequence(&src, &k_src, &traj, &camera_intrinsics(48, 32)).unwrap();
        assert_eq!(frames.len(), 6);
        assert!(frames.windows(2).all(|w| w[0].data() == w[1].data()));
        assert!(rots.iter().all(|r| *r == Rotation::identity()));
    }

    #[test]
    fn sinusoid_angular_velocity_rms() {
        let amp = 2f64.to_radians();
        let traj = ShakeTrajectory {
            base: vec![],
            perturbation: vec![Sinusoid { axis: 2, amplitude: amp, frequency: 12.0, phase: 0.0 }],
            fps: 60.0,
            duration: 10.0,
        };
        let rots: Vec<Rotation> = (0..traj.frame_count()).map(|i| traj.orientation_at(traj.time_of(i))).collect();
        let got = angular_velocity_rms(&rots, traj.dt()).unwrap();
        // continuous-time RMS 2 deg * 2 pi * 12 / sqrt 2; frame differencing shrinks it by sinc(12/60)
        let continuous = 2.0 * 2.0 * std::f64::consts::PI * 12.0 / 2f64.sqrt();
        let x = std::f64::consts::PI * 12.0 / 60.0;
        let sampled = continuous * x.sin() / x;
        assert!((continuous - 106.6).abs() < 0.1);
        assert!((got - sampled).abs() / sampled < 0.01, "{got} vs {sampled}");
    }

    #[test]
    fn logged_rotations_match_trajectory() {
        let (src, k_src) = small_source();
        let traj = ShakeTrajectory { duration: 0.2, ..ShakeTrajectory::flapper12() };
        let (_, rots) = generate_sequence(&src, &k_src, &traj, &camera_intrinsics(48, 32)).unwrap();
        for (i, r) in rots.iter().enumerate() {
            assert_eq!(*r, traj.orientation_at(i as f64 / 60.0));
        }
        let rel = relative_to_first(&rots);
        assert!(rel[0].angle() < 1e-15);
    }

    #[test]
    fn presets() {
        let f = ShakeTrajectory::preset("flapper12").unwrap();
        assert_eq!(f.frame_count(), 1200);
        assert_eq!(f.fps, 60.0);
        f.validate().unwrap();
        assert!(ShakeTrajectory::preset("nope").is_err());
        let bad = ShakeTrajectory {
            perturbation: vec![Sinusoid { axis: 0, amplitude: 0.01, frequency: 31.0, phase: 0.0 }],
            ..ShakeTrajectory::static_preset(60.0, 1.0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn colour_texture_keeps_luma() {
        let f = procedural_texture(64, 3, 5, &DEFAULT_OCTAVES[3..]).unwrap();
        assert_eq!(f.channels(), 3);
        let m = f.mean();
        assert!(m > 0.4 && m < 0.6);
    }
}
