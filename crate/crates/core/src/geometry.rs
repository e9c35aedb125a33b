//! Rotation group algebra, pinhole projection and the rotation-only pixel warp.
//!
//! Rotations follow the frame convention `R_{a,b}`: a point expressed in camera
//! frame `b` maps to frame `a` as `X_a = R_{a,b} X_b`. Increments are always
//! right-multiplied, `R <- R * exp(omega)`.

use std::ops::Mul;
use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle `exp` switches to its second-order Taylor expansion.
pub const EXP_TAYLOR_THRESHOLD: f64 = 1e-8;
/// Below this angle `log` extracts the skew part directly.
pub const LOG_TAYLOR_THRESHOLD: f64 = 1e-6;
/// Logarithms closer than this to pi are refused.
pub const LOG_ANTIPODAL_MARGIN: f64 = 1e-6;
/// Rays whose depth after rotation falls below this are behind the camera.
pub const MIN_RAY_DEPTH: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Element of so(3) in axis-angle form; the norm is the rotation angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct So3Vector(pub Vector3<f64>);

impl So3Vector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        So3Vector(Vector3::new(x, y, z))
    }

    pub fn zeros() -> Self {
        So3Vector(Vector3::zeros())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        So3Vector(self.0 * s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Skew-symmetric matrix `[omega]_x`.
    pub fn hat(&self) -> Matrix3<f64> {
        let w = &self.0;
        Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
    }

    pub fn exp(&self) -> Rotation {
        exp_so3(self)
    }
}

impl From<[f64; 3]> for So3Vector {
    fn from(v: [f64; 3]) -> Self {
        So3Vector::new(v[0], v[1], v[2])
    }
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and orientation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("rotation matrix has non-finite entries".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthonormal (max |R^T R - I| = {err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!("rotation determinant is {det}")));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix without validation. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation to an approximately orthonormal matrix (polar factor).
    pub fn orthonormalized(m: Matrix3<f64>) -> Self {
        if (m.transpose() * m - Matrix3::identity()).abs().max() < 1e-13 && m.determinant() > 0.0 {
            return Rotation(m);
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    pub fn exp(omega: &So3Vector) -> Rotation {
        exp_so3(omega)
    }

    pub fn log(&self) -> Result<So3Vector> {
        log_so3(self)
    }

    /// Rotation angle in [0, pi], valid everywhere including near pi.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let c = 0.5 * (m.trace() - 1.0);
        let s = 0.5 * vee_antisymmetric(m).norm();
        s.atan2(c)
    }

    /// Geodesic distance `angle(self^T other)`.
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        if self == other {
            // R^T R is only identity up to round-off
            return 0.0;
        }
        (self.transpose() * *other).angle()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn right_perturbed(&self, omega: &So3Vector) -> Rotation {
        *self * exp_so3(omega)
    }

    pub fn rx(theta: f64) -> Rotation {
        exp_so3(&So3Vector::new(theta, 0.0, 0.0))
    }

    pub fn ry(theta: f64) -> Rotation {
        exp_so3(&So3Vector::new(0.0, theta, 0.0))
    }

    pub fn rz(theta: f64) -> Rotation {
        exp_so3(&So3Vector::new(0.0, 0.0, theta))
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

fn vee_antisymmetric(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Exponential map via the Rodrigues formula.
pub fn exp_so3(omega: &So3Vector) -> Rotation {
    let theta2 = omega.0.norm_squared();
    let theta = theta2.sqrt();
    let w = omega.hat();
    let w2 = w * w;
    let (a, b) = if theta < EXP_TAYLOR_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + w * a + w2 * b)
}

/// Logarithm map. Refuses rotations within [`LOG_ANTIPODAL_MARGIN`] of pi,
/// where the axis is ill-defined.
pub fn log_so3(r: &Rotation) -> Result<So3Vector> {
    let m = &r.0;
    let v = vee_antisymmetric(m);
    let s = 0.5 * v.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - LOG_ANTIPODAL_MARGIN {
        return Err(Error::NearAntipodal { angle: theta });
    }
    if theta < LOG_TAYLOR_THRESHOLD {
        // sin(theta)/theta ~ 1 - theta^2/6
        return Ok(So3Vector(v * (0.5 * (1.0 + theta * theta / 6.0))));
    }
    Ok(So3Vector(v * (theta / (2.0 * theta.sin()))))
}

/// Pinhole intrinsics mapping normalized image coordinates to pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics for a centered principal point and a horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, hfov_rad: f64) -> Result<Self> {
        if !(hfov_rad > 0.0 && hfov_rad < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("field of view {hfov_rad} rad out of range")));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_rad).tan();
        Intrinsics::new(f, f, 0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need finite, positive focal lengths (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("intrinsics image size is zero".into()));
        }
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let k: Intrinsics =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        k.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(k)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn pixel_to_normalized(&self, px: PixelCoord) -> NormalizedCoord {
        NormalizedCoord { x: (px.u - self.cx) / self.fx, y: (px.v - self.cy) / self.fy }
    }

    pub fn normalized_to_pixel(&self, p: NormalizedCoord) -> PixelCoord {
        PixelCoord { u: self.fx * p.x + self.cx, v: self.fy * p.y + self.cy }
    }

    /// Intrinsics of a `factor`-times block-averaged image. Pixel centers sit on
    /// integer coordinates, so block `b` covers source pixels `factor*b ..` and is
    /// centred at `factor*b + (factor-1)/2`.
    pub fn downsampled(&self, factor: u32) -> Intrinsics {
        let f = factor as f64;
        let shift = 0.5 * (f - 1.0);
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - shift) / f,
            cy: (self.cy - shift) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Intrinsics after removing `left` columns and `top` rows.
    pub fn cropped(&self, left: u32, top: u32, width: u32, height: u32) -> Intrinsics {
        Intrinsics {
            cx: self.cx - left as f64,
            cy: self.cy - top as f64,
            width,
            height,
            ..*self
        }
    }
}

/// Continuous pixel coordinate; integer values are pixel centres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        PixelCoord { u, v }
    }
}

/// Image-plane coordinate of a ray `(x, y, 1)` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizedCoord {
    pub x: f64,
    pub y: f64,
}

impl NormalizedCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        NormalizedCoord { x, y }
    }

    pub fn ray(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
}

pub fn pixel_to_normalized(k: &Intrinsics, px: PixelCoord) -> NormalizedCoord {
    k.pixel_to_normalized(px)
}

pub fn normalized_to_pixel(k: &Intrinsics, p: NormalizedCoord) -> PixelCoord {
    k.normalized_to_pixel(p)
}

/// Depth-free correspondence under pure rotation: `q = R (x, y, 1)`, then
/// `(q1/q3, q2/q3)`. Returns `None` when the rotated ray points behind the camera.
pub fn rotational_warp(r: &Rotation, p: NormalizedCoord) -> Option<NormalizedCoord> {
    let q = r.0 * p.ray();
    if q.z <= MIN_RAY_DEPTH {
        return None;
    }
    Some(NormalizedCoord { x: q.x / q.z, y: q.y / q.z })
}

/// Derivative of `rotational_warp(R * exp(omega), p)` with respect to `omega`
/// at `R = I, omega = 0`.
pub fn warp_jacobian(p: NormalizedCoord) -> Matrix2x3<f64> {
    let (x, y) = (p.x, p.y);
    Matrix2x3::new(-x * y, 1.0 + x * x, -y, -(1.0 + y * y), x * y, x)
}

/// Rotation-only warp expressed directly between pixel grids:
/// `H = K_src R K_dst^-1`. The third component of `H (u, v, 1)` equals the ray
/// depth because both intrinsic matrices have `(0, 0, 1)` as their last row.
#[derive(Debug, Clone, Copy)]
pub struct PixelWarp {
    h: Matrix3<f64>,
}

impl PixelWarp {
    pub fn new(r: &Rotation, k_src: &Intrinsics, k_dst: &Intrinsics) -> Self {
        PixelWarp { h: k_src.matrix() * r.0 * k_dst.inverse_matrix() }
    }

    pub fn homography(&self) -> &Matrix3<f64> {
        &self.h
    }

    #[inline]
    pub fn apply(&self, u: f64, v: f64) -> Option<PixelCoord> {
        let h = &self.h;
        let z = h[(2, 0)] * u + h[(2, 1)] * v + h[(2, 2)];
        if z <= MIN_RAY_DEPTH {
            return None;
        }
        let x = h[(0, 0)] * u + h[(0, 1)] * v + h[(0, 2)];
        let y = h[(1, 0)] * u + h[(1, 1)] * v + h[(1, 2)];
        Some(PixelCoord { u: x / z, v: y / z })
    }

    /// Calls `f(col, source_coord)` for every destination pixel of a row.
    #[inline(always)]
    pub fn for_each_in_row(&self, row: usize, width: usize, mut f: impl FnMut(usize, Option<PixelCoord>)) {
        let h = &self.h;
        let v = row as f64;
        let (dx, dy, dz) = (h[(0, 0)], h[(1, 0)], h[(2, 0)]);
        let (x0, y0, z0) = (h[(0, 1)] * v + h[(0, 2)], h[(1, 1)] * v + h[(1, 2)], h[(2, 1)] * v + h[(2, 2)]);
        for col in 0..width {
            let u = col as f64;
            let z = dz * u + z0;
            if z <= MIN_RAY_DEPTH {
                f(col, None);
                continue;
            }
            let inv = 1.0 / z;
            f(col, Some(PixelCoord { u: (dx * u + x0) * inv, v: (dy * u + y0) * inv }));
        }
    }
}
