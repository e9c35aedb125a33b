//! Inverse-compositional Lucas-Kanade over SO(3).
//!
//! The template `I_k` is linearized once: Sobel gradients, the rotational warp
//! Jacobian and the 3x3 Gauss-Newton Hessian are precomputed in
//! [`Template::build`]. Each iteration then only resamples the current frame
//! `I_j`.
//!
//! The estimate is `R_{j,k}`, with `I_k(p) ~ I_j(R_{j,k} p)`. A step solves
//! `omega = H^-1 sum_i J_i (I_k(p_i) - I_j(R p_i))` and updates
//! `R <- R exp(beta * omega)`, with `beta` halved until the mean squared error
//! strictly decreases.

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_jacobian, Intrinsics, PixelCoord, PixelWarp, Rotation, So3Vector};
use crate::imgproc::{bilinear_weights, sobel_gradients, Frame};

/// Templates whose Hessian condition number exceeds this are rejected.
pub const MAX_HESSIAN_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub max_iterations: usize,
    /// Radians; iteration stops once a step is shorter than this.
    pub step_tolerance: f64,
    pub max_line_search_halvings: usize,
    /// Fraction of template pixels that must sample inside the current frame.
    pub min_valid_fraction: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            max_iterations: 20,
            step_tolerance: 1e-5,
            max_line_search_halvings: 8,
            min_valid_fraction: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.step_tolerance > 0.0) {
            return Err(Error::InvalidArgument("step_tolerance must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(Error::InvalidArgument("min_valid_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// `R_{j,k}`: maps template pixels into the current frame.
    pub rotation: Rotation,
    /// Mean squared intensity error at `rotation`.
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss at the initial estimate followed by the loss of every accepted step.
    pub loss_history: Vec<f64>,
}

/// Precomputed linearization of a template frame.
#[derive(Debug, Clone)]
pub struct Template {
    image: Frame,
    intrinsics: Intrinsics,
    /// Steepest-descent rows `J_i = grad I(p_i) * d(pixel)/d(normalized) * dW/domega`.
    steepest_descent: Vec<[f64; 3]>,
    hessian: Matrix3<f64>,
    cholesky: Cholesky<f64, nalgebra::U3>,
    condition: f64,
    valid_pixels: Vec<usize>,
}

/// Residual statistics of the template against a frame at a given rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// `sum_i J_i r_i` over validly sampled pixels.
    pub gradient: Vector3<f64>,
    pub valid: usize,
}

impl Template {
    /// Linearizes a gray frame. Fails with a degenerate-template error when the
    /// Hessian is singular or its condition number exceeds [`MAX_HESSIAN_CONDITION`].
    pub fn build(image: &Frame, intrinsics: &Intrinsics) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::InvalidArgument("template must be a gray frame".into()));
        }
        if image.width() != intrinsics.width as usize || image.height() != intrinsics.height as usize {
            return Err(Error::ShapeMismatch(format!(
                "template {}x{} vs intrinsics {}x{}",
                image.width(),
                image.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        let (w, h) = (image.width(), image.height());
        let grad = sobel_gradients(image);
        let mut steepest_descent = Vec::with_capacity(w * h);
        let mut valid_pixels = Vec::new();
        let mut hsum = [0.0f64; 6];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let p = intrinsics.pixel_to_normalized(PixelCoord::new(x as f64, y as f64));
                let jw = warp_jacobian(p);
                let gu = grad.gx[i] * intrinsics.fx;
                let gv = grad.gy[i] * intrinsics.fy;
                let j = [
                    gu * jw[(0, 0)] + gv * jw[(1, 0)],
                    gu * jw[(0, 1)] + gv * jw[(1, 1)],
                    gu * jw[(0, 2)] + gv * jw[(1, 2)],
                ];
                if gu != 0.0 || gv != 0.0 {
                    valid_pixels.push(i);
                }
                hsum[0] += j[0] * j[0];
                hsum[1] += j[0] * j[1];
                hsum[2] += j[0] * j[2];
                hsum[3] += j[1] * j[1];
                hsum[4] += j[1] * j[2];
                hsum[5] += j[2] * j[2];
                steepest_descent.push(j);
            }
        }
        let hessian = Matrix3::new(
            hsum[0], hsum[1], hsum[2], //
            hsum[1], hsum[3], hsum[4], //
            hsum[2], hsum[4], hsum[5],
        );
        let eig = SymmetricEigen::new(hessian);
        let max_eig = eig.eigenvalues.max();
        let min_eig = eig.eigenvalues.min();
        if !(max_eig > 0.0) || !(min_eig > 0.0) {
            return Err(Error::DegenerateTemplate(format!("Hessian eigenvalues in [{min_eig:.3e}, {max_eig:.3e}]")));
        }
        let condition = max_eig / min_eig;
        if condition > MAX_HESSIAN_CONDITION {
            return Err(Error::DegenerateTemplate(format!("Hessian condition number {condition:.3e}")));
        }
        let cholesky = Cholesky::new(hessian)
            .ok_or_else(|| Error::DegenerateTemplate("Hessian is not positive definite".into()))?;
        Ok(Template {
            image: image.clone(),
            intrinsics: *intrinsics,
            steepest_descent,
            hessian,
            cholesky,
            condition,
            valid_pixels,
        })
    }

    pub fn image(&self) -> &Frame {
        &self.image
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn hessian(&self) -> &Matrix3<f64> {
        &self.hessian
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn steepest_descent(&self) -> &[[f64; 3]] {
        &self.steepest_descent
    }

    /// Pixel indices with non-zero gradient.
    pub fn valid_pixels(&self) -> &[usize] {
        &self.valid_pixels
    }

    pub fn pixel_count(&self) -> usize {
        self.steepest_descent.len()
    }

    /// Mean squared residual and `sum J r` of the template against `frame`
    /// resampled at `rotation`.
    pub fn evaluate(&self, frame: &Frame, rotation: &Rotation) -> Result<Evaluation> {
        if frame.channels() != 1 || frame.width() != self.image.width() || frame.height() != self.image.height() {
            return Err(Error::ShapeMismatch(format!(
                "frame {}x{}x{} does not match template {}x{}x1",
                frame.width(),
                frame.height(),
                frame.channels(),
                self.image.width(),
                self.image.height()
            )));
        }
        let (w, h) = (self.image.width(), self.image.height());
        let warp = PixelWarp::new(rotation, &self.intrinsics, &self.intrinsics);
        let tpl = self.image.data();
        let cur = frame.data();
        let mut sse = 0.0f64;
        let mut g = [0.0f64; 3];
        let mut valid = 0usize;
        for row in 0..h {
            warp.for_each_in_row(row, w, |col, px| {
                let Some(px) = px else { return };
                let Some((x0, y0, ax, ay)) = bilinear_weights(w, h, px.u, px.v) else { return };
                let base = y0 * w + x0;
                let q = &cur[base..base + w + 2];
                let (ax, ay) = (ax as f64, ay as f64);
                let (p00, p01, p10, p11) = (q[0] as f64, q[1] as f64, q[w] as f64, q[w + 1] as f64);
                let top = p00 + ax * (p01 - p00);
                let bottom = p10 + ax * (p11 - p10);
                let i = row * w + col;
                let r = tpl[i] as f64 - (top + ay * (bottom - top));
                sse += r * r;
                let j = &self.steepest_descent[i];
                g[0] += j[0] * r;
                g[1] += j[1] * r;
                g[2] += j[2] * r;
                valid += 1;
            });
        }
        Ok(Evaluation {
            loss: if valid > 0 { sse / valid as f64 } else { 0.0 },
            gradient: Vector3::new(g[0], g[1], g[2]),
            valid,
        })
    }

    fn check_overlap(&self, eval: &Evaluation, min_valid_fraction: f64) -> Result<()> {
        let total = self.pixel_count();
        if eval.valid == 0 || (eval.valid as f64) < min_valid_fraction * total as f64 {
            return Err(Error::InsufficientOverlap { valid: eval.valid, total });
        }
        Ok(())
    }

    /// Solves the fixed-Hessian normal equations for a gradient sum.
    pub fn solve(&self, gradient: &Vector3<f64>) -> So3Vector {
        So3Vector(self.cholesky.solve(gradient))
    }

    /// One Gauss-Newton step from `current`; returns the increment and the loss at `current`.
    pub fn gauss_newton_step(
        &self,
        frame: &Frame,
        current: &Rotation,
        min_valid_fraction: f64,
    ) -> Result<(So3Vector, f64)> {
        let eval = self.evaluate(frame, current)?;
        self.check_overlap(&eval, min_valid_fraction)?;
        Ok((self.solve(&eval.gradient), eval.loss))
    }

    /// Iterates Gauss-Newton steps with a halving line search.
    pub fn track(&self, frame: &Frame, init: &Rotation, cfg: &TrackerConfig) -> Result<TrackResult> {
        cfg.validate()?;
        let mut rotation = *init;
        let mut eval = self.evaluate(frame, &rotation)?;
        self.check_overlap(&eval, cfg.min_valid_fraction)?;
        let mut history = vec![eval.loss];
        let mut iterations = 0;
        let mut converged = false;

        while iterations < cfg.max_iterations {
            iterations += 1;
            let step = self.solve(&eval.gradient);
            if !step.is_finite() {
                break;
            }
            if step.norm() < cfg.step_tolerance {
                converged = true;
                break;
            }
            let mut accepted = None;
            let mut beta = 1.0;
            for _ in 0..=cfg.max_line_search_halvings {
                // a scaled step below tolerance could not move the estimate meaningfully
                if beta * step.norm() < cfg.step_tolerance {
                    break;
                }
                let candidate = rotation.right_perturbed(&step.scaled(beta));
                if let Ok(next) = self.evaluate(frame, &candidate) {
                    if self.check_overlap(&next, cfg.min_valid_fraction).is_ok() && next.loss < eval.loss {
                        accepted = Some((candidate, next, beta));
                        break;
                    }
                }
                beta *= 0.5;
            }
            let Some((candidate, next, beta)) = accepted else {
                // no descent along the step: current estimate is a local minimum
                converged = true;
                break;
            };
            rotation = candidate;
            eval = next;
            history.push(eval.loss);
            if step.norm() * beta < cfg.step_tolerance {
                converged = true;
                break;
            }
        }

        Ok(TrackResult { rotation, final_loss: eval.loss, iterations, converged, loss_history: history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotational_warp, So3Vector};
    use crate::imgproc::warp_frame;
    use nalgebra::Matrix3;

    fn bilinear_f64(f: &Frame, q: PixelCoord) -> Option<f64> {
        let (w, h) = (f.width() as f64, f.height() as f64);
        if q.u < 0.0 || q.v < 0.0 || q.u > w - 1.0 || q.v > h - 1.0 {
            return None;
        }
        let (x0, y0) = (q.u.floor(), q.v.floor());
        let (x1, y1) = ((x0 + 1.0).min(w - 1.0), (y0 + 1.0).min(h - 1.0));
        let (ax, ay) = (q.u - x0, q.v - y0);
        let at = |x: f64, y: f64| f.get(x as usize, y as usize, 0) as f64;
        let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
        let bottom = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
        Some(top * (1.0 - ay) + bottom * ay)
    }

    fn textured(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, 1, |x, y, _| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.18 * (0.13 * x + 0.02 * y).sin()
                + 0.12 * (0.09 * y - 0.05 * x).cos()
                + 0.1 * (0.031 * x).sin() * (0.043 * y).cos()
        })
        .unwrap()
    }

    fn camera(w: u32, h: u32) -> Intrinsics {
        Intrinsics::from_hfov(w, h, 60f64.to_radians()).unwrap()
    }

    #[test]
    fn constant_image_is_degenerate() {
        let f = Frame::filled(64, 48, 1, 0.4).unwrap();
        let err = Template::build(&f, &camera(64, 48)).unwrap_err();
        assert!(matches!(err, Error::DegenerateTemplate(_)));
    }

    #[test]
    fn ramp_hessian_matches_direct_accumulation() {
        let (w, h) = (64usize, 48usize);
        let k = camera(w as u32, h as u32);
        let ramp = Frame::from_fn(w, h, 1, |x, _, _| 0.1 + 0.8 * x as f32 / w as f32).unwrap();
        let g = sobel_gradients(&ramp);
        let mut oracle = Matrix3::zeros();
        for y in 0..h {
            for x in 0..w {
                let p = k.pixel_to_normalized(PixelCoord::new(x as f64, y as f64));
                let jw = warp_jacobian(p);
                let grad = nalgebra::RowVector2::new(g.gx[y * w + x] * k.fx, g.gy[y * w + x] * k.fy);
                let j = (grad * jw).transpose();
                oracle += j * j.transpose();
            }
        }
        let eig = SymmetricEigen::new(oracle);
        let cond = eig.eigenvalues.max() / eig.eigenvalues.min().max(0.0);
        match Template::build(&ramp, &k) {
            Ok(t) => {
                assert!(cond <= MAX_HESSIAN_CONDITION);
                assert!((t.hessian() - oracle).norm() <= 1e-9 * oracle.norm());
            }
            Err(Error::DegenerateTemplate(_)) => assert!(!(cond <= MAX_HESSIAN_CONDITION)),
            Err(e) => panic!("unexpected error {e}"),
        }
        // gy = 0 everywhere, so the pitch direction is weakly observed
        assert!(oracle[(0, 0)] < oracle[(1, 1)]);
    }

    #[test]
    fn textured_hessian_is_positive_definite() {
        let f = textured(80, 60);
        let t = Template::build(&f, &camera(80, 60)).unwrap();
        let eig = SymmetricEigen::new(*t.hessian());
        assert!(eig.eigenvalues.min() > 0.0);
        assert!((t.hessian() - t.hessian().transpose()).abs().max() == 0.0);
    }

    #[test]
    fn perfect_alignment_gives_zero_step() {
        let f = textured(80, 60);
        let t = Template::build(&f, &camera(80, 60)).unwrap();
        let (omega, loss) = t.gauss_newton_step(&f, &Rotation::identity(), 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(omega.norm(), 0.0);
    }

    #[test]
    fn step_matches_brute_force_normal_equations() {
        let (w, h) = (48usize, 36usize);
        let k = camera(w as u32, h as u32);
        let tpl = textured(w, h);
        let truth = So3Vector::new(0.004, -0.006, 0.01).exp();
        let (cur, _) = warp_frame(&tpl, &truth.transpose(), &k, &k);
        let t = Template::build(&tpl, &k).unwrap();
        let r0 = So3Vector::new(0.001, 0.0, 0.002).exp();

        let grad = sobel_gradients(&tpl);
        let mut hess = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for y in 0..h {
            for x in 0..w {
                let p = k.pixel_to_normalized(PixelCoord::new(x as f64, y as f64));
                let g = nalgebra::RowVector2::new(grad.gx[y * w + x] * k.fx, grad.gy[y * w + x] * k.fy);
                let j = (g * warp_jacobian(p)).transpose();
                hess += j * j.transpose();
                let q = k.normalized_to_pixel(rotational_warp(&r0, p).unwrap());
                if let Some(v) = bilinear_f64(&cur, q) {
                    b += j * (tpl.get(x, y, 0) as f64 - v);
                }
            }
        }
        let expected = hess.try_inverse().unwrap() * b;
        let (omega, _) = t.gauss_newton_step(&cur, &r0, 0.1).unwrap();
        // bilinear weights are f32, which bounds the agreement
        assert!((omega.0 - expected).norm() <= 1e-6 * expected.norm(), "{omega:?} vs {expected}");
    }

    fn pattern(u: f64, v: f64) -> f32 {
        (0.5 + 0.18 * (0.13 * u + 0.02 * v).sin() + 0.12 * (0.09 * v - 0.05 * u).cos()
            + 0.1 * (0.031 * u).sin() * (0.043 * v).cos()) as f32
    }

    #[test]
    fn single_step_moves_toward_truth() {
        let (w, h) = (120usize, 90usize);
        let k = camera(w as u32, h as u32);
        let tpl = Frame::from_fn(w, h, 1, |x, y, _| pattern(x as f64, y as f64)).unwrap();
        let truth = So3Vector::new(0.003, 0.01, -0.004).exp();
        // I_j(truth p) = I_k(p), rendered from the continuous pattern
        let cur = Frame::from_fn(w, h, 1, |x, y, _| {
            let p = k.pixel_to_normalized(PixelCoord::new(x as f64, y as f64));
            let q = k.normalized_to_pixel(rotational_warp(&truth.transpose(), p).unwrap());
            pattern(q.u, q.v)
        })
        .unwrap();
        let t = Template::build(&tpl, &k).unwrap();
        let (omega, loss0) = t.gauss_newton_step(&cur, &Rotation::identity(), 0.3).unwrap();
        let next = Rotation::identity().right_perturbed(&omega);
        assert!(next.geodesic_distance(&truth) < 0.5 * truth.angle());
        let loss1 = t.evaluate(&cur, &next).unwrap().loss;
        assert!(loss1 < loss0);
    }

    #[test]
    fn identical_frames_converge_in_one_iteration() {
        let f = textured(80, 60);
        let t = Template::build(&f, &camera(80, 60)).unwrap();
        let res = t.track(&f, &Rotation::identity(), &TrackerConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.rotation, Rotation::identity());
    }

    #[test]
    fn insufficient_overlap_is_reported() {
        let f = textured(80, 60);
        let t = Template::build(&f, &camera(80, 60)).unwrap();
        let far = Rotation::ry(0.6);
        let err = t.gauss_newton_step(&f, &far, 0.5).unwrap_err();
        assert!(matches!(err, Error::InsufficientOverlap { .. }));
        assert!(t.track(&f, &far, &TrackerConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = TrackerConfig { max_iterations: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrackerConfig { step_tolerance: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
