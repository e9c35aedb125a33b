//! First-order low-pass filter on SO(3) with a magnitude-dependent gain.
//!
//! The view moves along the geodesic towards the current orientation estimate
//! by a fraction `alpha(|omega|) = min(1, a + b |omega|)` of the remaining angle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, So3Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewFilterParams {
    /// Base gain (dimensionless).
    pub a: f64,
    /// Gain per radian of view error.
    pub b: f64,
    /// Inter-frame period in seconds.
    pub dt: f64,
}

impl ViewFilterParams {
    /// Default tuning for a frame period: `a = 2 dt`, `b = 40 dt`.
    pub fn from_dt(dt: f64) -> Self {
        ViewFilterParams { a: 2.0 * dt, b: 40.0 * dt, dt }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) {
            return Err(Error::InvalidArgument(format!("filter gains a={} b={} must be non-negative", self.a, self.b)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame period {} must be positive", self.dt)));
        }
        Ok(())
    }

    /// Effective gain, clamped to [0, 1].
    pub fn gain(&self, error_angle: f64) -> f64 {
        (self.a + self.b * error_angle).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewState {
    pub r_view: Rotation,
}

impl Default for ViewState {
    fn default() -> Self {
        ViewState { r_view: Rotation::identity() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewUpdate {
    /// Geodesic from the previous view to the estimate, `log(R_view^T R_0j)`.
    pub omega: So3Vector,
    pub gain: f64,
    /// The logarithm was undefined and the view jumped onto the estimate.
    pub snapped: bool,
}

impl ViewState {
    pub fn new(r_view: Rotation) -> Self {
        ViewState { r_view }
    }

    pub fn update(&mut self, r_0j: &Rotation, params: &ViewFilterParams) -> ViewUpdate {
        let stab = self.r_view.transpose() * *r_0j;
        match stab.log() {
            Ok(omega) => {
                let gain = params.gain(omega.norm());
                if omega.norm() > 0.0 {
                    self.r_view = if gain >= 1.0 { *r_0j } else { self.r_view.right_perturbed(&omega.scaled(gain)) };
                }
                ViewUpdate { omega, gain, snapped: false }
            }
            Err(_) => {
                log::warn!("view filter: near-antipodal error, snapping view to the estimate");
                self.r_view = *r_0j;
                ViewUpdate { omega: So3Vector::zeros(), gain: 1.0, snapped: true }
            }
        }
    }
}

/// Free-function form of [`ViewState::update`].
pub fn update_view(state: &mut ViewState, r_0j: &Rotation, params: &ViewFilterParams) -> ViewUpdate {
    state.update(r_0j, params)
}

/// Angular speed between consecutive views in degrees per second.
pub fn view_angular_velocity(prev: &Rotation, next: &Rotation, dt: f64) -> f64 {
    prev.geodesic_distance(next).to_degrees() / dt
}
