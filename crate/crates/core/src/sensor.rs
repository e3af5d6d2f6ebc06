//! Pinhole depth sensor: projection, depth-dependent noise and surface
//! thickness, and the piecewise-linear inverse sensor model in log-odds.
//!
//! The signed distance `d_r = r - z` is measured along the camera z axis:
//! `r` is the z-depth of the query point and `z` the measured z-depth of the
//! pixel it projects to. Negative values lie in front of the surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Linear,
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Near plane (m).
    pub z_np: f64,
    /// Far plane (m).
    pub z_fp: f64,
    pub noise_kind: NoiseKind,
    pub noise_coeff: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub tau_coeff: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Per-update free-space log-odds (negative).
    pub l_min_iter: f64,
    /// Bound on accumulated log-odds (negative).
    pub l_min_total: f64,
}

/// A world point seen through the camera: continuous pixel coordinates and
/// its camera-frame z-depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Nearest pixel (column, row).
    pub fn pixel(&self) -> (usize, usize) {
        // In-image positions satisfy u, v >= -0.5, so truncation is floor.
        ((self.u + 0.5) as usize, (self.v + 0.5) as usize)
    }
}

/// The inverse sensor model for one measured depth with its parameters
/// resolved. An invalid measurement never yields an update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelModel {
    pub z: f64,
    free_below: f64,
    cutoff: f64,
    slope: f64,
}

impl PixelModel {
    const INVALID: PixelModel = PixelModel {
        z: f64::NAN,
        free_below: f64::NAN,
        cutoff: f64::NAN,
        slope: f64::NAN,
    };

    /// Same value as `SensorSpec::inverse_model(d_r, z)`.
    #[inline]
    pub fn log_odds(&self, d_r: f64, l_min_iter: f64) -> Option<f64> {
        if d_r <= self.free_below {
            Some(l_min_iter)
        } else if d_r <= self.cutoff {
            Some(self.slope * d_r)
        } else {
            None
        }
    }
}

/// Conservative bounds of the inverse sensor model over a rectangle of
/// query depths and measured depths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpan {
    pub l_low: f64,
    pub l_high: f64,
    /// Some point of the rectangle lies behind the thick surface.
    pub any_no_update: bool,
    /// Every point of the rectangle lies behind the thick surface.
    pub fully_behind: bool,
}

impl SensorSpec {
    /// Pinhole sensor with the default parameter set scaled to `v_res`:
    /// quadratic noise `0.0025 z^2`, thickness `0.05 z`, sigma in
    /// `[v_res, 3 v_res]`, tau in `[3 v_res, 12 v_res]`, range 0.4..6 m,
    /// log-odds bounds -5.015 per update and -100 accumulated.
    #[allow(clippy::too_many_arguments)]
    pub fn with_defaults(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        v_res: f64,
    ) -> Self {
        SensorSpec {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            z_np: 0.4,
            z_fp: 6.0,
            noise_kind: NoiseKind::Quadratic,
            noise_coeff: 0.0025,
            sigma_min: v_res,
            sigma_max: 3.0 * v_res,
            tau_coeff: 0.05,
            tau_min: 3.0 * v_res,
            tau_max: 12.0 * v_res,
            l_min_iter: -5.015,
            l_min_total: -100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(0.0 < self.z_np && self.z_np < self.z_fp) {
            return bad("need 0 < z_np < z_fp");
        }
        if !(0.0 < self.sigma_min && self.sigma_min <= self.sigma_max) {
            return bad("need 0 < sigma_min <= sigma_max");
        }
        if !(0.0 <= self.tau_min && self.tau_min <= self.tau_max) {
            return bad("need 0 <= tau_min <= tau_max");
        }
        if !(self.l_min_iter < 0.0) {
            return bad("l_min_iter must be negative");
        }
        if !(self.l_min_total < self.l_min_iter) {
            return bad("need l_min_total < l_min_iter");
        }
        Ok(())
    }

    /// Intrinsics for an image reduced by a factor of two.
    pub fn halved(&self) -> Self {
        SensorSpec {
            width: self.width / 2,
            height: self.height / 2,
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx + 0.5) * 0.5 - 0.5,
            cy: (self.cy + 0.5) * 0.5 - 0.5,
            ..self.clone()
        }
    }

    /// Mean focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn is_valid_depth(&self, z: f64) -> bool {
        z.is_finite() && z >= self.z_np && z <= self.z_fp
    }

    /// Is the continuous pixel position inside the image (nearest-pixel
    /// rounding lands on a real pixel)?
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && u < self.width as f64 - 0.5 && v >= -0.5 && v < self.height as f64 - 0.5
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, pc: &Vec3) -> Option<Projection> {
        if pc.z < self.z_np || pc.z > self.z_fp {
            return None;
        }
        let u = self.cx + self.fx * pc.x / pc.z;
        let v = self.cy + self.fy * pc.y / pc.z;
        self.in_image(u, v).then_some(Projection { u, v, depth: pc.z })
    }

    /// Projects a world point through the camera at `pose`.
    pub fn project(&self, pose: &Pose, p: &Vec3) -> Option<Projection> {
        self.project_camera(&pose.inverse_transform_point(p))
    }

    /// Camera-frame ray through pixel (u, v) with unit z component.
    pub fn back_project(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Depth noise standard deviation, clamped.
    pub fn sigma(&self, z: f64) -> f64 {
        let raw = match self.noise_kind {
            NoiseKind::Linear => self.noise_coeff * z,
            NoiseKind::Quadratic => self.noise_coeff * z * z,
        };
        raw.clamp(self.sigma_min, self.sigma_max)
    }

    /// Surface thickness, clamped.
    pub fn tau(&self, z: f64) -> f64 {
        (self.tau_coeff * z).clamp(self.tau_min, self.tau_max)
    }

    fn slope(&self, z: f64) -> f64 {
        -self.l_min_iter / (3.0 * self.sigma(z))
    }

    /// Extended ramp `max(l_min, slope(z) * d)`, defined for every `d`.
    fn ramp(&self, d: f64, z: f64) -> f64 {
        (self.slope(z) * d).max(self.l_min_iter)
    }

    /// Per-measurement log-odds at signed distance `d_r` from a surface
    /// measured at depth `z`; `None` behind the thick surface.
    pub fn inverse_model(&self, d_r: f64, z: f64) -> Option<f64> {
        let sigma = self.sigma(z);
        if d_r <= -3.0 * sigma {
            Some(self.l_min_iter)
        } else if d_r <= 0.5 * self.tau(z) {
            Some(self.slope(z) * d_r)
        } else {
            None
        }
    }

    /// Model for a measured depth; invalid depths give a model that never
    /// updates.
    pub fn pixel_model(&self, z: f64) -> PixelModel {
        if !self.is_valid_depth(z) {
            return PixelModel::INVALID;
        }
        PixelModel {
            z,
            free_below: -3.0 * self.sigma(z),
            cutoff: 0.5 * self.tau(z),
            slope: self.slope(z),
        }
    }

    /// Largest single-update log-odds for a measurement at `z`.
    pub fn ramp_max(&self, z: f64) -> f64 {
        self.slope(z) * 0.5 * self.tau(z)
    }

    /// Bounds of `inverse_model(r - z, z)` for `r` in `[r_min, r_max]` and
    /// `z` in `[z_min, z_max]`.
    ///
    /// The model is non-decreasing in `d_r`, sigma and tau are
    /// non-decreasing in `z`, so the extremes come from the extreme
    /// distances combined with the worst slope at either end of the span.
    pub fn model_span(&self, r_min: f64, r_max: f64, z_min: f64, z_max: f64) -> ModelSpan {
        let d_min = r_min - z_max;
        let d_max = r_max - z_min;

        // Defined points satisfy d <= tau(z)/2 <= tau(z_max)/2.
        let d_cap = d_max.min(0.5 * self.tau(z_max));
        let l_high = if d_cap >= 0.0 {
            self.ramp(d_cap, z_min)
        } else {
            self.ramp(d_cap, z_max)
        };
        let l_low = if d_min >= 0.0 {
            self.ramp(d_min, z_max)
        } else {
            self.ramp(d_min, z_min)
        };

        // r - z - tau(z)/2 is decreasing in z.
        let any_no_update = r_max - z_min - 0.5 * self.tau(z_min) > 0.0;
        let fully_behind = r_min - z_max - 0.5 * self.tau(z_max) > 0.0;
        ModelSpan {
            l_low: l_low.min(l_high),
            l_high,
            any_no_update,
            fully_behind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> SensorSpec {
        SensorSpec::with_defaults(320, 240, 300.0, 300.0, 160.0, 120.0, 0.01)
    }

    #[test]
    fn project_on_axis_and_off_axis() {
        let s = spec();
        let p = s.project(&Pose::identity(), &Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (160.0, 120.0, 2.0));
        let p = s.project(&Pose::identity(), &Vec3::new(0.5, 0.0, 2.0)).unwrap();
        assert_eq!(p.u, 235.0);
        assert!(s.project(&Pose::identity(), &Vec3::new(0.0, 0.0, -2.0)).is_none());
        assert!(s.project(&Pose::identity(), &Vec3::new(0.0, 0.0, 0.1)).is_none());
        assert!(s.project(&Pose::identity(), &Vec3::new(5.0, 0.0, 2.0)).is_none());
    }

    #[test]
    fn sigma_tau_reference_values() {
        let mut s = spec();
        s.sigma_max = 0.03;
        assert!((s.sigma(2.0) - 0.01).abs() < 1e-15);
        assert_eq!(s.sigma(1e6), 0.03);
        assert_eq!(s.sigma(0.1), 0.01);
        assert!((s.tau(1.0) - 0.05).abs() < 1e-15);
        assert_eq!(s.tau(0.1), s.tau_min);
        assert_eq!(s.tau(100.0), s.tau_max);
    }

    #[test]
    fn inverse_model_reference_values() {
        let s = spec();
        let z = 2.0; // sigma = 0.01, tau = 0.1
        assert_eq!(s.inverse_model(0.0, z), Some(0.0));
        assert_eq!(s.inverse_model(-0.1, z), Some(-5.015));
        assert_eq!(s.inverse_model(-0.03, z), Some(-5.015));
        let l = s.inverse_model(0.015, z).unwrap();
        assert!((l - 2.5075).abs() < 1e-12);
        assert_eq!(s.inverse_model(0.0501, z), None);
    }

    #[test]
    fn model_span_cases() {
        let s = spec();
        // Fully free: r_max below z_min - 3 sigma.
        let m = s.model_span(1.0, 1.5, 2.0, 2.2);
        assert_eq!((m.l_low, m.l_high, m.any_no_update), (-5.015, -5.015, false));
        // Fully behind.
        let m = s.model_span(3.0, 3.2, 2.0, 2.1);
        assert!(m.any_no_update && m.fully_behind);
        // Straddling: wide span.
        let m = s.model_span(1.9, 2.05, 2.0, 2.0);
        assert!(m.l_high - m.l_low > -s.l_min_iter);
    }

    proptest! {
        #[test]
        fn inverse_model_monotone(z in 0.4..6.0f64, a in -0.5..0.5f64, b in -0.5..0.5f64) {
            let s = spec();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if let (Some(x), Some(y)) = (s.inverse_model(lo, z), s.inverse_model(hi, z)) {
                prop_assert!(x <= y);
            }
        }

        #[test]
        fn anchors_and_clamps(z in 0.4..6.0f64) {
            let s = spec();
            let sg = s.sigma(z);
            prop_assert_eq!(s.inverse_model(-3.0 * sg, z), Some(s.l_min_iter));
            prop_assert_eq!(s.inverse_model(0.0, z), Some(0.0));
            prop_assert!(sg >= s.sigma_min && sg <= s.sigma_max);
            let t = s.tau(z);
            prop_assert!(t >= s.tau_min && t <= s.tau_max);
        }

        #[test]
        fn model_span_is_sound(
            r0 in 0.4..6.0f64, dr in 0.0..0.3f64,
            z0 in 0.4..6.0f64, dz in 0.0..0.3f64,
        ) {
            let s = spec();
            let span = s.model_span(r0, r0 + dr, z0, z0 + dz);
            let mut any_none = false;
            for i in 0..=30 {
                for j in 0..=30 {
                    let r = r0 + dr * i as f64 / 30.0;
                    let z = z0 + dz * j as f64 / 30.0;
                    match s.inverse_model(r - z, z) {
                        Some(l) => {
                            prop_assert!(l >= span.l_low - 1e-12 && l <= span.l_high + 1e-12);
                            prop_assert!(!span.fully_behind);
                        }
                        None => any_none = true,
                    }
                }
            }
            if any_none {
                prop_assert!(span.any_no_update);
            }
        }
    }
}
