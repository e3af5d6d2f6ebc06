//! Flat TOML configuration. Every key is optional; anything left out takes
//! the default for the chosen `preset` and `v_res`. Unknown keys are
//! rejected.
//!
//! ```toml
//! preset = "tum"        # or "qvga"
//! v_res = 0.02
//! map_size = 10.24
//! l_min_iter = -5.015
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::dataset::synthetic::Intrinsics;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::integrator::IntegrationConfig;
use crate::sensor::{NoiseKind, SensorSpec};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Option<String>,
    pub v_res: Option<f64>,
    /// Minimum map edge in meters.
    pub map_size: Option<f64>,
    /// Minimum map corner; centred on the world origin by default.
    pub map_origin: Option<[f64; 3]>,

    pub width: Option<usize>,
    pub height: Option<usize>,
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub z_np: Option<f64>,
    pub z_fp: Option<f64>,
    pub noise_kind: Option<NoiseKind>,
    pub noise_coeff: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub tau_coeff: Option<f64>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub l_min_iter: Option<f64>,
    pub l_min_total: Option<f64>,

    pub w_max: Option<u32>,
    pub epsilon: Option<f64>,
    pub s_f: Option<u8>,
    pub f_max: Option<u32>,
    pub hysteresis: Option<f64>,
    pub n_stable: Option<u32>,
    pub prune_fraction: Option<f64>,
    /// Image scale factor, 1.0 or 0.5.
    pub downsample: Option<f64>,
    /// Maximum depth-to-pose time offset for TUM association (s).
    pub association_tolerance: Option<f64>,
}

/// Fully resolved parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub v_res: f64,
    pub map_size: f64,
    pub map_origin: Vec3,
    pub spec: SensorSpec,
    pub integration: IntegrationConfig,
    pub association_tolerance: f64,
}

fn preset_intrinsics(name: &str) -> Result<Intrinsics> {
    match name {
        "tum" => Ok(Intrinsics {
            width: 640,
            height: 480,
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
        }),
        "qvga" => Ok(Intrinsics {
            width: 320,
            height: 240,
            fx: 262.5,
            fy: 262.5,
            cx: 159.5,
            cy: 119.5,
        }),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves defaults. Intrinsics come from explicit keys first, then
    /// `scene` (e.g. a synthetic scene's sensor line), then the preset.
    pub fn resolve(&self, scene: Option<Intrinsics>) -> Result<Settings> {
        let v_res = self.v_res.unwrap_or(0.02);
        if !(v_res > 0.0) {
            return Err(Error::Config("v_res must be positive".into()));
        }
        let base = match (&self.preset, scene) {
            (Some(p), _) => preset_intrinsics(p)?,
            (None, Some(k)) => k,
            (None, None) => preset_intrinsics("tum")?,
        };
        let mut spec = SensorSpec::with_defaults(
            self.width.unwrap_or(base.width),
            self.height.unwrap_or(base.height),
            self.fx.unwrap_or(base.fx),
            self.fy.unwrap_or(base.fy),
            self.cx.unwrap_or(base.cx),
            self.cy.unwrap_or(base.cy),
            v_res,
        );
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { spec.$f = v; } )* };
        }
        set!(z_np, z_fp, noise_kind, noise_coeff, sigma_min, sigma_max, tau_coeff, tau_min, tau_max, l_min_iter, l_min_total);
        spec.validate()?;

        let mut integration = IntegrationConfig::defaults_for(&spec, v_res);
        macro_rules! set_i {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { integration.$f = v; } )* };
        }
        set_i!(w_max, epsilon, s_f, f_max, hysteresis, n_stable, prune_fraction);
        integration.downsample = match self.downsample {
            None => false,
            Some(f) if f == 1.0 => false,
            Some(f) if f == 0.5 => true,
            Some(f) => return Err(Error::Config(format!("downsample must be 1 or 0.5, got {f}"))),
        };
        integration.validate()?;

        let map_size = self.map_size.unwrap_or(10.24);
        if !(map_size > 0.0) {
            return Err(Error::Config("map_size must be positive".into()));
        }
        let map_origin = self
            .map_origin
            .map(Vec3::from)
            .unwrap_or_else(|| Vec3::repeat(-0.5 * map_size));
        let association_tolerance = self
            .association_tolerance
            .unwrap_or(crate::dataset::tum::DEFAULT_TOLERANCE);
        Ok(Settings {
            v_res,
            map_size,
            map_origin,
            spec,
            integration,
            association_tolerance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_use_reference_values() {
        let s = Config::default().resolve(None).unwrap();
        assert_eq!(s.spec.width, 640);
        assert_eq!(s.spec.l_min_iter, -5.015);
        assert_eq!(s.spec.l_min_total, -100.0);
        assert_eq!((s.spec.z_np, s.spec.z_fp), (0.4, 6.0));
        assert_eq!((s.spec.sigma_min, s.spec.sigma_max), (0.02, 0.06));
        assert_eq!((s.spec.tau_min, s.spec.tau_max), (0.06, 0.24));
        assert_eq!(s.integration.f_max, 6);
        assert_eq!(s.integration.w_max, 20);
        let q = Config::parse("preset = \"qvga\"\nv_res = 0.01").unwrap().resolve(None).unwrap();
        assert_eq!(q.integration.f_max, 5);
        assert_eq!(q.spec.sigma_min, 0.01);
    }

    #[test]
    fn every_parameter_is_settable() {
        let text = r#"
            # all keys
            preset = "tum"
            v_res = 0.04
            map_size = 5.0
            map_origin = [0.0, 1.0, 2.0]
            width = 100
            height = 80
            fx = 90.0
            fy = 91.0
            cx = 49.5
            cy = 39.5
            z_np = 0.3
            z_fp = 5.0
            noise_kind = "linear"
            noise_coeff = 0.01
            sigma_min = 0.05
            sigma_max = 0.2
            tau_coeff = 0.1
            tau_min = 0.1
            tau_max = 0.5
            l_min_iter = -4.0
            l_min_total = -80.0
            w_max = 10
            epsilon = 0.3
            s_f = 2
            f_max = 4
            hysteresis = 0.5
            n_stable = 5
            prune_fraction = 0.9
            downsample = 0.5
            association_tolerance = 0.01
        "#;
        let s = Config::parse(text).unwrap().resolve(None).unwrap();
        assert_eq!(s.spec.noise_kind, NoiseKind::Linear);
        assert_eq!((s.spec.width, s.spec.fy, s.spec.tau_max), (100, 91.0, 0.5));
        assert_eq!((s.integration.w_max, s.integration.s_f, s.integration.n_stable), (10, 2, 5));
        assert!(s.integration.downsample);
        assert_eq!(s.map_origin, Vec3::new(0.0, 1.0, 2.0));
        assert_eq!(s.association_tolerance, 0.01);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("v_ress = 0.02").is_err());
        assert!(Config::parse("v_res = \"x\"").is_err());
        assert!(Config::parse("downsample = 0.3").unwrap().resolve(None).is_err());
        assert!(Config::parse("preset = \"vga2\"").unwrap().resolve(None).is_err());
        assert!(Config::parse("z_np = 7.0").unwrap().resolve(None).is_err());
    }

    #[test]
    fn scene_intrinsics_apply_without_preset() {
        let k = Intrinsics {
            width: 64,
            height: 48,
            fx: 50.0,
            fy: 50.0,
            cx: 31.5,
            cy: 23.5,
        };
        let s = Config::default().resolve(Some(k)).unwrap();
        assert_eq!(s.spec.width, 64);
        let s = Config::parse("preset = \"qvga\"").unwrap().resolve(Some(k)).unwrap();
        assert_eq!(s.spec.width, 320);
    }
}
