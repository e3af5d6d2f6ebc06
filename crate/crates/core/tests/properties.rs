use aomap::depth::DepthImage;
use aomap::geometry::Vec3;
use aomap::integrator::{select_block_scale, IntegrationConfig};
use aomap::pooling::PoolingPyramid;
use aomap::sensor::SensorSpec;
use proptest::prelude::*;

fn spec() -> SensorSpec {
    SensorSpec::with_defaults(640, 480, 525.0, 525.0, 319.5, 239.5, 0.02)
}

fn depth_image() -> impl Strategy<Value = DepthImage> {
    (4usize..40, 4usize..40).prop_flat_map(|(w, h)| {
        proptest::collection::vec(prop_oneof![4 => 0.5..5.0f64, 1 => Just(0.0), 1 => Just(f64::NAN)], w * h)
            .prop_map(move |data| DepthImage::new(w, h, data))
    })
}

proptest! {
    #[test]
    fn pixel_model_matches_inverse_model(z in 0.0..7.0f64, d in -1.0..1.0f64) {
        let s = spec();
        let m = s.pixel_model(z);
        let want = if s.is_valid_depth(z) { s.inverse_model(d, z) } else { None };
        prop_assert_eq!(m.log_odds(d, s.l_min_iter), want);
    }

    #[test]
    fn span_query_covers_every_pixel_in_the_box(
        img in depth_image(),
        a in (0i64..40, 0i64..40),
        b in (0i64..40, 0i64..40),
    ) {
        let (u0, u1) = (a.0.min(b.0), a.0.max(b.0));
        let (v0, v1) = (a.1.min(b.1), a.1.max(b.1));
        let pyr = PoolingPyramid::build(&img, 4, 0.4, 6.0).unwrap();
        let Some(q) = pyr.query_box(u0, v0, u1, v1) else {
            prop_assert!(u0 >= img.width as i64 || v0 >= img.height as i64);
            return Ok(());
        };
        let mut any_invalid = false;
        for v in v0..=v1.min(img.height as i64 - 1) {
            for u in u0..=u1.min(img.width as i64 - 1) {
                let z = img.get(u as usize, v as usize);
                if (0.4..=6.0).contains(&z) {
                    prop_assert!(q.record.z_min <= z && z <= q.record.z_max);
                } else {
                    any_invalid = true;
                }
            }
        }
        prop_assert!(!any_invalid || q.record.contains_invalid);
        let side = (u1.min(img.width as i64 - 1) - u0 + 1).min(v1.min(img.height as i64 - 1) - v0 + 1);
        let long = (u1.min(img.width as i64 - 1) - u0 + 1).max(v1.min(img.height as i64 - 1) - v0 + 1);
        if side == long && side < (1 << 5) + 1 {
            prop_assert!(q.queries <= 4, "{} queries for side {}", q.queries, side);
        }
    }

    #[test]
    fn scale_choice_respects_hysteresis(dist in 0.1..12.0f64, current in 0u8..4, frontier: bool) {
        let s = spec();
        let cfg = IntegrationConfig::defaults_for(&s, 0.02);
        let camera = Vec3::zeros();
        let center = Vec3::new(dist, 0.0, 0.0);
        let unit = s.focal() * 0.02;
        let fresh = select_block_scale(&center, &camera, None, false, &s, &cfg, 0.02);
        let kept = select_block_scale(&center, &camera, Some(current), false, &s, &cfg, 0.02);
        prop_assert!(fresh <= 3);
        // A move away from the current scale needs the full margin past
        // the boundary it crosses.
        if kept > current {
            prop_assert!(dist >= unit * f64::from(1u32 << (current + 1)) + cfg.hysteresis * unit);
        } else if kept < current {
            prop_assert!(dist <= unit * f64::from(1u32 << current) - cfg.hysteresis * unit);
        }
        prop_assert!(kept == current || kept == fresh);
        let f = select_block_scale(&center, &camera, Some(current), frontier, &s, &cfg, 0.02);
        prop_assert!(!frontier || f >= cfg.s_f);
    }

    #[test]
    fn fresh_scale_is_monotone_in_distance(a in 0.1..12.0f64, b in 0.1..12.0f64) {
        let s = spec();
        let cfg = IntegrationConfig::defaults_for(&s, 0.02);
        let pick = |d: f64| select_block_scale(&Vec3::new(0.0, 0.0, d), &Vec3::zeros(), None, false, &s, &cfg, 0.02);
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pick(near) <= pick(far));
    }
}
