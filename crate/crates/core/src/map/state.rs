/// Fused occupancy of one cell: weighted mean of per-frame log-odds and the
/// (clamped) number of fused frames. Weight zero means never observed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OccupancyState {
    pub mean_log_odds: f64,
    pub weight: u32,
}

/// Parameters of the weighted-mean fusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    pub w_max: u32,
    /// Lower bound of accumulated log-odds (negative); its negation is the
    /// upper bound.
    pub l_min_total: f64,
}

impl FusionParams {
    /// `w_max = round(l_min_total / l_min_iter)`.
    pub fn from_bounds(l_min_iter: f64, l_min_total: f64) -> Self {
        FusionParams {
            w_max: (l_min_total / l_min_iter).round().max(1.0) as u32,
            l_min_total,
        }
    }
}

impl OccupancyState {
    pub const UNKNOWN: OccupancyState = OccupancyState {
        mean_log_odds: 0.0,
        weight: 0,
    };

    pub fn new(mean_log_odds: f64, weight: u32) -> Self {
        OccupancyState {
            mean_log_odds,
            weight,
        }
    }

    #[inline]
    pub fn observed(&self) -> bool {
        self.weight > 0
    }

    /// Accumulated log-odds `mean * weight`.
    #[inline]
    pub fn accumulated(&self) -> f64 {
        self.mean_log_odds * self.weight as f64
    }

    /// Fuses one per-frame log-odds value.
    ///
    /// The mean is kept such that the accumulated value stays inside
    /// `[l_min_total, -l_min_total]`; with `w_max` rounded up from the
    /// bound ratio the last step would otherwise overshoot it.
    #[inline]
    pub fn fuse(&self, l: f64, params: &FusionParams) -> OccupancyState {
        let w = self.weight as f64;
        let mut mean = (self.mean_log_odds * w + l) / (w + 1.0);
        let weight = (self.weight + 1).min(params.w_max);
        let acc = mean * weight as f64;
        if acc < params.l_min_total {
            mean = params.l_min_total / weight as f64;
        } else if acc > -params.l_min_total {
            mean = -params.l_min_total / weight as f64;
        }
        OccupancyState {
            mean_log_odds: mean,
            weight,
        }
    }

    /// Mean of the observed states; unknown when none is observed.
    pub fn mean_of<'a>(states: impl IntoIterator<Item = &'a OccupancyState>) -> OccupancyState {
        let (mut sum, mut wsum, mut n) = (0.0, 0u64, 0u64);
        for s in states.into_iter().filter(|s| s.observed()) {
            sum += s.mean_log_odds;
            wsum += s.weight as u64;
            n += 1;
        }
        if n == 0 {
            return OccupancyState::UNKNOWN;
        }
        OccupancyState {
            mean_log_odds: sum / n as f64,
            weight: ((2 * wsum + n) / (2 * n)).max(1) as u32,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: FusionParams = FusionParams {
        w_max: 20,
        l_min_total: -100.0,
    };

    #[test]
    fn fusion_reference_values() {
        let s = OccupancyState::UNKNOWN.fuse(-5.015, &P);
        assert_eq!(s, OccupancyState::new(-5.015, 1));
        let s = s.fuse(0.0, &P);
        assert!((s.mean_log_odds - -2.5075).abs() < 1e-15);
        assert_eq!(s.weight, 2);
    }

    #[test]
    fn w_max_from_default_bounds() {
        assert_eq!(FusionParams::from_bounds(-5.015, -100.0).w_max, 20);
    }

    #[test]
    fn fixed_point_after_saturation() {
        let mut s = OccupancyState::UNKNOWN;
        for _ in 0..25 {
            s = s.fuse(-2.0, &P);
        }
        assert_eq!(s.weight, 20);
        assert!((s.mean_log_odds + 2.0).abs() < 1e-12);

        let mut s = OccupancyState::UNKNOWN;
        for _ in 0..20 {
            s = s.fuse(-5.015, &P);
        }
        assert!((s.accumulated() + 100.0).abs() < 1e-9);
    }

    #[test]
    fn mean_of_observed_children() {
        let c = [
            OccupancyState::new(-4.0, 1),
            OccupancyState::new(-2.0, 1),
            OccupancyState::UNKNOWN,
        ];
        assert_eq!(OccupancyState::mean_of(&c), OccupancyState::new(-3.0, 1));
        assert_eq!(
            OccupancyState::mean_of(&[OccupancyState::UNKNOWN]),
            OccupancyState::UNKNOWN
        );
    }

    proptest! {
        #[test]
        fn mean_within_inputs_and_weight_bounded(ls in proptest::collection::vec(-5.015..2.5f64, 1..60)) {
            let mut s = OccupancyState::UNKNOWN;
            let lo = ls.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &l in &ls {
                s = s.fuse(l, &P);
                prop_assert!(s.weight <= P.w_max);
                prop_assert!(s.accumulated() >= P.l_min_total - 1e-9);
                prop_assert!(s.accumulated() <= -P.l_min_total + 1e-9);
            }
            prop_assert!(s.mean_log_odds >= lo - 1e-12 && s.mean_log_odds <= hi + 1e-12);
        }
    }
}
