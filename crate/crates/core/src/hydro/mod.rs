//! Units, the stage-storage curve and the calibrated reward components.
//!
//! Levels are metres above datum, storages are billion cubic metres (BCM) and
//! discharges are cumecs held constant over one simulated day.

mod params;

pub use params::{MonthDay, MonthRange, SimParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds in one simulated day.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Cubic metres in one BCM.
const CUBIC_METRES_PER_BCM: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HydroError {
    #[error("water level {level} m is outside the curve domain [{min}, {max}]")]
    LevelOutOfDomain { level: f64, min: f64, max: f64 },
    #[error("storage {0} BCM is negative")]
    NegativeStorage(f64),
    #[error("storage {storage} BCM exceeds the curve maximum {max}")]
    StorageOutOfDomain { storage: f64, max: f64 },
    #[error("flood damage needs a positive level, got {0}")]
    NonPositiveLevel(f64),
    #[error("discharge {0} cumecs is negative")]
    NegativeDischarge(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid simulator parameter: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, HydroError>;

/// Reservoir water level in metres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WaterLevel(pub f64);

/// Stored water volume in BCM.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StorageVolume(pub f64);

/// Release rate in cumecs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Discharge(pub f64);

/// Affine stage-storage relation `storage = slope * level + intercept`.
///
/// The curve only answers queries inside its domain, which runs from the
/// zero-storage level up to twice the distance from there to the dam crest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStorageCurve {
    slope: f64,
    intercept: f64,
    level_min: f64,
    level_max: f64,
}

impl StageStorageCurve {
    pub const DEFAULT_SLOPE: f64 = 0.3653;
    pub const DEFAULT_INTERCEPT: f64 = -119.78;

    pub fn new(slope: f64, intercept: f64, dam_cap: WaterLevel) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite() && intercept.is_finite()) {
            return Err(HydroError::InvalidCurve(format!(
                "slope must be positive and finite (slope={slope}, intercept={intercept})"
            )));
        }
        let level_min = -intercept / slope;
        if !(dam_cap.0 > level_min) {
            return Err(HydroError::InvalidCurve(format!(
                "dam crest {} m is not above the zero-storage level {level_min} m",
                dam_cap.0
            )));
        }
        let level_max = level_min + 2.0 * (dam_cap.0 - level_min);
        Ok(Self { slope, intercept, level_min, level_max })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Inclusive level domain `(zero-storage level, absolute cap)`.
    pub fn domain(&self) -> (WaterLevel, WaterLevel) {
        (WaterLevel(self.level_min), WaterLevel(self.level_max))
    }

    pub fn contains(&self, h: WaterLevel) -> bool {
        h.0 >= self.level_min && h.0 <= self.level_max
    }

    pub fn storage_from_level(&self, h: WaterLevel) -> Result<StorageVolume> {
        if !self.contains(h) {
            return Err(HydroError::LevelOutOfDomain {
                level: h.0,
                min: self.level_min,
                max: self.level_max,
            });
        }
        // Clamp the last-ulp negative at the zero-storage boundary.
        Ok(StorageVolume((self.slope * h.0 + self.intercept).max(0.0)))
    }

    pub fn level_from_storage(&self, s: StorageVolume) -> Result<WaterLevel> {
        if !(s.0 >= 0.0) {
            return Err(HydroError::NegativeStorage(s.0));
        }
        let h = (s.0 - self.intercept) / self.slope;
        if h > self.level_max {
            return Err(HydroError::StorageOutOfDomain {
                storage: s.0,
                max: self.slope * self.level_max + self.intercept,
            });
        }
        Ok(WaterLevel(h))
    }
}

impl Default for StageStorageCurve {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SLOPE, Self::DEFAULT_INTERCEPT, SimParams::DEFAULT_DAM_CAP)
            .expect("default curve is valid")
    }
}

/// Log-linear flood damage `exp(log_scale) * h^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodModel {
    pub log_scale: f64,
    pub exponent: f64,
}

impl FloodModel {
    pub const DEFAULT: FloodModel = FloodModel { log_scale: -981.0, exponent: 170.0 };

    /// Evaluated in log space; `h^170` overflows an f64 for any h above ~64.
    pub fn damage(&self, h_max: WaterLevel) -> Result<f64> {
        if !(h_max.0 > 0.0) {
            return Err(HydroError::NonPositiveLevel(h_max.0));
        }
        Ok((self.log_scale + self.exponent * h_max.0.ln()).exp())
    }
}

/// Flood damage for the maximum level seen over the flood window.
pub fn flood_damage(h_max: WaterLevel) -> Result<f64> {
    FloodModel::DEFAULT.damage(h_max)
}

/// Affine production model of the reservoir level, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePotential {
    pub slope: f64,
    pub intercept: f64,
}

impl AffinePotential {
    /// Million tonnes.
    pub const RICE: AffinePotential = AffinePotential { slope: 0.1315, intercept: -43.121 };
    /// Million tonnes.
    pub const WHEAT: AffinePotential = AffinePotential { slope: 0.2642, intercept: -86.641 };
    /// Megawatts.
    pub const HYDROPOWER: AffinePotential = AffinePotential { slope: 5.1927, intercept: -1342.5 };

    pub fn raw(&self, h: WaterLevel) -> f64 {
        self.slope * h.0 + self.intercept
    }

    pub fn value(&self, h: WaterLevel) -> f64 {
        self.raw(h).max(0.0)
    }

    /// Level below which the potential is zero.
    pub fn zero_level(&self) -> WaterLevel {
        WaterLevel(-self.intercept / self.slope)
    }
}

pub fn rice_potential(h: WaterLevel) -> f64 {
    AffinePotential::RICE.value(h)
}

pub fn wheat_potential(h: WaterLevel) -> f64 {
    AffinePotential::WHEAT.value(h)
}

pub fn hydropower_potential(h: WaterLevel) -> f64 {
    AffinePotential::HYDROPOWER.value(h)
}

/// Per-step reward with its unweighted components.
///
/// `total` can be recomputed from the components, the weights in
/// [`SimParams`] and the two recorded flags; see [`RewardBreakdown::recompute_total`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Clamped rice potential, million tonnes.
    pub rice: f64,
    /// Clamped wheat potential, million tonnes.
    pub wheat: f64,
    /// Clamped hydropower potential, MW.
    pub hydro: f64,
    /// Flood damage of the windowed maximum level.
    pub flood: f64,
    /// Dam-break penalty charged this step (zero unless overflowed).
    pub dam_break: f64,
    /// Multiplier applied to irrigation terms: zero outside the dry season.
    pub irrigation_weight: f64,
    pub rice_raw: f64,
    pub wheat_raw: f64,
    pub hydro_raw: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn recompute_total(&self, params: &SimParams) -> f64 {
        params.power_potential_slope * self.hydro
            + self.irrigation_weight * (params.rice_slope * self.rice + params.wheat_slope * self.wheat)
            - params.flooded_area_slope * self.flood
            - self.dam_break
    }
}

/// Combine the reward components for a post-step level `h` and the maximum
/// level `h_max` over the trailing flood window.
pub fn aggregate_reward(
    h: WaterLevel,
    h_max: WaterLevel,
    in_dry_season: bool,
    overflowed: bool,
    params: &SimParams,
) -> Result<RewardBreakdown> {
    let rice_raw = AffinePotential::RICE.raw(h);
    let wheat_raw = AffinePotential::WHEAT.raw(h);
    let hydro_raw = AffinePotential::HYDROPOWER.raw(h);
    let mut out = RewardBreakdown {
        rice: rice_raw.max(0.0),
        wheat: wheat_raw.max(0.0),
        hydro: hydro_raw.max(0.0),
        flood: flood_damage(h_max)?,
        dam_break: if overflowed { params.dam_break_damage } else { 0.0 },
        irrigation_weight: if in_dry_season { params.irrigation_scale() } else { 0.0 },
        rice_raw,
        wheat_raw,
        hydro_raw,
        total: 0.0,
    };
    out.total = out.recompute_total(params);
    Ok(out)
}

/// Volume released in one day at a constant rate.
pub fn discharge_to_volume(a: Discharge) -> Result<StorageVolume> {
    if !(a.0 >= 0.0) {
        return Err(HydroError::NegativeDischarge(a.0));
    }
    Ok(StorageVolume(a.0 * SECONDS_PER_DAY / CUBIC_METRES_PER_BCM))
}

/// Constant rate that releases `v` over one day.
pub fn volume_to_discharge(v: StorageVolume) -> Discharge {
    Discharge(v.0 * CUBIC_METRES_PER_BCM / SECONDS_PER_DAY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn curve() -> StageStorageCurve {
        StageStorageCurve::default()
    }

    #[test]
    fn storage_golden_values() {
        let c = curve();
        let s = c.storage_from_level(WaterLevel(342.934)).unwrap();
        assert_abs_diff_eq!(s.0, 5.4938, epsilon = 1e-3);
        let s0 = c.storage_from_level(WaterLevel(327.895)).unwrap();
        assert!(s0.0.abs() < 1e-3);
        let h1 = c.level_from_storage(StorageVolume(1.0)).unwrap();
        assert_abs_diff_eq!(c.storage_from_level(h1).unwrap().0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn level_golden_values() {
        let c = curve();
        assert_abs_diff_eq!(c.level_from_storage(StorageVolume(0.1)).unwrap().0, 328.168, epsilon = 1e-2);
        assert_abs_diff_eq!(c.level_from_storage(StorageVolume(5.4938)).unwrap().0, 342.934, epsilon = 1e-2);
        let s = c.storage_from_level(WaterLevel(340.0)).unwrap();
        assert_abs_diff_eq!(c.level_from_storage(s).unwrap().0, 340.0, epsilon = 1e-9);
    }

    #[test]
    fn curve_domain_errors() {
        let c = curve();
        let (lo, hi) = c.domain();
        assert_abs_diff_eq!(lo.0, 119.78 / 0.3653, epsilon = 1e-12);
        assert_abs_diff_eq!(hi.0, lo.0 + 2.0 * (342.934 - lo.0), epsilon = 1e-9);
        assert!(matches!(
            c.storage_from_level(WaterLevel(300.0)),
            Err(HydroError::LevelOutOfDomain { .. })
        ));
        assert!(c.storage_from_level(WaterLevel(hi.0 + 1.0)).is_err());
        assert!(matches!(c.level_from_storage(StorageVolume(-0.1)), Err(HydroError::NegativeStorage(_))));
        assert!(c.level_from_storage(StorageVolume(f64::NAN)).is_err());
        assert!(StageStorageCurve::new(0.0, -1.0, WaterLevel(10.0)).is_err());
    }

    #[test]
    fn flood_damage_log_space() {
        assert_abs_diff_eq!(flood_damage(WaterLevel(320.0)).unwrap(), 0.680, epsilon = 0.01);
        let top = flood_damage(WaterLevel(342.934)).unwrap();
        let expected = (170.0 * 342.934f64.ln() - 981.0).exp();
        assert!((top - expected).abs() / expected < 1e-12);
        assert!((top - 8.8e4).abs() / 8.8e4 < 0.05, "{top}");
        assert!(flood_damage(WaterLevel(330.0)).unwrap() > flood_damage(WaterLevel(320.0)).unwrap());
        assert!(flood_damage(WaterLevel(0.0)).is_err());
        assert!(flood_damage(WaterLevel(-3.0)).is_err());
    }

    #[test]
    fn direct_power_overflows() {
        // The naive formula is unusable: h^170 is infinite for any realistic level.
        let naive = (-981.0f64).exp() * 342.934f64.powi(170);
        assert!(!naive.is_finite() || naive == 0.0);
        assert!(342.934f64.powi(170).is_infinite());
        assert!(70.0f64.powi(170).is_infinite());
        assert!(flood_damage(WaterLevel(342.934)).unwrap().is_finite());
    }

    #[test]
    fn potentials_golden_values() {
        let h = WaterLevel(342.934);
        assert_abs_diff_eq!(rice_potential(h), 1.9748, epsilon = 1e-3);
        assert_abs_diff_eq!(wheat_potential(h), 3.9621, epsilon = 1e-3);
        assert_abs_diff_eq!(hydropower_potential(h), 438.25, epsilon = 0.1);

        assert!(rice_potential(WaterLevel(327.92)).abs() < 1e-3);
        assert!(wheat_potential(WaterLevel(327.94)).abs() < 1e-3);
        assert!(hydropower_potential(WaterLevel(258.536)).abs() < 1e-2);

        assert_eq!(rice_potential(WaterLevel(300.0)), 0.0);
        assert_eq!(wheat_potential(WaterLevel(300.0)), 0.0);
        assert_eq!(hydropower_potential(WaterLevel(250.0)), 0.0);
    }

    #[test]
    fn aggregate_reward_examples() {
        let p = SimParams::default();
        let h = WaterLevel(300.0);
        let r = aggregate_reward(h, h, false, false, &p).unwrap();
        let expected = 0.003 * hydropower_potential(h) - 0.00006 * flood_damage(h).unwrap();
        assert_abs_diff_eq!(r.total, expected, epsilon = 1e-12);
        assert_eq!(r.rice, 0.0);
        assert_eq!(r.wheat, 0.0);
        assert!(r.rice_raw < 0.0);

        let over = aggregate_reward(h, h, false, true, &p).unwrap();
        assert_abs_diff_eq!(over.total - r.total, -80.0, epsilon = 1e-12);

        let zero = SimParams {
            flooded_area_slope: 0.0,
            power_potential_slope: 0.0,
            rice_slope: 0.0,
            wheat_slope: 0.0,
            dam_break_damage: 0.0,
            ..SimParams::default()
        };
        for (lvl, dry, of) in [(330.0, true, true), (342.0, false, false), (329.5, true, false)] {
            let r = aggregate_reward(WaterLevel(lvl), WaterLevel(lvl + 0.5), dry, of, &zero).unwrap();
            assert_eq!(r.total, 0.0);
        }
    }

    #[test]
    fn dry_season_irrigation_accrues_once_per_season() {
        let p = SimParams::default();
        let h = WaterLevel(335.0);
        let dry = aggregate_reward(h, h, true, false, &p).unwrap();
        let wet = aggregate_reward(h, h, false, false, &p).unwrap();
        let per_day = dry.total - wet.total;
        let season = per_day * 242.0;
        assert_abs_diff_eq!(season, 30.0 * rice_potential(h) + 30.0 * wheat_potential(h), epsilon = 1e-9);
    }

    #[test]
    fn discharge_volume_units() {
        assert_abs_diff_eq!(discharge_to_volume(Discharge(73.1)).unwrap().0, 0.0063158, epsilon = 1e-6);
        assert_eq!(discharge_to_volume(Discharge(0.0)).unwrap().0, 0.0);
        assert_abs_diff_eq!(discharge_to_volume(Discharge(1000.0 / 86.4)).unwrap().0, 0.001, epsilon = 1e-15);
        assert!(discharge_to_volume(Discharge(-1.0)).is_err());
        let back = volume_to_discharge(discharge_to_volume(Discharge(73.1)).unwrap());
        assert_abs_diff_eq!(back.0, 73.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn level_storage_roundtrip(t in 0.0f64..=1.0) {
            let c = curve();
            let (lo, hi) = c.domain();
            let h = lo.0 + t * (hi.0 - lo.0);
            let back = c.level_from_storage(c.storage_from_level(WaterLevel(h)).unwrap()).unwrap();
            prop_assert!((back.0 - h).abs() <= 1e-9 * h.abs());
        }

        #[test]
        fn flood_damage_is_log_linear(h1 in 200.0f64..400.0, h2 in 200.0f64..400.0) {
            let d1 = flood_damage(WaterLevel(h1)).unwrap();
            let d2 = flood_damage(WaterLevel(h2)).unwrap();
            let lhs = d2.ln() - d1.ln();
            let rhs = 170.0 * (h2.ln() - h1.ln());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
            if h2 > h1 { prop_assert!(d2 > d1); }
        }

        #[test]
        fn potentials_monotone_and_zero_below_crossing(h1 in 200.0f64..400.0, dh in 0.0f64..50.0) {
            for pot in [AffinePotential::RICE, AffinePotential::WHEAT, AffinePotential::HYDROPOWER] {
                prop_assert!(pot.value(WaterLevel(h1 + dh)) >= pot.value(WaterLevel(h1)));
                if h1 < pot.zero_level().0 {
                    prop_assert_eq!(pot.value(WaterLevel(h1)), 0.0);
                }
            }
        }

        #[test]
        fn reward_is_affine_in_each_weight(h in 328.5f64..342.9, dry in any::<bool>(), scale in 0.1f64..5.0) {
            let base = SimParams::default();
            let zero = SimParams { power_potential_slope: 0.0, ..base.clone() };
            let scaled = SimParams { power_potential_slope: base.power_potential_slope * scale, ..base.clone() };
            let lvl = WaterLevel(h);
            let r0 = aggregate_reward(lvl, lvl, dry, false, &zero).unwrap().total;
            let r1 = aggregate_reward(lvl, lvl, dry, false, &base).unwrap().total;
            let rs = aggregate_reward(lvl, lvl, dry, false, &scaled).unwrap().total;
            prop_assert!(((rs - r0) - scale * (r1 - r0)).abs() <= 1e-9 * (r1 - r0).abs().max(1.0));

            let zero_f = SimParams { flooded_area_slope: 0.0, ..base.clone() };
            let double_f = SimParams { flooded_area_slope: 2.0 * base.flooded_area_slope, ..base.clone() };
            let f0 = aggregate_reward(lvl, lvl, dry, false, &zero_f).unwrap().total;
            let f2 = aggregate_reward(lvl, lvl, dry, false, &double_f).unwrap().total;
            prop_assert!(((f2 - f0) - 2.0 * (r1 - f0)).abs() <= 1e-9 * (r1 - f0).abs().max(1.0));
        }
    }
}
