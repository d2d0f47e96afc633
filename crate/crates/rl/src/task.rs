//! The environment interface seen by the learners, a one-step toy task, and
//! the dam task that wraps the reservoir simulator.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reservoir_core::env::{Action, EpisodeConfig, Reservoir};
use reservoir_core::hydro::discharge_to_volume;
use reservoir_core::policy::Observation;
use reservoir_core::{Discharge, SimParams, StageStorageCurve, WaterLevel};
use serde::{Deserialize, Serialize};

use crate::{Result, RlError};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The successor is absorbing; do not bootstrap.
    pub terminal: bool,
    /// The episode was cut by a time limit.
    pub truncated: bool,
}

/// Episodic task with one normalized action in `[-1, 1]`.
pub trait Environment {
    fn obs_dim(&self) -> usize;

    /// Start an episode; randomized tasks draw their episode from `rng`.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    fn step(&mut self, action: f64) -> Result<EnvStep>;
}

/// One-step task: the state is a position drawn from `U(-1, 1)` that has no
/// effect, the reward is `-(a - 0.5)^2`.
#[derive(Debug, Clone, Default)]
pub struct ToyEnv {
    position: f64,
}

impl ToyEnv {
    pub const OPTIMAL_ACTION: f64 = 0.5;

    pub fn reward(action: f64) -> f64 {
        -(action - Self::OPTIMAL_ACTION).powi(2)
    }
}

impl Environment for ToyEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.position = rng.random_range(-1.0..1.0);
        Ok(vec![self.position])
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        if !action.is_finite() {
            return Err(RlError::NonFinite("action".into()));
        }
        Ok(EnvStep { obs: vec![self.position], reward: Self::reward(action.clamp(-1.0, 1.0)), terminal: true, truncated: false })
    }
}

/// Observation encoding for the dam: level and trailing-maximum level mapped
/// to `[-1, 1]` over the curve domain, the rainfall window divided by a scale,
/// the day of year as a sin/cos pair, and the inflow estimate as a fraction
/// of the largest daily release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamFeatures {
    pub rainfall_scale: f64,
    pub rainfall_window: usize,
    pub level_min: f64,
    pub level_max: f64,
    pub a_max_cumecs: f64,
}

impl DamFeatures {
    pub const DEFAULT_RAINFALL_SCALE: f64 = 100.0;

    pub fn new(params: &SimParams, curve: &StageStorageCurve, rainfall_scale: f64) -> Result<Self> {
        if !(rainfall_scale > 0.0 && rainfall_scale.is_finite()) {
            return Err(RlError::Config(format!("rainfall scale must be positive, got {rainfall_scale}")));
        }
        let (lo, hi) = curve.domain();
        Ok(Self {
            rainfall_scale,
            rainfall_window: params.rainfall_window,
            level_min: lo.0,
            level_max: hi.0,
            a_max_cumecs: params.a_max.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.rainfall_window + 5
    }

    fn level(&self, h: WaterLevel) -> f64 {
        2.0 * (h.0 - self.level_min) / (self.level_max - self.level_min) - 1.0
    }

    pub fn encode(&self, obs: &Observation<'_>) -> Vec<f64> {
        let s = obs.state;
        let mut f = Vec::with_capacity(self.dim());
        f.push(self.level(s.level));
        f.extend((0..self.rainfall_window).map(|i| s.rainfall_window.get(i).copied().unwrap_or(0.0) / self.rainfall_scale));
        let (sin, cos) = day_of_year_angle(s.date).sin_cos();
        f.push(sin);
        f.push(cos);
        f.push(self.level(s.max_recent_level()));
        let full = discharge_to_volume(Discharge(self.a_max_cumecs)).map(|v| v.0).unwrap_or(1.0);
        f.push(obs.inflow_estimate.0 / full);
        f
    }

    /// Normalized action to discharge: `[-1, 1] -> [0, a_max]`.
    pub fn discharge(&self, action: f64) -> Discharge {
        Discharge((action.clamp(-1.0, 1.0) + 1.0) / 2.0 * self.a_max_cumecs)
    }
}

fn day_of_year_angle(date: NaiveDate) -> f64 {
    let days = if NaiveDate::from_ymd_opt(date.year(), 2, 29).is_some() { 366.0 } else { 365.0 };
    2.0 * PI * date.ordinal0() as f64 / days
}

/// How training episodes differ from one another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRandomization {
    /// Years for the episode start date (same month and day as the base).
    pub start_years: Vec<i32>,
    /// Uniform range for the initial level, metres.
    pub initial_level: Option<(f64, f64)>,
}

/// The reservoir as a learning task. Every step is non-terminal; the last
/// step of an episode is a time-limit truncation.
#[derive(Debug, Clone)]
pub struct DamTask {
    base: EpisodeConfig,
    randomization: Option<EpisodeRandomization>,
    features: DamFeatures,
    env: Option<Reservoir>,
}

impl DamTask {
    pub fn new(base: EpisodeConfig, randomization: Option<EpisodeRandomization>, features: DamFeatures) -> Result<Self> {
        if features.rainfall_window != base.inflow.k() {
            return Err(RlError::Config(format!(
                "feature rainfall window {} differs from the inflow model's {}",
                features.rainfall_window,
                base.inflow.k()
            )));
        }
        if let Some(r) = &randomization {
            if r.start_years.is_empty() {
                return Err(RlError::Config("randomized episodes need at least one start year".into()));
            }
            if let Some((lo, hi)) = r.initial_level {
                if !(lo <= hi) || !base.curve.contains(WaterLevel(lo)) || !base.curve.contains(WaterLevel(hi)) {
                    return Err(RlError::Config(format!("initial level range ({lo}, {hi}) is invalid")));
                }
            }
        }
        Ok(Self { base, randomization, features, env: None })
    }

    pub fn features(&self) -> &DamFeatures {
        &self.features
    }

    pub fn base_config(&self) -> &EpisodeConfig {
        &self.base
    }

    fn episode_config(&self, rng: &mut ChaCha8Rng) -> Result<EpisodeConfig> {
        let Some(r) = &self.randomization else {
            return Ok(self.base.clone());
        };
        let mut cfg = self.base.clone();
        let year = r.start_years[rng.random_range(0..r.start_years.len())];
        let start = self.base.start_date;
        cfg.start_date = start
            .with_year(year)
            .or_else(|| NaiveDate::from_ymd_opt(year, start.month(), start.day() - 1))
            .ok_or_else(|| RlError::Config(format!("no start date in {year}")))?;
        if let Some((lo, hi)) = r.initial_level {
            cfg.initial_level = Some(WaterLevel(if lo < hi { rng.random_range(lo..=hi) } else { lo }));
        }
        cfg.seed = rng.random();
        Ok(cfg)
    }
}

impl Environment for DamTask {
    fn obs_dim(&self) -> usize {
        self.features.dim()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let cfg = self.episode_config(rng)?;
        let env = Reservoir::new(cfg)?;
        let obs = self.features.encode(&env.observation());
        self.env = Some(env);
        Ok(obs)
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        let env = self.env.as_mut().ok_or_else(|| RlError::Config("step before reset".into()))?;
        if !action.is_finite() {
            return Err(RlError::NonFinite("action".into()));
        }
        let out = env.step(Action { discharge: self.features.discharge(action) })?;
        let obs = self.features.encode(&env.observation());
        Ok(EnvStep { obs, reward: out.reward.total, terminal: false, truncated: out.done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn toy_rewards() {
        let mut env = ToyEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.reset(&mut rng).unwrap();
        assert!(s[0].abs() < 1.0);
        let st = env.step(0.5).unwrap();
        assert_eq!(st.reward, 0.0);
        assert!(st.terminal);
        assert_eq!(env.step(-1.0).unwrap().reward, -2.25);
    }

    #[test]
    fn feature_ranges() {
        let params = SimParams::default();
        let curve = StageStorageCurve::default();
        let f = DamFeatures::new(&params, &curve, 100.0).unwrap();
        assert_eq!(f.level(curve.domain().0), -1.0);
        assert_eq!(f.level(curve.domain().1), 1.0);
        assert_eq!(f.discharge(-1.0).0, 0.0);
        assert_eq!(f.discharge(1.0).0, params.a_max.0);
        assert_eq!(f.discharge(7.0).0, params.a_max.0);
        assert!(DamFeatures::new(&params, &curve, 0.0).is_err());
    }

    #[test]
    fn dam_task_runs_a_truncated_year() {
        let start = NaiveDate::from_ymd_opt(2019, 6, 1).unwrap();
        let cfg = EpisodeConfig::constant(start, WaterLevel(335.0), 0.02, 5.0);
        let f = DamFeatures::new(&cfg.params, &cfg.curve, 100.0).unwrap();
        let mut task = DamTask::new(cfg, None, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = task.reset(&mut rng).unwrap();
        assert_eq!(obs.len(), task.obs_dim());
        assert!((obs[1] - 0.05).abs() < 1e-12 || obs[1] == 0.0);
        let mut n = 0;
        loop {
            let st = task.step(0.0).unwrap();
            n += 1;
            assert!(!st.terminal);
            assert!(st.obs.iter().all(|v| v.is_finite() && v.abs() <= 2.0));
            if st.truncated {
                break;
            }
        }
        assert_eq!(n, 365);
    }

    #[test]
    fn randomized_reset_varies() {
        let start = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        let cfg = EpisodeConfig::constant(start, WaterLevel(335.0), 0.02, 0.0);
        let f = DamFeatures::new(&cfg.params, &cfg.curve, 100.0).unwrap();
        let r = EpisodeRandomization { start_years: vec![2013, 2014], initial_level: Some((332.0, 338.0)) };
        let mut task = DamTask::new(cfg, Some(r), f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = task.reset(&mut rng).unwrap();
        let b = task.reset(&mut rng).unwrap();
        assert_ne!(a[0], b[0]);
        let bad = EpisodeRandomization { start_years: vec![], initial_level: None };
        assert!(DamTask::new(task.base_config().clone(), Some(bad), f).is_err());
    }
}
