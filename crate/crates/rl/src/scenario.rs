//! Train/test simulators built from one dataset: training episodes draw
//! rainfall from the training years, evaluation replays the test year.

use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use reservoir_core::data::{DailyRecord, DailySeries};
use reservoir_core::env::{EpisodeConfig, InflowSource, RainfallSource};
use reservoir_core::inflow::FittedInflow;
use reservoir_core::{SimParams, StageStorageCurve};

use crate::task::{DamFeatures, DamTask, EpisodeRandomization};
use crate::{Result, RlError};

#[derive(Debug, Clone)]
pub struct DamScenario {
    pub full: Arc<DailySeries>,
    pub train: Arc<DailySeries>,
    pub model: FittedInflow,
    pub params: SimParams,
    pub curve: StageStorageCurve,
    pub train_end_year: i32,
    pub test_year: i32,
}

impl DamScenario {
    pub fn new(
        records: &[DailyRecord],
        model: FittedInflow,
        params: SimParams,
        curve: StageStorageCurve,
        train_end_year: i32,
        test_year: i32,
    ) -> Result<Self> {
        if train_end_year >= test_year {
            return Err(RlError::Config(format!("train end {train_end_year} must precede test year {test_year}")));
        }
        let series = |rs: Vec<DailyRecord>| DailySeries::new(rs).map(Arc::new).map_err(|e| RlError::Config(e.to_string()));
        let train: Vec<_> = records.iter().filter(|r| r.date.year() <= train_end_year).copied().collect();
        if train.is_empty() || !records.iter().any(|r| r.date.year() == test_year) {
            return Err(RlError::Config(format!("dataset lacks training years up to {train_end_year} or the year {test_year}")));
        }
        Ok(Self { full: series(records.to_vec())?, train: series(train)?, model, params, curve, train_end_year, test_year })
    }

    fn water_year_start(&self, year: i32) -> NaiveDate {
        self.params.water_year_start.in_year(year)
    }

    /// Training years whose water year starts inside the training data.
    pub fn train_start_years(&self) -> Vec<i32> {
        let first = self.train.first_date();
        (first.year()..=self.train_end_year).filter(|y| self.water_year_start(*y) > first).collect()
    }

    /// Training simulator: bootstrap rainfall from the training years, no
    /// online model updates, random start year and initial level.
    pub fn training_task(&self, features: DamFeatures, initial_level: Option<(f64, f64)>) -> Result<DamTask> {
        let years = self.train_start_years();
        let first = *years.first().ok_or_else(|| RlError::Config("no complete training water year".into()))?;
        let base = EpisodeConfig {
            initial_level: None,
            start_date: self.water_year_start(first),
            inflow: InflowSource::Fitted(self.model.clone()),
            rainfall: RainfallSource::Bootstrap(self.train.clone()),
            observations: Some(self.train.clone()),
            params: self.params.clone(),
            curve: self.curve,
            seed: 0,
        };
        DamTask::new(base, Some(EpisodeRandomization { start_years: years, initial_level }), features)
    }

    /// Test-year simulator: the recorded rainfall of the test water year,
    /// model states updated online with observed inflow, and the recorded
    /// level on the day before the start.
    pub fn test_config(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            initial_level: None,
            start_date: self.water_year_start(self.test_year),
            inflow: InflowSource::Fitted(self.model.clone()),
            rainfall: RainfallSource::Replay(self.full.clone()),
            observations: Some(self.full.clone()),
            params: self.params.clone(),
            curve: self.curve,
            seed,
        }
    }

    pub fn test_task(&self, features: DamFeatures, seed: u64) -> Result<DamTask> {
        DamTask::new(self.test_config(seed), None, features)
    }
}
