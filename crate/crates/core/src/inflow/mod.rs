//! Upstream inflow models: rainfall-driven GLS regression, a Kalman-filtered
//! dynamic linear model (optionally fed the GLS prediction) and plain replay
//! of observed inflow, plus Nash-Sutcliffe efficiency.

mod dlm;
mod gls;

pub use dlm::{dlm_forecast, dlm_init, dlm_update, DlmModel, Forecast};
pub use gls::{fit_gls, gls_predict, GlsModel};

use std::io;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InflowError {
    #[error("design vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rainfall ({rainfall}) and inflow ({inflow}) series differ in length")]
    LengthMismatch { rainfall: usize, inflow: usize },
    #[error("series of {len} points is too short, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("design matrix is rank deficient (smallest/largest singular value {cond_inverse:e})")]
    RankDeficient { cond_inverse: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("forecast variance {0} is not positive")]
    Degenerate(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("NSE needs at least two records, got {0}")]
    NotEnoughRecords(usize),
    #[error("NSE is undefined when every observation is identical")]
    UndefinedNse,
    #[error("{0} model cannot forecast from rainfall")]
    NotApplicable(InflowModelKind),
    #[error("model numerics failed: {0}")]
    Numerical(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, InflowError>;

/// Regressors for day `t`: `[1, rain_t, rain_{t-1}, .., rain_{t-K+1}]`, lags
/// before the start of the series taken as zero, with the GLS prediction
/// appended when given.
pub fn design_from_series(rainfall: &[f64], t: usize, k: usize, gls_regressor: Option<f64>) -> Vec<f64> {
    let mut x = Vec::with_capacity(k + 2);
    x.push(1.0);
    x.extend((0..k).map(|lag| if lag <= t { rainfall[t - lag] } else { 0.0 }));
    x.extend(gls_regressor);
    x
}

/// Regressors from today's rainfall and the previous days (most recent
/// first); missing history counts as zero.
pub fn design_from_window(rain_today: f64, previous: &[f64], k: usize, gls_regressor: Option<f64>) -> Vec<f64> {
    let mut x = Vec::with_capacity(k + 2);
    x.push(1.0);
    x.push(rain_today);
    x.extend((0..k - 1).map(|i| previous.get(i).copied().unwrap_or(0.0)));
    x.extend(gls_regressor);
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InflowModelKind {
    Gls,
    Dlm,
    GlsPlusDlm,
    Replay,
}

impl InflowModelKind {
    pub const ALL: [InflowModelKind; 4] = [Self::Gls, Self::Dlm, Self::GlsPlusDlm, Self::Replay];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Gls => "GLS",
            Self::Dlm => "DLM",
            Self::GlsPlusDlm => "GLS_PLUS_DLM",
            Self::Replay => "REPLAY",
        }
    }
}

impl std::fmt::Display for InflowModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Priors and discounting for DLM fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmSettings {
    pub discount: f64,
    pub prior_scale: f64,
    /// Days used to estimate the observation variance when it is not given.
    pub warmup_days: usize,
    pub obs_variance: Option<f64>,
}

impl Default for DlmSettings {
    fn default() -> Self {
        Self { discount: 0.98, prior_scale: 1.0, warmup_days: 60, obs_variance: None }
    }
}

/// Variance of first-differenced inflow over the warm-up window. Falls back to
/// the whole series when the warm-up is flat (a dry-season start).
pub fn estimate_obs_variance(inflow: &[f64], warmup_days: usize) -> f64 {
    fn diff_var(s: &[f64]) -> f64 {
        if s.len() < 3 {
            return 0.0;
        }
        let d: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64
    }
    let warm = diff_var(&inflow[..warmup_days.min(inflow.len())]);
    let v = if warm > 0.0 && warm.is_finite() { warm } else { diff_var(inflow) };
    if v.is_finite() {
        v.max(1e-12)
    } else {
        1e-12
    }
}

/// A fitted inflow model in its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FittedInflow {
    Gls { k: usize, gls: GlsModel },
    Dlm { k: usize, dlm: DlmModel },
    GlsPlusDlm { k: usize, gls: GlsModel, dlm: DlmModel },
    Replay { k: usize },
}

impl FittedInflow {
    pub fn kind(&self) -> InflowModelKind {
        match self {
            Self::Gls { .. } => InflowModelKind::Gls,
            Self::Dlm { .. } => InflowModelKind::Dlm,
            Self::GlsPlusDlm { .. } => InflowModelKind::GlsPlusDlm,
            Self::Replay { .. } => InflowModelKind::Replay,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Gls { k, .. } | Self::Dlm { k, .. } | Self::GlsPlusDlm { k, .. } | Self::Replay { k } => *k,
        }
    }

    /// Model state before any DLM filtering: GLS parts are fitted on the
    /// series, DLM parts start from their prior.
    pub fn initial(kind: InflowModelKind, rainfall: &[f64], inflow: &[f64], k: usize, settings: &DlmSettings) -> Result<Self> {
        if k == 0 {
            return Err(InflowError::InvalidConfig("K must be at least 1".into()));
        }
        let dlm_prior = |dim: usize| {
            let v = settings.obs_variance.unwrap_or_else(|| estimate_obs_variance(inflow, settings.warmup_days));
            dlm_init(dim, None, settings.prior_scale, v, settings.discount)
        };
        Ok(match kind {
            InflowModelKind::Gls => Self::Gls { k, gls: fit_gls(rainfall, inflow, k)? },
            InflowModelKind::Dlm => Self::Dlm { k, dlm: dlm_prior(k + 1)? },
            InflowModelKind::GlsPlusDlm => Self::GlsPlusDlm { k, gls: fit_gls(rainfall, inflow, k)?, dlm: dlm_prior(k + 2)? },
            InflowModelKind::Replay => Self::Replay { k },
        })
    }

    /// Fit on a training series. DLM states are filtered through the series
    /// and the final posterior is kept.
    pub fn fit(kind: InflowModelKind, rainfall: &[f64], inflow: &[f64], k: usize, settings: &DlmSettings) -> Result<Self> {
        if rainfall.len() != inflow.len() {
            return Err(InflowError::LengthMismatch { rainfall: rainfall.len(), inflow: inflow.len() });
        }
        let mut model = Self::initial(kind, rainfall, inflow, k, settings)?;
        for t in 0..rainfall.len() {
            let x = model.design_at(rainfall, t)?;
            model.observe(&x, inflow[t])?;
        }
        Ok(model)
    }

    fn finish_design(&self, mut base: Vec<f64>) -> Result<Vec<f64>> {
        if let Self::GlsPlusDlm { gls, .. } = self {
            let g = gls_predict(gls, &base)?;
            base.push(g);
        }
        Ok(base)
    }

    pub fn design_at(&self, rainfall: &[f64], t: usize) -> Result<Vec<f64>> {
        self.finish_design(design_from_series(rainfall, t, self.k(), None))
    }

    pub fn design(&self, rain_today: f64, previous: &[f64]) -> Result<Vec<f64>> {
        self.finish_design(design_from_window(rain_today, previous, self.k(), None))
    }

    /// Predictive moments for the design vector `x` (unfloored mean).
    pub fn forecast(&self, x: &[f64]) -> Result<Forecast> {
        match self {
            Self::Gls { gls, .. } => Ok(Forecast { mean: gls.linear_predictor(x)?, variance: gls.residual_variance() }),
            Self::Dlm { dlm, .. } | Self::GlsPlusDlm { dlm, .. } => dlm_forecast(dlm, x),
            Self::Replay { .. } => Err(InflowError::NotApplicable(InflowModelKind::Replay)),
        }
    }

    /// Floored inflow prediction in BCM/day.
    pub fn predict(&self, rain_today: f64, previous: &[f64]) -> Result<f64> {
        let x = self.design(rain_today, previous)?;
        Ok(self.forecast(&x)?.mean.max(0.0))
    }

    /// Assimilate an observed inflow. Only DLM states change.
    pub fn observe(&mut self, x: &[f64], y: f64) -> Result<()> {
        match self {
            Self::Dlm { dlm, .. } | Self::GlsPlusDlm { dlm, .. } => {
                *dlm = dlm_update(dlm, x, y)?;
            }
            Self::Gls { .. } | Self::Replay { .. } => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// One-step-ahead forecast for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    #[serde(rename = "observed")]
    pub observed_inflow: f64,
    #[serde(rename = "predicted")]
    pub predicted_inflow: f64,
    #[serde(rename = "variance")]
    pub forecast_variance: f64,
}

/// Run `model` forward over a series, forecasting each day before
/// assimilating it. Records are emitted from index `start` on; earlier days
/// only warm the filter.
pub fn forecast_series(
    model: &mut FittedInflow,
    dates: &[NaiveDate],
    rainfall: &[f64],
    inflow: &[f64],
    start: usize,
) -> Result<Vec<ForecastRecord>> {
    if rainfall.len() != inflow.len() || dates.len() != inflow.len() {
        return Err(InflowError::LengthMismatch { rainfall: rainfall.len(), inflow: inflow.len() });
    }
    let mut records = Vec::with_capacity(inflow.len().saturating_sub(start));
    for t in 0..inflow.len() {
        if let FittedInflow::Replay { .. } = model {
            if t >= start {
                records.push(ForecastRecord {
                    date: dates[t],
                    observed_inflow: inflow[t],
                    predicted_inflow: inflow[t],
                    forecast_variance: 0.0,
                });
            }
            continue;
        }
        let x = model.design_at(rainfall, t)?;
        if t >= start {
            let f = model.forecast(&x)?;
            records.push(ForecastRecord {
                date: dates[t],
                observed_inflow: inflow[t],
                predicted_inflow: f.mean.max(0.0),
                forecast_variance: f.variance,
            });
        }
        model.observe(&x, inflow[t])?;
    }
    Ok(records)
}

/// One-step-ahead forecasts of `kind` over a whole series, fitting GLS parts
/// on the same series and filtering DLM parts from their prior.
pub fn filter_series(
    kind: InflowModelKind,
    dates: &[NaiveDate],
    rainfall: &[f64],
    inflow: &[f64],
    k: usize,
    settings: &DlmSettings,
) -> Result<Vec<ForecastRecord>> {
    if rainfall.len() != inflow.len() {
        return Err(InflowError::LengthMismatch { rainfall: rainfall.len(), inflow: inflow.len() });
    }
    let mut model = FittedInflow::initial(kind, rainfall, inflow, k, settings)?;
    forecast_series(&mut model, dates, rainfall, inflow, 0)
}

/// Nash-Sutcliffe efficiency of observed against predicted values.
pub fn nse_values(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() < 2 || observed.len() != predicted.len() {
        return Err(InflowError::NotEnoughRecords(observed.len().min(predicted.len())));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let sst: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(InflowError::UndefinedNse);
    }
    let sse: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

pub fn nse(records: &[ForecastRecord]) -> Result<f64> {
    let obs: Vec<f64> = records.iter().map(|r| r.observed_inflow).collect();
    let pred: Vec<f64> = records.iter().map(|r| r.predicted_inflow).collect();
    nse_values(&obs, &pred)
}

/// CSV with header `date,observed,predicted,variance`.
pub fn write_forecast_csv<W: io::Write>(records: &[ForecastRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
