use serde::{Deserialize, Serialize};

use super::{InflowError, Result};

/// Dynamic regression with random-walk coefficients and discount-factor
/// evolution variance.
///
/// Observation: `y_t = x_t' theta_t + v_t`, `v_t ~ N(0, V)`.
/// Evolution:   prior covariance at `t` is `C_{t-1} / discount`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmModel {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub covariance: Vec<f64>,
    pub obs_variance: f64,
    pub discount: f64,
}

/// One-step-ahead predictive moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub mean: f64,
    pub variance: f64,
}

impl DlmModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim() + j]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(InflowError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// `R x` where `R = C / discount`.
    fn prior_times(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let row = &self.covariance[i * d..(i + 1) * d];
                row.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() / self.discount
            })
            .collect()
    }

    /// Predictive mean without the floor, linear in `x`.
    pub fn forecast_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.mean.iter().zip(x).map(|(m, v)| m * v).sum())
    }
}

pub fn dlm_init(dim: usize, prior_mean: Option<&[f64]>, prior_scale: f64, obs_variance: f64, discount: f64) -> Result<DlmModel> {
    if dim == 0 {
        return Err(InflowError::InvalidConfig("DLM dimension must be at least 1".into()));
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(InflowError::InvalidConfig(format!("discount must lie in (0, 1], got {discount}")));
    }
    if !(prior_scale > 0.0 && prior_scale.is_finite()) {
        return Err(InflowError::InvalidConfig(format!("prior scale must be positive, got {prior_scale}")));
    }
    if !(obs_variance >= 0.0 && obs_variance.is_finite()) {
        return Err(InflowError::InvalidConfig(format!("observation variance must be non-negative, got {obs_variance}")));
    }
    let mean = match prior_mean {
        Some(m) if m.len() != dim => return Err(InflowError::DimensionMismatch { expected: dim, got: m.len() }),
        Some(m) => m.to_vec(),
        None => vec![0.0; dim],
    };
    let mut covariance = vec![0.0; dim * dim];
    for i in 0..dim {
        covariance[i * dim + i] = prior_scale;
    }
    Ok(DlmModel { mean, covariance, obs_variance, discount })
}

pub fn dlm_forecast(model: &DlmModel, x: &[f64]) -> Result<Forecast> {
    let mean = model.forecast_mean(x)?;
    let rx = model.prior_times(x);
    let variance = x.iter().zip(&rx).map(|(a, b)| a * b).sum::<f64>() + model.obs_variance;
    Ok(Forecast { mean, variance })
}

/// Kalman update with observation `y`; returns the posterior state.
pub fn dlm_update(model: &DlmModel, x: &[f64], y: f64) -> Result<DlmModel> {
    model.check_dim(x)?;
    if !y.is_finite() {
        return Err(InflowError::NonFinite(format!("observation {y}")));
    }
    let d = model.dim();
    let rx = model.prior_times(x);
    let f: f64 = model.mean.iter().zip(x).map(|(m, v)| m * v).sum();
    let q = x.iter().zip(&rx).map(|(a, b)| a * b).sum::<f64>() + model.obs_variance;
    if !(q > 0.0 && q.is_finite()) {
        return Err(InflowError::Degenerate(q));
    }
    let e = y - f;
    let gain: Vec<f64> = rx.iter().map(|v| v / q).collect();
    let mean = model.mean.iter().zip(&gain).map(|(m, a)| m + a * e).collect();

    // C = R - A A' q, with A A' q = (R x)(R x)' / q.
    let mut covariance = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            covariance[i * d + j] = model.covariance[i * d + j] / model.discount - rx[i] * rx[j] / q;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (covariance[i * d + j] + covariance[j * d + i]);
            covariance[i * d + j] = s;
            covariance[j * d + i] = s;
        }
    }
    Ok(DlmModel { mean, covariance, obs_variance: model.obs_variance, discount: model.discount })
}
