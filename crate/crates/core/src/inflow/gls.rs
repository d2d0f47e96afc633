use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{design_from_series, InflowError, Result};

const RHO_TOL: f64 = 1e-6;
const MAX_ITER: usize = 50;
const RHO_BOUND: f64 = 0.999;

/// Linear rainfall-to-inflow regression with AR(1) residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsModel {
    /// `[intercept, today, lag 1, .., lag K-1]`, BCM/day per mm.
    pub coefficients: Vec<f64>,
    /// Lag-1 autocorrelation of the regression residuals.
    pub rho: f64,
    /// Innovation variance of the AR(1) residual process.
    pub sigma2: f64,
    pub iterations: usize,
}

impl GlsModel {
    pub fn k(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Unfloored `coefficients . x`.
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(InflowError::DimensionMismatch { expected: self.coefficients.len(), got: x.len() });
        }
        Ok(self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum())
    }

    /// Marginal variance of the residual process.
    pub fn residual_variance(&self) -> f64 {
        self.sigma2 / (1.0 - self.rho * self.rho)
    }
}

/// Mean inflow prediction, floored at zero.
pub fn gls_predict(model: &GlsModel, x: &[f64]) -> Result<f64> {
    Ok(model.linear_predictor(x)?.max(0.0))
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv <= 1e-10 * max_sv {
        return Err(InflowError::RankDeficient { cond_inverse: if max_sv > 0.0 { min_sv / max_sv } else { 0.0 } });
    }
    svd.solve(y, 0.0).map_err(|e| InflowError::Numerical(e.to_string()))
}

fn lag1_autocorrelation(u: &[f64], scale: f64) -> f64 {
    let den: f64 = u[..u.len() - 1].iter().map(|v| v * v).sum();
    // Residuals at round-off level carry no autocorrelation signal.
    if den <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return 0.0;
    }
    let num: f64 = u.windows(2).map(|w| w[0] * w[1]).sum();
    (num / den).clamp(-RHO_BOUND, RHO_BOUND)
}

/// Iterated feasible GLS (Cochrane-Orcutt) on `[1, rain_t, .., rain_{t-K+1}]`.
///
/// Rows start at the first day with a full lag window.
pub fn fit_gls(rainfall: &[f64], inflow: &[f64], k: usize) -> Result<GlsModel> {
    if rainfall.len() != inflow.len() {
        return Err(InflowError::LengthMismatch { rainfall: rainfall.len(), inflow: inflow.len() });
    }
    if k == 0 {
        return Err(InflowError::InvalidConfig("K must be at least 1".into()));
    }
    let needed = 10 * (k + 1);
    if rainfall.len() < needed {
        return Err(InflowError::SeriesTooShort { len: rainfall.len(), needed });
    }
    if let Some(i) = rainfall.iter().chain(inflow).position(|v| !v.is_finite()) {
        return Err(InflowError::NonFinite(format!("input value #{i}")));
    }

    let p = k + 1;
    let first = k - 1;
    let n = rainfall.len() - first;
    let rows: Vec<Vec<f64>> = (first..rainfall.len()).map(|t| design_from_series(rainfall, t, k, None)).collect();
    let x = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
    let y = DVector::from_iterator(n, inflow[first..].iter().copied());
    let scale = y.norm_squared();

    let mut beta = least_squares(&x, &y)?;
    let mut resid = (&y - &x * &beta).data.as_vec().clone();
    let mut rho = lag1_autocorrelation(&resid, scale);
    let mut iterations = 0;

    while iterations < MAX_ITER && rho != 0.0 {
        iterations += 1;
        let xs = DMatrix::from_fn(n - 1, p, |r, c| x[(r + 1, c)] - rho * x[(r, c)]);
        let ys = DVector::from_fn(n - 1, |r, _| y[r + 1] - rho * y[r]);
        beta = least_squares(&xs, &ys)?;
        resid = (&y - &x * &beta).data.as_vec().clone();
        let next = lag1_autocorrelation(&resid, scale);
        let delta = (next - rho).abs();
        rho = next;
        if delta < RHO_TOL {
            break;
        }
    }

    let innovations: f64 = resid.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
    let sigma2 = (innovations / (n - 1) as f64).max(f64::MIN_POSITIVE);

    Ok(GlsModel { coefficients: beta.iter().copied().collect(), rho, sigma2, iterations })
}
