//! Central finite differences for checking reverse-mode gradients.

/// Numerical gradient of `f` at `params` with step `eps`; `params` is
/// restored before returning.
pub fn central_differences<F>(params: &mut [f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = f(params);
        params[i] = orig - eps;
        let down = f(params);
        params[i] = orig;
        g.push((up - down) / (2.0 * eps));
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// First index where `|a - n| > max(rel * max(|a|, |n|), abs_floor)`.
pub fn first_mismatch(analytic: &[f64], numeric: &[f64], rel: f64, abs_floor: f64) -> Option<GradientMismatch> {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    analytic.iter().zip(numeric).enumerate().find_map(|(index, (&a, &n))| {
        let tol = (rel * a.abs().max(n.abs())).max(abs_floor);
        (!((a - n).abs() <= tol)).then_some(GradientMismatch { index, analytic: a, numeric: n })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let mut p = vec![1.0, -2.0];
        let g = central_differences(&mut p, 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert_eq!(p, vec![1.0, -2.0]);
        assert!(first_mismatch(&g, &[2.0, 3.0], 1e-8, 1e-9).is_none());
        assert_eq!(first_mismatch(&[1.0, 2.0], &[1.0, 2.1], 1e-4, 1e-6).unwrap().index, 1);
        assert!(first_mismatch(&[f64::NAN], &[0.0], 1e-4, 1e-6).is_some());
    }
}
