//! Yeo-Johnson power transformation with a profile-likelihood estimate of
//! the transformation parameter.

use crate::error::{PbjError, Result};

const LAMBDA_LO: f64 = -3.0;
const LAMBDA_HI: f64 = 3.0;
const LAMBDA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YeoJohnsonFit {
    pub lambda: f64,
    /// Profile log-likelihood at `lambda`.
    pub log_lik: f64,
}

fn transform_one(y: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return y;
    }
    if y >= 0.0 {
        let l = y.ln_1p();
        if lambda.abs() < 1e-12 {
            l
        } else {
            (lambda * l).exp_m1() / lambda
        }
    } else {
        let l = (-y).ln_1p();
        let e = 2.0 - lambda;
        if e.abs() < 1e-12 {
            -l
        } else {
            -(e * l).exp_m1() / e
        }
    }
}

/// Applies the transformation elementwise. Strictly increasing in `y` for
/// every `lambda`; `lambda = 1` is the identity.
pub fn yeo_johnson(y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !lambda.is_finite() {
        return Err(PbjError::invalid("lambda must be finite"));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(PbjError::invalid(format!("non-finite input at index {i}")));
    }
    Ok(y.iter().map(|&v| transform_one(v, lambda)).collect())
}

/// Gaussian profile log-likelihood of the transformed sample, including the
/// log-Jacobian `(λ - 1) Σ sign(y) log(|y| + 1)`.
pub fn profile_log_lik(y: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let t: Vec<f64> = y.iter().map(|&v| transform_one(v, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = y.iter().map(|&v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Maximum profile-likelihood estimate of `lambda` on `[-3, 3]` by
/// golden-section search.
pub fn yeo_johnson_mle(y: &[f64]) -> Result<YeoJohnsonFit> {
    if y.len() < 10 {
        return Err(PbjError::invalid(format!(
            "need at least 10 observations, got {}",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(PbjError::invalid(format!("non-finite input at index {i}")));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(PbjError::invalid(
            "constant sample: the profile likelihood is flat",
        ));
    }

    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (LAMBDA_LO, LAMBDA_HI);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = profile_log_lik(y, c);
    let mut fd = profile_log_lik(y, d);
    while b - a > LAMBDA_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = profile_log_lik(y, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = profile_log_lik(y, d);
        }
    }
    let lambda = 0.5 * (a + b);
    let log_lik = profile_log_lik(y, lambda);
    if !log_lik.is_finite() {
        return Err(PbjError::Numerical(
            "profile likelihood is not finite at the optimum".into(),
        ));
    }
    Ok(YeoJohnsonFit { lambda, log_lik })
}
