//! Goodness-of-fit checks for sampled null distributions.

use crate::error::{PbjError, Result};

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n(x) - F(x)|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(PbjError::invalid("empty sample"));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(PbjError::invalid("sample contains NaN"));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`, with
/// Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test against a continuous distribution; returns `(D, p)`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let d = ks_statistic(sample, cdf)?;
    Ok((d, ks_p_value(d, sample.len())))
}
