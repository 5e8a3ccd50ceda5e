//! Distribution functions for the chi-square, F and normal laws.
//!
//! Everything is built on the regularized incomplete gamma and beta
//! functions. Each evaluation returns the lower and upper tail together so
//! that whichever tail is small is computed directly rather than as
//! `1 - (something close to 1)`.

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        return std::f64::consts::PI.ln() - s.abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let ln_pref = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // Series for P.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (sum.ln() + ln_pref).exp().min(1.0);
        (p, 1.0 - p)
    } else {
        // Continued fraction for Q (modified Lentz).
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (h.ln() + ln_pref).exp().min(1.0);
        (1.0 - q, q)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `(I_x(a, b), 1 - I_x(a, b))`.
///
/// `y` must equal `1 - x`; passing it separately keeps full precision when
/// `x` is close to one.
pub fn beta_pq(x: f64, y: f64, a: f64, b: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if y <= 0.0 {
        return (1.0, 0.0);
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * y.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        let lower = (ln_bt + beta_cf(a, b, x).ln()).exp() / a;
        let lower = lower.min(1.0);
        (lower, 1.0 - lower)
    } else {
        let upper = (ln_bt + beta_cf(b, a, y).ln()).exp() / b;
        let upper = upper.min(1.0);
        (1.0 - upper, upper)
    }
}

/// Chi-square `(cdf, sf)` at `x` with `df` degrees of freedom.
pub fn chi2_cdf_sf(x: f64, df: f64) -> (f64, f64) {
    gamma_pq(0.5 * df, 0.5 * x)
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    chi2_cdf_sf(x, df).0
}

/// Upper-tail probability `P(X > x)` for `X ~ χ²(df)`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    chi2_cdf_sf(x, df).1
}

/// F distribution `(cdf, sf)` at `f` with `(d1, d2)` degrees of freedom.
pub fn f_cdf_sf(f: f64, d1: f64, d2: f64) -> (f64, f64) {
    if f <= 0.0 {
        return (0.0, 1.0);
    }
    if f.is_infinite() {
        return (1.0, 0.0);
    }
    let denom = d1 * f + d2;
    let x = d1 * f / denom;
    let y = d2 / denom;
    beta_pq(x, y, 0.5 * d1, 0.5 * d2)
}

pub fn f_cdf(f: f64, d1: f64, d2: f64) -> f64 {
    f_cdf_sf(f, d1, d2).0
}

pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    f_cdf_sf(f, d1, d2).1
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    let half_tail = 0.5 * gamma_pq(0.5, 0.5 * z * z).1;
    if z >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        -chi2_quantile_pq(1.0 - 2.0 * p, 2.0 * p, 1.0).sqrt()
    } else {
        let q = 1.0 - p;
        chi2_quantile_pq(1.0 - 2.0 * q, 2.0 * q, 1.0).sqrt()
    }
}

/// Chi-square quantile for lower-tail probability `p`.
pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    chi2_quantile_pq(p, 1.0 - p, df)
}

/// Chi-square quantile for upper-tail probability `q`.
pub fn chi2_isf(q: f64, df: f64) -> f64 {
    chi2_quantile_pq(1.0 - q, q, df)
}

/// Chi-square quantile given both tails, `p + q = 1`. The smaller of the two
/// drives the root search so that extreme tails keep relative precision.
pub fn chi2_quantile_pq(p: f64, q: f64, df: f64) -> f64 {
    2.0 * gamma_quantile_pq(0.5 * df, p, q)
}

// Rough normal quantile used only to seed the root search.
fn approx_normal_quantile(p: f64) -> f64 {
    let (pp, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let t = (-2.0 * pp.max(TINY).ln()).sqrt();
    let z = t - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
        / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    sign * z
}

fn gamma_quantile_pq(a: f64, p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if q <= 0.0 {
        return f64::INFINITY;
    }
    let lower = p <= q;
    let ln_target = if lower { p.ln() } else { q.ln() };
    let ln_ga = ln_gamma(a);

    // Initial guess: Wilson-Hilferty, falling back to the small-x series.
    let z = if lower {
        approx_normal_quantile(p)
    } else {
        -approx_normal_quantile(q)
    };
    let c = 1.0 - 1.0 / (9.0 * a) + z / (9.0 * a).sqrt();
    let mut x = if c > 0.0 { a * c * c * c } else { 0.0 };
    if lower {
        let small = ((ln_target + ln_gamma(a + 1.0)) / a).exp();
        if x <= 0.0 || small < x {
            x = small;
        }
    }
    if x <= 0.0 || !x.is_finite() {
        x = a.max(1.0);
    }

    // Residual in log-probability, positive when x is too large, plus the
    // Newton slope for the variable the search moves in.
    let eval = |x: f64| -> (f64, f64) {
        let (pl, ql) = gamma_pq(a, x);
        let ln_dens = (a - 1.0) * x.ln() - x - ln_ga;
        if lower {
            let pl = pl.max(f64::MIN_POSITIVE);
            (pl.ln() - ln_target, (ln_dens + x.ln()).exp() / pl)
        } else {
            let ql = ql.max(f64::MIN_POSITIVE);
            (ln_target - ql.ln(), ln_dens.exp() / ql)
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let (r, slope) = eval(x);
        if r == 0.0 {
            return x;
        }
        if r > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let next = if lower {
            // Newton in ln x: ln P is close to linear there in the lower tail.
            x * (-r / slope).clamp(-50.0, 50.0).exp()
        } else {
            x - r / slope
        };
        let next = if next.is_finite() && next > lo && next < hi {
            next
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * x.max(1.0)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        x = next;
    }
    if hi.is_finite() {
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            if eval(mid).0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = 0.5 * (lo + hi);
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        return mid;
    }
    x
}
