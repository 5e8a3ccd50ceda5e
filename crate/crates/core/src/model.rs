//! Mass-univariate linear model fitting and F-statistics.
//!
//! Residual-forming projectors are represented by thin orthonormal bases;
//! the `n × n` matrix `I - A(AᵀA)⁻¹Aᵀ` is never formed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{chi2_quantile_pq, f_cdf_sf};
use crate::error::{PbjError, Result};

/// Relative singular-value cutoff for the rank check.
pub const RANK_TOL: f64 = 1e-10;

/// A location is degenerate when `‖R_X y‖² ≤ DEGENERATE_TOL · ‖y‖²`.
pub const DEGENERATE_TOL: f64 = 1e-14;

/// Orthogonal projector onto the orthocomplement of `col(A)`, stored as an
/// orthonormal basis `Q` of `col(A)`.
#[derive(Debug, Clone)]
pub struct ResidualProjector {
    q: DMatrix<f64>,
}

impl ResidualProjector {
    /// Projector for an empty column set (the identity).
    pub fn identity(n: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, 0),
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn nrows(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// `R_A y = y - Q(Qᵀy)`.
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return y.clone();
        }
        let coef = self.q.tr_mul(y);
        y - &self.q * coef
    }

    pub fn apply_matrix(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        if self.q.ncols() == 0 {
            return y.clone();
        }
        let coef = self.q.tr_mul(y);
        y - &self.q * coef
    }
}

/// Builds the residual projector for `a`, which must have full column rank
/// `k < n`.
pub fn residual_projector(a: &DMatrix<f64>) -> Result<ResidualProjector> {
    check_full_rank(a)?;
    if a.ncols() == 0 {
        return Ok(ResidualProjector::identity(a.nrows()));
    }
    let qr = a.clone().qr();
    Ok(ResidualProjector { q: qr.q() })
}

fn check_full_rank(a: &DMatrix<f64>) -> Result<()> {
    let (n, k) = a.shape();
    if k >= n {
        return Err(PbjError::Dimension(format!(
            "need fewer columns than rows, got {n}x{k}"
        )));
    }
    if k == 0 {
        return Ok(());
    }
    if let Some((row, col)) = first_non_finite(a) {
        return Err(PbjError::NonFinite { row, col });
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax > 0.0 && smin > RANK_TOL * smax {
        return Ok(());
    }
    Err(PbjError::RankDeficient {
        columns: dependent_columns(a, RANK_TOL * smax.max(f64::MIN_POSITIVE)),
    })
}

/// Greedy Gram-Schmidt sweep naming the columns that add no new direction.
fn dependent_columns(a: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..a.ncols() {
        let mut r: DVector<f64> = a.column(j).into_owned();
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&r);
                r.axpy(-d, q, 1.0);
            }
        }
        let norm = r.norm();
        if norm <= tol {
            dependent.push(j);
        } else {
            basis.push(r / norm);
        }
    }
    if dependent.is_empty() {
        dependent.push(a.ncols() - 1);
    }
    dependent
}

fn first_non_finite(a: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            if !a[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Partitioned design `X = [X0, X1]`: nuisance covariates and tested
/// covariates.
#[derive(Debug, Clone)]
pub struct Design {
    x0: DMatrix<f64>,
    x1: DMatrix<f64>,
    // Householder Q of X; its first m0 columns span col(X0).
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    full: ResidualProjector,
    reduced: ResidualProjector,
}

impl Design {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        if x0.nrows() != x1.nrows() {
            return Err(PbjError::Dimension(format!(
                "X0 has {} rows but X1 has {}",
                x0.nrows(),
                x1.nrows()
            )));
        }
        if x1.ncols() == 0 {
            return Err(PbjError::invalid("at least one tested column is required"));
        }
        let n = x0.nrows();
        let (m0, m1) = (x0.ncols(), x1.ncols());
        let mut x = DMatrix::zeros(n, m0 + m1);
        x.columns_mut(0, m0).copy_from(&x0);
        x.columns_mut(m0, m1).copy_from(&x1);
        check_full_rank(&x)?;
        let qr = x.qr();
        let q = qr.q();
        let r = qr.r();
        let full = ResidualProjector { q: q.clone() };
        let reduced = ResidualProjector {
            q: q.columns(0, m0).into_owned(),
        };
        Ok(Self {
            x0,
            x1,
            q,
            r,
            full,
            reduced,
        })
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m0(&self) -> usize {
        self.x0.ncols()
    }

    pub fn m1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn m(&self) -> usize {
        self.m0() + self.m1()
    }

    /// Residual degrees of freedom `n - m`.
    pub fn df_residual(&self) -> usize {
        self.n() - self.m()
    }

    pub fn nuisance(&self) -> &DMatrix<f64> {
        &self.x0
    }

    pub fn tested(&self) -> &DMatrix<f64> {
        &self.x1
    }

    /// `R_X`.
    pub fn full_projector(&self) -> &ResidualProjector {
        &self.full
    }

    /// `R_{X0}`.
    pub fn reduced_projector(&self) -> &ResidualProjector {
        &self.reduced
    }

    /// Orthonormal basis of `col(X)`, nested so that the first `m0` columns
    /// span `col(X0)`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Outcome matrix `Y` (n × V) with one label per location.
#[derive(Debug, Clone)]
pub struct Outcomes {
    y: DMatrix<f64>,
    ids: Vec<String>,
}

impl Outcomes {
    pub fn new(y: DMatrix<f64>, ids: Vec<String>) -> Result<Self> {
        if y.ncols() == 0 {
            return Err(PbjError::invalid("outcome matrix has no locations"));
        }
        if ids.len() != y.ncols() {
            return Err(PbjError::Dimension(format!(
                "{} location ids for {} columns",
                ids.len(),
                y.ncols()
            )));
        }
        if let Some((row, col)) = first_non_finite(&y) {
            return Err(PbjError::NonFinite { row, col });
        }
        Ok(Self { y, ids })
    }

    /// Wraps a matrix with ids `v1, v2, ...`.
    pub fn from_matrix(y: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=y.ncols()).map(|v| format!("v{v}")).collect();
        Self::new(y, ids)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn v(&self) -> usize {
        self.y.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<String>) {
        (self.y, self.ids)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// `R_X Y`.
    pub residuals_full: DMatrix<f64>,
    /// `R_{X0} Y`.
    pub residuals_reduced: DMatrix<f64>,
    /// Least-squares coefficients `ζ̂_v`, one column per location (m × V).
    pub coefficients: DMatrix<f64>,
    /// `Y_vᵀ R_X Y_v / (n - m)`.
    pub sigma2: Vec<f64>,
    /// Coordinates `QᵀY` of each outcome in the nested design basis.
    pub projections: DMatrix<f64>,
    pub degenerate: Vec<bool>,
}

impl FitResult {
    pub fn degenerate_locations(&self) -> Vec<usize> {
        (0..self.degenerate.len())
            .filter(|&v| self.degenerate[v])
            .collect()
    }
}

pub fn fit_family(outcomes: &Outcomes, design: &Design) -> Result<FitResult> {
    let y = outcomes.matrix();
    if y.nrows() != design.n() {
        return Err(PbjError::Dimension(format!(
            "outcomes have {} rows but the design has {}",
            y.nrows(),
            design.n()
        )));
    }
    let q = design.basis();
    let m0 = design.m0();
    let projections = q.tr_mul(y);
    let residuals_full = y - q * &projections;
    let residuals_reduced = if m0 == 0 {
        y.clone()
    } else {
        y - q.columns(0, m0) * projections.rows(0, m0)
    };
    let coefficients = design
        .r
        .solve_upper_triangular(&projections)
        .ok_or_else(|| PbjError::Numerical("singular triangular factor".into()))?;

    let df = design.df_residual() as f64;
    let v = y.ncols();
    let mut sigma2 = Vec::with_capacity(v);
    let mut degenerate = Vec::with_capacity(v);
    for j in 0..v {
        let rss = residuals_full.column(j).norm_squared();
        let total = y.column(j).norm_squared();
        sigma2.push(rss / df);
        degenerate.push(total == 0.0 || rss <= DEGENERATE_TOL * total);
    }
    Ok(FitResult {
        residuals_full,
        residuals_reduced,
        coefficients,
        sigma2,
        projections,
        degenerate,
    })
}

/// Observed statistics for one family of tests.
#[derive(Debug, Clone)]
pub struct StatisticVector {
    pub f: Vec<f64>,
    /// `F` mapped onto the `χ²(m1)` scale.
    pub z: Vec<f64>,
    pub df_num: usize,
    pub df_den: usize,
    /// Degenerate locations carry `F = Z = 0` and are excluded from inference.
    pub degenerate: Vec<bool>,
}

impl StatisticVector {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| !self.degenerate[v]).collect()
    }

    /// `m1 · F`, the untransformed statistic on the asymptotic `χ²(m1)` scale.
    pub fn raw_chisq(&self) -> Vec<f64> {
        let m1 = self.df_num as f64;
        self.f.iter().map(|f| m1 * f).collect()
    }
}

/// Per-location F-statistics for `H0: β_v = 0`, together with their
/// chi-square transforms.
pub fn f_statistics(fit: &FitResult, design: &Design) -> Result<StatisticVector> {
    let v = fit.sigma2.len();
    let m0 = design.m0();
    let m1 = design.m1();
    let scale = design.df_residual() as f64 / m1 as f64;
    let mut f = Vec::with_capacity(v);
    for j in 0..v {
        if fit.degenerate[j] {
            f.push(0.0);
            continue;
        }
        // ‖R_{X0}y‖² - ‖R_X y‖² equals the squared norm of the tested
        // coordinates in the nested basis.
        let numer = fit.projections.view((m0, j), (m1, 1)).norm_squared();
        let denom = fit.residuals_full.column(j).norm_squared();
        f.push(scale * numer / denom);
    }
    let z = f_to_chisq(&f, m1, design.df_residual())?;
    Ok(StatisticVector {
        f,
        z,
        df_num: m1,
        df_den: design.df_residual(),
        degenerate: fit.degenerate.clone(),
    })
}

/// Maps `F(df_num, df_den)` statistics onto the `χ²(df_num)` scale by
/// quantile matching. Strictly increasing in `F` until the F tail
/// probability underflows double precision.
pub fn f_to_chisq(f: &[f64], df_num: usize, df_den: usize) -> Result<Vec<f64>> {
    if df_num == 0 || df_den == 0 {
        return Err(PbjError::invalid("degrees of freedom must be positive"));
    }
    if let Some(bad) = f.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(PbjError::invalid(format!(
            "F-statistic at index {bad} is {} (must be finite and non-negative)",
            f[bad]
        )));
    }
    let (d1, d2) = (df_num as f64, df_den as f64);
    Ok(f.par_iter().map(|&x| f_to_chisq_scalar(x, d1, d2)).collect())
}

/// Single-value form of [`f_to_chisq`] taking real-valued degrees of freedom.
pub fn f_to_chisq_scalar(f: f64, d1: f64, d2: f64) -> f64 {
    if f == 0.0 {
        return 0.0;
    }
    let (cdf, sf) = f_cdf_sf(f, d1, d2);
    let cdf = cdf.max(f64::MIN_POSITIVE);
    let sf = sf.max(f64::MIN_POSITIVE);
    chi2_quantile_pq(cdf, sf, d1)
}
