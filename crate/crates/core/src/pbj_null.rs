//! Parametric-bootstrap joint null: diagonals of a singular Wishart matrix
//! calibrated to the residual correlation of the test statistics.
//!
//! With `E` the unit-norm full-model residuals (columns in ascending order
//! of the observed statistic) and the thin SVD `E = U D M̃ᵀ`, the factor
//! `M = M̃ D` satisfies `M Mᵀ = EᵀE = Σ̂`. A replicate draws an `r × m1`
//! standard normal `S_b` and returns the row norms of `M S_b`, i.e. the
//! diagonal of `M S_b S_bᵀ Mᵀ`, without forming any `V × V` matrix.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::{NullEnsemble, NullSampler};
use crate::error::{PbjError, Result};
use crate::rng::stream_rng;

/// Relative singular-value cutoff used to determine the rank of `E`.
pub const BASIS_RANK_TOL: f64 = 1e-10;

/// Columns of `residuals` reordered by `order` and scaled to unit norm.
pub fn standardize_residuals(residuals: &DMatrix<f64>, order: &[usize]) -> Result<DMatrix<f64>> {
    let n = residuals.nrows();
    let mut e = DMatrix::zeros(n, order.len());
    for (k, &v) in order.iter().enumerate() {
        if v >= residuals.ncols() {
            return Err(PbjError::Dimension(format!(
                "order refers to column {v} of a {}-column matrix",
                residuals.ncols()
            )));
        }
        let col = residuals.column(v);
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(PbjError::invalid(format!(
                "residual column {v} has zero norm; degenerate locations must be excluded"
            )));
        }
        e.set_column(k, &(col / norm));
    }
    Ok(e)
}

/// Rank-`r` factor of `Σ̂` with rows in ascending observed-statistic order.
#[derive(Debug, Clone)]
pub struct ResidualBasis {
    m: DMatrix<f64>,
    order: Vec<usize>,
}

impl ResidualBasis {
    /// Basis for a known correlation factor (`Σ = M Mᵀ`).
    pub fn from_factor(m: DMatrix<f64>, order: Vec<usize>) -> Result<Self> {
        if m.nrows() != order.len() {
            return Err(PbjError::Dimension(format!(
                "factor has {} rows for {} locations",
                m.nrows(),
                order.len()
            )));
        }
        Ok(Self { m, order })
    }

    /// `Σ = I`: independent `χ²(m1)` nulls.
    pub fn identity(order: Vec<usize>) -> Self {
        let v = order.len();
        Self {
            m: DMatrix::identity(v, v),
            order,
        }
    }

    /// The `V × r` factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rank(&self) -> usize {
        self.m.ncols()
    }

    pub fn locations(&self) -> usize {
        self.m.nrows()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `‖row_v(M)‖²`, which equals `Σ̂_vv`.
    pub fn row_sum_squares(&self) -> Vec<f64> {
        (0..self.m.nrows()).map(|i| self.m.row(i).norm_squared()).collect()
    }
}

/// Thin SVD of the standardized residuals. `order` records which location
/// each column of `e` belongs to.
pub fn build_basis(e: &DMatrix<f64>, order: Vec<usize>) -> Result<ResidualBasis> {
    if e.ncols() != order.len() {
        return Err(PbjError::Dimension(format!(
            "E has {} columns for {} locations",
            e.ncols(),
            order.len()
        )));
    }
    let v = e.ncols();
    if v == 0 {
        return Ok(ResidualBasis {
            m: DMatrix::zeros(0, 0),
            order,
        });
    }
    let svd = e.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| PbjError::Numerical("SVD did not return right singular vectors".into()))?;
    let sv = &svd.singular_values;
    let smax = sv.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(PbjError::Numerical("SVD of the residual matrix failed".into()));
    }
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&i| sv[i] > BASIS_RANK_TOL * smax)
        .collect();
    let mut m = DMatrix::zeros(v, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let d = sv[i];
        for row in 0..v {
            m[(row, j)] = v_t[(i, row)] * d;
        }
    }
    Ok(ResidualBasis { m, order })
}

/// Parametric-bootstrap sampler over a [`ResidualBasis`].
#[derive(Debug, Clone)]
pub struct PbjSampler<'a> {
    basis: &'a ResidualBasis,
    df_num: usize,
    replicates: usize,
    seed: u64,
}

impl<'a> PbjSampler<'a> {
    pub fn new(basis: &'a ResidualBasis, df_num: usize, replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(PbjError::invalid("number of replicates must be at least 1"));
        }
        if df_num == 0 {
            return Err(PbjError::invalid("numerator degrees of freedom must be at least 1"));
        }
        Ok(Self {
            basis,
            df_num,
            replicates,
            seed,
        })
    }
}

impl NullSampler for PbjSampler<'_> {
    fn locations(&self) -> usize {
        self.basis.locations()
    }

    fn replicates(&self) -> usize {
        self.replicates
    }

    fn df_num(&self) -> usize {
        self.df_num
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn order(&self) -> &[usize] {
        self.basis.order()
    }

    fn magic(&self) -> [u8; 4] {
        *b"PBJN"
    }

    fn sample_block(&self, first: usize, count: usize, out: &mut [f64]) {
        let v = self.basis.locations();
        let r = self.basis.rank();
        let m1 = self.df_num;
        let mut s = DMatrix::zeros(r, m1 * count);
        for k in 0..count {
            let mut rng = stream_rng(self.seed, (first + k) as u64);
            for l in 0..m1 {
                for x in s.column_mut(k * m1 + l).iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
            }
        }
        let p = self.basis.factor() * s;
        for k in 0..count {
            let row = &mut out[k * v..(k + 1) * v];
            row.fill(0.0);
            for l in 0..m1 {
                for (dst, x) in row.iter_mut().zip(p.column(k * m1 + l).iter()) {
                    *dst += x * x;
                }
            }
        }
    }
}

/// Draws `replicates` joint null vectors. Column `k` of the result belongs
/// to location `basis.order()[k]`.
pub fn sample_null(
    basis: &ResidualBasis,
    df_num: usize,
    replicates: usize,
    seed: u64,
) -> Result<NullEnsemble> {
    let sampler = PbjSampler::new(basis, df_num, replicates, seed)?;
    Ok(NullEnsemble::from_sampler(&sampler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn randn(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 0);
        DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn standardized_columns_have_unit_norm() {
        let r = randn(15, 6, 1) * 40.0;
        let e = standardize_residuals(&r, &[5, 0, 2, 1, 4, 3]).unwrap();
        for j in 0..6 {
            assert!((e.column(j).norm() - 1.0).abs() < 1e-12);
        }
        // Column 0 of E is column 5 of the input.
        let expect = r.column(5) / r.column(5).norm();
        assert!((e.column(0) - expect).amax() < 1e-15);
    }

    #[test]
    fn identical_columns_are_perfectly_correlated() {
        let mut r = randn(10, 2, 2);
        let c = r.column(0) * 3.0;
        r.set_column(1, &c);
        let e = standardize_residuals(&r, &[0, 1]).unwrap();
        let g = e.tr_mul(&e);
        assert!((g[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_rejected() {
        let r = DMatrix::zeros(5, 1);
        assert!(standardize_residuals(&r, &[0]).is_err());
    }

    #[test]
    fn orthonormal_columns_give_identity_gram() {
        let q = randn(20, 4, 3).qr().q();
        let basis = build_basis(&q, (0..4).collect()).unwrap();
        let g = basis.factor() * basis.factor().transpose();
        assert!((g - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn rank_is_capped_by_residual_dimension() {
        // Three unit residual columns living in a 2-dimensional subspace.
        let sub = randn(9, 2, 4).qr().q();
        let coef = randn(2, 3, 5);
        let raw = &sub * coef;
        let e = standardize_residuals(&raw, &[0, 1, 2]).unwrap();
        let basis = build_basis(&e, vec![0, 1, 2]).unwrap();
        assert_eq!(basis.rank(), 2);
        let g = basis.factor() * basis.factor().transpose();
        assert!((g - e.tr_mul(&e)).amax() < 1e-10);
    }

    #[test]
    fn row_sums_of_squares_are_one() {
        let e = standardize_residuals(&randn(12, 30, 6), &(0..30).collect::<Vec<_>>()).unwrap();
        let basis = build_basis(&e, (0..30).collect()).unwrap();
        for s in basis.row_sum_squares() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(basis.rank() <= 12);
    }

    #[test]
    fn samples_are_nonnegative_and_reproducible() {
        let e = standardize_residuals(&randn(25, 8, 7), &(0..8).collect::<Vec<_>>()).unwrap();
        let basis = build_basis(&e, (0..8).collect()).unwrap();
        let a = sample_null(&basis, 3, 300, 99).unwrap();
        let b = sample_null(&basis, 3, 300, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().iter().all(|&x| x >= 0.0));
        let c = sample_null(&basis, 3, 300, 100).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn zero_replicates_is_an_error() {
        let basis = ResidualBasis::identity(vec![0]);
        assert!(sample_null(&basis, 1, 0, 1).is_err());
        assert!(sample_null(&basis, 0, 10, 1).is_err());
    }
}
