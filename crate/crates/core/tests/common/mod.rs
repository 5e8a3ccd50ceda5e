#![allow(dead_code)]

use nalgebra::DMatrix;
use pbj::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};

pub fn randn(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng))
}

/// `I - A (AᵀA)⁻¹ Aᵀ`, formed explicitly through the normal equations.
pub fn dense_residual_former(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let ata_inv = (a.transpose() * a).try_inverse().expect("AᵀA invertible");
    DMatrix::identity(n, n) - a * ata_inv * a.transpose()
}

/// F-statistic of column `v` computed from explicit projectors.
pub fn dense_f(y: &DMatrix<f64>, x0: &DMatrix<f64>, x1: &DMatrix<f64>, v: usize) -> f64 {
    let n = y.nrows();
    let (m0, m1) = (x0.ncols(), x1.ncols());
    let mut x = DMatrix::zeros(n, m0 + m1);
    x.columns_mut(0, m0).copy_from(x0);
    x.columns_mut(m0, m1).copy_from(x1);
    let r0 = dense_residual_former(x0);
    let r = dense_residual_former(&x);
    let yv = y.column(v).into_owned();
    // R0 - R is itself a projector, so the extra sum of squares is a squared
    // norm; this avoids subtracting two residual sums of squares.
    let num = ((&r0 - &r) * &yv).norm_squared();
    let den = (&r * &yv).norm_squared();
    (n - m0 - m1) as f64 * num / (m1 as f64 * den)
}

/// Design with an intercept plus `extra` random nuisance columns and `m1`
/// random tested columns.
pub fn random_design(n: usize, extra: usize, m1: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x0 = randn(n, extra + 1, seed);
    x0.column_mut(0).fill(1.0);
    let x1 = randn(n, m1, seed.wrapping_add(7_777));
    (x0, x1)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
        heap(k - 1, a, out);
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Exact Freedman-Lane p-value of column `v` over all `n!` permutations of
/// the reduced-model residuals, with near-ties counted as exceedances.
pub fn brute_force_permutation_p(y: &DMatrix<f64>, x0: &DMatrix<f64>, x1: &DMatrix<f64>, v: usize) -> (usize, usize) {
    let observed = dense_f(y, x0, x1, v);
    let resid = dense_residual_former(x0) * y.column(v);
    let perms = all_permutations(y.nrows());
    let hits = perms
        .iter()
        .filter(|p| {
            let yp = DMatrix::from_fn(y.nrows(), 1, |i, _| resid[p[i]]);
            dense_f(&yp, x0, x1, 0) >= observed - 1e-10 * observed.abs()
        })
        .count();
    (hits, perms.len())
}
