//! Freedman-Lane style permutation null.
//!
//! Reduced-model residuals `ε̂ = R_{X0} Y` are row-permuted and regressed on
//! the full model. Adding back the reduced fit `X0 α̂` is unnecessary: both
//! `R_{X0}` and `R_X` annihilate `col(X0)`, so the F-statistics are the same
//! either way.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::ensemble::{ascending_order, NullEnsemble, NullSampler};
use crate::error::{PbjError, Result};
use crate::model::{f_statistics, fit_family, Design, FitResult, Outcomes};
use crate::rng::{derive_seed, stream_rng};

/// Largest `n` accepted for exhaustive enumeration (`10! = 3 628 800`).
pub const MAX_EXHAUSTIVE_N: usize = 10;

const PERM_STREAM_TAG: u64 = 0x5045_524d;

/// Scale on which null statistics are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticScale {
    /// Plain F-statistics.
    F,
    /// F-statistics mapped onto the `χ²(m1)` scale.
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PermutationScheme {
    /// `B` uniform draws, with replacement across replicates.
    Random(usize),
    /// Every permutation of `0..n`, in lexicographic order.
    Exhaustive,
    /// Caller-supplied permutations.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    pub scheme: PermutationScheme,
    pub seed: u64,
}

impl PermutationPlan {
    pub fn random(replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(PbjError::invalid("number of permutations must be at least 1"));
        }
        Ok(Self {
            scheme: PermutationScheme::Random(replicates),
            seed,
        })
    }

    pub fn exhaustive() -> Self {
        Self {
            scheme: PermutationScheme::Exhaustive,
            seed: 0,
        }
    }

    pub fn explicit(perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.is_empty() {
            return Err(PbjError::invalid("at least one permutation is required"));
        }
        for (b, p) in perms.iter().enumerate() {
            let mut seen = vec![false; p.len()];
            for &i in p {
                if i >= p.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(PbjError::invalid(format!("permutation {b} is not a bijection")));
                }
            }
        }
        Ok(Self {
            scheme: PermutationScheme::Explicit(perms),
            seed: 0,
        })
    }

    /// Number of replicates for `n` observations.
    pub fn replicates(&self, n: usize) -> Result<usize> {
        match &self.scheme {
            PermutationScheme::Random(b) => Ok(*b),
            PermutationScheme::Exhaustive => {
                if n > MAX_EXHAUSTIVE_N {
                    return Err(PbjError::invalid(format!(
                        "exhaustive enumeration supports n <= {MAX_EXHAUSTIVE_N}, got {n}"
                    )));
                }
                Ok((1..=n).product())
            }
            PermutationScheme::Explicit(perms) => {
                if let Some(p) = perms.iter().find(|p| p.len() != n) {
                    return Err(PbjError::Dimension(format!(
                        "permutation of length {} for {n} observations",
                        p.len()
                    )));
                }
                Ok(perms.len())
            }
        }
    }

    /// Replicate `b` as a map `i -> π(i)`: row `i` of the permuted data is row
    /// `π(i)` of the residuals.
    pub fn permutation(&self, b: usize, n: usize) -> Vec<usize> {
        match &self.scheme {
            PermutationScheme::Random(_) => {
                let mut rng = stream_rng(derive_seed(self.seed, PERM_STREAM_TAG), b as u64);
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            }
            PermutationScheme::Exhaustive => nth_permutation(b, n),
            PermutationScheme::Explicit(perms) => perms[b].clone(),
        }
    }
}

/// `b`-th permutation of `0..n` in lexicographic order (Lehmer decoding).
fn nth_permutation(mut b: usize, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut fact: usize = (1..n).product::<usize>().max(1);
    let mut out = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let idx = b / fact;
        b %= fact;
        out.push(pool.remove(idx));
        if k > 0 {
            fact /= k;
        }
    }
    out
}

/// Permutation sampler built from a fitted family.
#[derive(Debug, Clone)]
pub struct PermutationSampler {
    // Reduced-model residuals, columns in ascending observed order.
    resid: DMatrix<f64>,
    resid_ss: Vec<f64>,
    q: DMatrix<f64>,
    m0: usize,
    m1: usize,
    df_den: usize,
    scale: StatisticScale,
    plan: PermutationPlan,
    replicates: usize,
    order: Vec<usize>,
}

impl PermutationSampler {
    pub fn new(
        fit: &FitResult,
        design: &Design,
        plan: PermutationPlan,
        scale: StatisticScale,
        order: Vec<usize>,
    ) -> Result<Self> {
        let n = design.n();
        let replicates = plan.replicates(n)?;
        if replicates == 0 {
            return Err(PbjError::invalid("number of permutations must be at least 1"));
        }
        let mut resid = DMatrix::zeros(n, order.len());
        for (k, &v) in order.iter().enumerate() {
            resid.set_column(k, &fit.residuals_reduced.column(v));
        }
        let resid_ss = (0..order.len()).map(|k| resid.column(k).norm_squared()).collect();
        Ok(Self {
            resid,
            resid_ss,
            q: design.basis().clone(),
            m0: design.m0(),
            m1: design.m1(),
            df_den: design.df_residual(),
            scale,
            plan,
            replicates,
            order,
        })
    }

    pub fn scale(&self) -> StatisticScale {
        self.scale
    }
}

impl NullSampler for PermutationSampler {
    fn locations(&self) -> usize {
        self.order.len()
    }

    fn replicates(&self) -> usize {
        self.replicates
    }

    fn df_num(&self) -> usize {
        self.m1
    }

    fn seed(&self) -> u64 {
        self.plan.seed
    }

    fn order(&self) -> &[usize] {
        &self.order
    }

    fn magic(&self) -> [u8; 4] {
        *b"PERM"
    }

    fn sample_block(&self, first: usize, count: usize, out: &mut [f64]) {
        let n = self.q.nrows();
        let m = self.q.ncols();
        let v = self.order.len();
        // Row block k holds Qᵀ P_b, so (Qᵀ P_b) ε̂ are the full-model
        // coordinates of the permuted residuals.
        let mut a = DMatrix::zeros(count * m, n);
        for k in 0..count {
            let perm = self.plan.permutation(first + k, n);
            for (i, &src) in perm.iter().enumerate() {
                for j in 0..m {
                    a[(k * m + j, src)] = self.q[(i, j)];
                }
            }
        }
        let coords = a * &self.resid;
        let scale = self.df_den as f64 / self.m1 as f64;
        let (d1, d2) = (self.m1 as f64, self.df_den as f64);
        for loc in 0..v {
            let col = coords.column(loc);
            for k in 0..count {
                let c = &col.as_slice()[k * m..(k + 1) * m];
                let tested: f64 = c[self.m0..].iter().map(|x| x * x).sum();
                let fitted: f64 = tested + c[..self.m0].iter().map(|x| x * x).sum::<f64>();
                let rss = (self.resid_ss[loc] - fitted).max(f64::MIN_POSITIVE);
                let f = scale * tested / rss;
                out[k * v + loc] = match self.scale {
                    StatisticScale::F => f,
                    StatisticScale::ChiSquare => crate::model::f_to_chisq_scalar(f, d1, d2),
                };
            }
        }
    }
}

/// Permutation null ensemble on the chi-square scale, columns ordered by
/// ascending observed F among non-degenerate locations.
pub fn permutation_null(
    outcomes: &Outcomes,
    design: &Design,
    plan: &PermutationPlan,
) -> Result<NullEnsemble> {
    let fit = fit_family(outcomes, design)?;
    let stats = f_statistics(&fit, design)?;
    let order = ascending_order(&stats.f, &stats.active());
    let sampler = PermutationSampler::new(&fit, design, plan.clone(), StatisticScale::ChiSquare, order)?;
    Ok(NullEnsemble::from_sampler(&sampler))
}
