//! Null ensembles shared by the parametric-bootstrap and permutation
//! samplers.
//!
//! Replicates are generated in fixed blocks of [`BLOCK`] rows. Each replicate
//! draws from its own seeded stream, and block boundaries do not depend on
//! the thread count, so ensembles and counts are bitwise reproducible.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{PbjError, Result};

pub const BLOCK: usize = 64;

/// Relative slack when comparing a null statistic with an observed one.
/// Statistics that agree to this precision are treated as ties, which count
/// as exceedances.
pub const TIE_TOL: f64 = 1e-10;

#[inline]
pub fn exceeds(null: f64, observed: f64) -> bool {
    null >= observed - TIE_TOL * observed.abs()
}

/// Location indices sorted by ascending statistic, ties broken by index.
pub fn ascending_order(stats: &[f64], active: &[usize]) -> Vec<usize> {
    let mut order = active.to_vec();
    order.sort_by(|&a, &b| stats[a].total_cmp(&stats[b]).then(a.cmp(&b)));
    order
}

/// A source of joint null statistics.
pub trait NullSampler: Sync {
    /// Number of locations per replicate.
    fn locations(&self) -> usize;

    fn replicates(&self) -> usize;

    fn df_num(&self) -> usize;

    fn seed(&self) -> u64;

    /// Location index for each output column; columns are in ascending
    /// order of the observed statistic.
    fn order(&self) -> &[usize];

    /// Writes replicates `first..first + count` row-major into `out`
    /// (`count × locations`).
    fn sample_block(&self, first: usize, count: usize, out: &mut [f64]);

    /// Four-byte tag used in binary dumps.
    fn magic(&self) -> [u8; 4];
}

/// `B × V` null statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NullEnsemble {
    samples: Vec<f64>,
    replicates: usize,
    locations: usize,
    seed: u64,
    df_num: usize,
    // Column k holds location order[k]; None means column k is location k.
    order: Option<Vec<usize>>,
    magic: [u8; 4],
}

impl NullEnsemble {
    pub fn new(
        samples: Vec<f64>,
        replicates: usize,
        locations: usize,
        df_num: usize,
        seed: u64,
        order: Option<Vec<usize>>,
    ) -> Result<Self> {
        if samples.len() != replicates * locations {
            return Err(PbjError::Dimension(format!(
                "{} samples for a {replicates}x{locations} ensemble",
                samples.len()
            )));
        }
        if let Some(o) = &order {
            if o.len() != locations {
                return Err(PbjError::Dimension(format!(
                    "order has {} entries for {locations} locations",
                    o.len()
                )));
            }
        }
        Ok(Self {
            samples,
            replicates,
            locations,
            seed,
            df_num,
            order,
            magic: *b"PBJM",
        })
    }

    /// Tag written at the start of binary dumps.
    pub fn with_magic(mut self, magic: [u8; 4]) -> Self {
        self.magic = magic;
        self
    }

    /// Materializes every replicate of `sampler`.
    pub fn from_sampler<S: NullSampler + ?Sized>(sampler: &S) -> Self {
        let v = sampler.locations();
        let b = sampler.replicates();
        let mut samples = vec![0.0; b * v];
        if v > 0 {
            samples
                .par_chunks_mut(BLOCK * v)
                .enumerate()
                .for_each(|(blk, out)| {
                    let count = out.len() / v;
                    sampler.sample_block(blk * BLOCK, count, out);
                });
        }
        Self {
            samples,
            replicates: b,
            locations: v,
            seed: sampler.seed(),
            df_num: sampler.df_num(),
            order: Some(sampler.order().to_vec()),
            magic: sampler.magic(),
        }
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn df_num(&self) -> usize {
        self.df_num
    }

    pub fn is_sorted(&self) -> bool {
        self.order.is_some()
    }

    pub fn order(&self) -> Option<&[usize]> {
        self.order.as_deref()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.samples[b * self.locations..(b + 1) * self.locations]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.replicates).map(|b| self.samples[b * self.locations + k]).collect()
    }

    /// Location index for column `k`.
    pub fn location_of(&self, k: usize) -> usize {
        match &self.order {
            Some(o) => o[k],
            None => k,
        }
    }

    /// Row-major little-endian dump: 16-byte header (magic, version, B, V)
    /// followed by `B × V` doubles.
    pub fn write_binary<W: Write>(&self, w: W) -> std::io::Result<()> {
        crate::io::write_binary_matrix(
            w,
            self.magic,
            self.replicates,
            self.locations,
            &self.samples,
        )
    }

    /// Reads a dump written by [`NullEnsemble::write_binary`]. Column order
    /// metadata is not part of the format, so the result is unsorted.
    pub fn read_binary<R: Read>(r: R, df_num: usize, seed: u64) -> Result<Self> {
        let (magic, rows, cols, data) = crate::io::read_binary_matrix(r)?;
        let mut ens = Self::new(data, rows, cols, df_num, seed, None)?;
        ens.magic = magic;
        Ok(ens)
    }
}

/// Exceedance counts accumulated over replicates, indexed by ascending
/// observed-statistic position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCounts {
    pub replicates: usize,
    /// `#{b : Z_(k)b ≥ Z_(k)0}`.
    pub marginal: Vec<u64>,
    /// `#{b : max_j Z_(j)b ≥ Z_(k)0}`.
    pub single_step: Vec<u64>,
    /// `#{b : max_{j ≤ k} Z_(j)b ≥ Z_(k)0}`.
    pub step_down: Vec<u64>,
}

impl JointCounts {
    pub fn zeros(locations: usize) -> Self {
        Self {
            replicates: 0,
            marginal: vec![0; locations],
            single_step: vec![0; locations],
            step_down: vec![0; locations],
        }
    }

    /// Adds one replicate; `row` and `observed` are both in ascending
    /// observed order.
    pub fn add_row(&mut self, row: &[f64], observed: &[f64]) {
        let row_max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut prefix_max = f64::NEG_INFINITY;
        for (k, (&z, &obs)) in row.iter().zip(observed).enumerate() {
            prefix_max = prefix_max.max(z);
            self.marginal[k] += exceeds(z, obs) as u64;
            self.step_down[k] += exceeds(prefix_max, obs) as u64;
            self.single_step[k] += exceeds(row_max, obs) as u64;
        }
        self.replicates += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.marginal.iter_mut().zip(&other.marginal) {
            *a += b;
        }
        for (a, b) in self.single_step.iter_mut().zip(&other.single_step) {
            *a += b;
        }
        for (a, b) in self.step_down.iter_mut().zip(&other.step_down) {
            *a += b;
        }
        self.replicates += other.replicates;
        self
    }

    /// Streams every replicate of `sampler` without retaining the ensemble.
    /// `observed_sorted` must follow `sampler.order()`.
    pub fn accumulate<S: NullSampler + ?Sized>(sampler: &S, observed_sorted: &[f64]) -> Self {
        Self::accumulate_many(sampler, &[observed_sorted]).remove(0)
    }

    /// Like [`JointCounts::accumulate`], but scores each replicate against
    /// several observed vectors (e.g. two statistic scales) in one pass.
    pub fn accumulate_many<S: NullSampler + ?Sized>(
        sampler: &S,
        observed_sorted: &[&[f64]],
    ) -> Vec<Self> {
        let v = sampler.locations();
        for obs in observed_sorted {
            assert_eq!(obs.len(), v, "observed length must match the sampler");
        }
        let b = sampler.replicates();
        let k = observed_sorted.len();
        let blocks = b.div_ceil(BLOCK);
        let zeros = || vec![JointCounts::zeros(v); k];
        (0..blocks)
            .into_par_iter()
            .map(|blk| {
                let first = blk * BLOCK;
                let count = BLOCK.min(b - first);
                let mut counts = zeros();
                if v == 0 {
                    for c in &mut counts {
                        c.replicates = count;
                    }
                    return counts;
                }
                let mut buf = vec![0.0; count * v];
                sampler.sample_block(first, count, &mut buf);
                for row in buf.chunks(v) {
                    for (c, obs) in counts.iter_mut().zip(observed_sorted) {
                        c.add_row(row, obs);
                    }
                }
                counts
            })
            .reduce(zeros, |a, b| {
                a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
            })
    }

    /// Counts for a materialized, sorted ensemble.
    pub fn from_ensemble(ens: &NullEnsemble, observed_sorted: &[f64]) -> Self {
        let v = ens.locations();
        let mut counts = JointCounts::zeros(v);
        for b in 0..ens.replicates() {
            counts.add_row(ens.row(b), observed_sorted);
        }
        counts
    }
}
