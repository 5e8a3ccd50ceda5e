//! Family-wise error adjusted p-values: Bonferroni, Holm, and joint
//! single-step / step-down adjustments from a null ensemble.

use std::fmt;

use crate::distributions::chi2_sf;
use crate::ensemble::{JointCounts, NullEnsemble};
use crate::error::{PbjError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Procedure {
    Bonferroni,
    Holm,
    JointSingleStep,
    JointStepDown,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Bonferroni => "bonferroni",
            Procedure::Holm => "holm",
            Procedure::JointSingleStep => "joint-single-step",
            Procedure::JointStepDown => "joint-step-down",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOptions {
    pub alpha: f64,
    /// Use `(1 + count) / (1 + B)` instead of `count / B`.
    pub smoothed: bool,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            smoothed: false,
        }
    }
}

/// Adjusted p-values for one procedure, in location order.
///
/// For joint procedures `p_raw` holds the ensemble's own marginal p-values,
/// `#{b : Z_vb ≥ Z_v0} / B`, which the joint adjustment can never undercut.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedPValues {
    pub procedure: Procedure,
    pub p_raw: Vec<f64>,
    pub p_adj: Vec<f64>,
    pub alpha: f64,
    pub rejected: Vec<bool>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
}

impl AdjustedPValues {
    fn build(
        procedure: Procedure,
        p_raw: Vec<f64>,
        p_adj: Vec<f64>,
        alpha: f64,
        replicates: Option<usize>,
        seed: Option<u64>,
    ) -> Self {
        let rejected = p_adj.iter().map(|&p| p < alpha).collect();
        Self {
            procedure,
            p_raw,
            p_adj,
            alpha,
            rejected,
            replicates,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.p_adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_adj.is_empty()
    }

    pub fn rejections(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.rejected[v]).collect()
    }
}

/// Upper-tail `χ²(df_num)` p-values of transformed statistics.
pub fn marginal_p(z: &[f64], df_num: usize) -> Vec<f64> {
    let df = df_num as f64;
    z.iter().map(|&x| chi2_sf(x, df)).collect()
}

fn check_p(p_raw: &[f64]) -> Result<()> {
    if p_raw.is_empty() {
        return Err(PbjError::invalid("no p-values to adjust"));
    }
    if let Some(i) = p_raw.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(PbjError::invalid(format!(
            "p-value at index {i} is outside [0, 1]: {}",
            p_raw[i]
        )));
    }
    Ok(())
}

/// `p_adj = min(1, V p)`.
pub fn bonferroni(p_raw: &[f64], alpha: f64) -> Result<AdjustedPValues> {
    check_p(p_raw)?;
    let v = p_raw.len() as f64;
    let p_adj = p_raw.iter().map(|&p| (v * p).min(1.0)).collect();
    Ok(AdjustedPValues::build(
        Procedure::Bonferroni,
        p_raw.to_vec(),
        p_adj,
        alpha,
        None,
        None,
    ))
}

/// Holm step-down: with `p_(1) ≤ … ≤ p_(V)`,
/// `p_adj_(k) = min(1, max_{j ≤ k} (V + 1 - j) p_(j))`.
pub fn holm(p_raw: &[f64], alpha: f64) -> Result<AdjustedPValues> {
    check_p(p_raw)?;
    let v = p_raw.len();
    let mut idx: Vec<usize> = (0..v).collect();
    idx.sort_by(|&a, &b| p_raw[a].total_cmp(&p_raw[b]).then(a.cmp(&b)));
    let mut p_adj = vec![0.0; v];
    let mut running = 0.0_f64;
    for (k, &i) in idx.iter().enumerate() {
        running = running.max((v - k) as f64 * p_raw[i]);
        p_adj[i] = running.min(1.0);
    }
    Ok(AdjustedPValues::build(
        Procedure::Holm,
        p_raw.to_vec(),
        p_adj,
        alpha,
        None,
        None,
    ))
}

fn estimate(count: u64, replicates: usize, smoothed: bool) -> f64 {
    if smoothed {
        (1 + count) as f64 / (1 + replicates) as f64
    } else {
        count as f64 / replicates as f64
    }
}

/// Turns streamed exceedance counts into adjusted p-values. `order[k]` is
/// the location at ascending position `k`; locations absent from `order`
/// get `p = 1`.
pub fn joint_from_counts(
    counts: &JointCounts,
    order: &[usize],
    n_locations: usize,
    procedure: Procedure,
    opts: &JointOptions,
    seed: Option<u64>,
) -> Result<AdjustedPValues> {
    let b = counts.replicates;
    if b == 0 {
        return Err(PbjError::invalid("null ensemble has no replicates"));
    }
    if counts.marginal.len() != order.len() {
        return Err(PbjError::Dimension(format!(
            "{} counts for {} ordered locations",
            counts.marginal.len(),
            order.len()
        )));
    }
    if let Some(&bad) = order.iter().find(|&&v| v >= n_locations) {
        return Err(PbjError::Dimension(format!(
            "location {bad} out of range for {n_locations} locations"
        )));
    }
    let mut p_raw = vec![1.0; n_locations];
    let mut p_adj = vec![1.0; n_locations];
    for (k, &loc) in order.iter().enumerate() {
        p_raw[loc] = estimate(counts.marginal[k], b, opts.smoothed);
    }
    match procedure {
        Procedure::JointSingleStep => {
            for (k, &loc) in order.iter().enumerate() {
                p_adj[loc] = estimate(counts.single_step[k], b, opts.smoothed);
            }
        }
        Procedure::JointStepDown => {
            // Monotone from the largest statistic down.
            let mut running = 0.0_f64;
            for (k, &loc) in order.iter().enumerate().rev() {
                running = running.max(estimate(counts.step_down[k], b, opts.smoothed));
                p_adj[loc] = running;
            }
        }
        other => {
            return Err(PbjError::invalid(format!(
                "{other} is not a joint procedure"
            )))
        }
    }
    Ok(AdjustedPValues::build(
        procedure,
        p_raw,
        p_adj,
        opts.alpha,
        Some(b),
        seed,
    ))
}

fn ensemble_counts(observed: &[f64], nulls: &NullEnsemble) -> Result<(JointCounts, Vec<usize>)> {
    let order: Vec<usize> = match nulls.order() {
        Some(o) => o.to_vec(),
        None => {
            if nulls.locations() != observed.len() {
                return Err(PbjError::Dimension(format!(
                    "ensemble has {} locations but {} statistics were observed",
                    nulls.locations(),
                    observed.len()
                )));
            }
            (0..observed.len()).collect()
        }
    };
    if let Some(&bad) = order.iter().find(|&&v| v >= observed.len()) {
        return Err(PbjError::Dimension(format!(
            "ensemble refers to location {bad} but only {} statistics were observed",
            observed.len()
        )));
    }
    let sorted: Vec<f64> = order.iter().map(|&v| observed[v]).collect();
    Ok((JointCounts::from_ensemble(nulls, &sorted), order))
}

/// Single-step joint adjustment `p̃_v = #{b : max_k Z_kb ≥ Z_v0} / B`.
pub fn joint_single_step(
    observed: &[f64],
    nulls: &NullEnsemble,
    opts: &JointOptions,
) -> Result<AdjustedPValues> {
    if nulls.replicates() == 0 {
        return Err(PbjError::invalid("null ensemble has no replicates"));
    }
    let (counts, order) = ensemble_counts(observed, nulls)?;
    joint_from_counts(
        &counts,
        &order,
        observed.len(),
        Procedure::JointSingleStep,
        opts,
        Some(nulls.seed()),
    )
}

/// Step-down joint adjustment over the ascending ordering carried by the
/// ensemble: `p*_(v) = #{b : max_{k ≤ v} Z_(k)b ≥ Z_(v)0} / B`, made
/// monotone from the most significant location downwards.
pub fn joint_step_down(
    observed: &[f64],
    nulls: &NullEnsemble,
    opts: &JointOptions,
) -> Result<AdjustedPValues> {
    if nulls.replicates() == 0 {
        return Err(PbjError::invalid("null ensemble has no replicates"));
    }
    let order = nulls.order().ok_or_else(|| {
        PbjError::invalid("step-down adjustment needs an ensemble sorted by observed statistic")
    })?;
    if order.iter().any(|&v| v >= observed.len()) {
        return Err(PbjError::Dimension(
            "ensemble refers to locations beyond the observed statistics".into(),
        ));
    }
    if order
        .windows(2)
        .any(|w| observed[w[0]] > observed[w[1]])
    {
        return Err(PbjError::invalid(
            "ensemble ordering does not match the observed statistics",
        ));
    }
    let (counts, order) = ensemble_counts(observed, nulls)?;
    joint_from_counts(
        &counts,
        &order,
        observed.len(),
        Procedure::JointStepDown,
        opts,
        Some(nulls.seed()),
    )
}
