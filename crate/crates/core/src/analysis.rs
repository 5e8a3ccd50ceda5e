//! End-to-end analysis of one outcome family: fit, observed statistics,
//! null ensembles and every requested adjustment.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::adjust::{bonferroni, holm, joint_from_counts, marginal_p, AdjustedPValues, JointOptions, Procedure};
use crate::ensemble::{ascending_order, JointCounts, NullEnsemble, NullSampler};
use crate::error::{PbjError, Result};
use crate::io::{write_report, LabeledMatrix, ReportRow};
use crate::model::{f_statistics, f_to_chisq, fit_family, Design, FitResult, Outcomes, StatisticVector};
use crate::pbj_null::{build_basis, standardize_residuals, PbjSampler};
use crate::perm_null::{PermutationPlan, PermutationSampler, StatisticScale};
use crate::yeo_johnson::{yeo_johnson, yeo_johnson_mle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bonferroni,
    Holm,
    PbjSingleStep,
    PbjStepDown,
    PermSingleStep,
    PermStepDown,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bonferroni,
        Method::Holm,
        Method::PbjSingleStep,
        Method::PbjStepDown,
        Method::PermSingleStep,
        Method::PermStepDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bonferroni => "bonferroni",
            Method::Holm => "holm",
            Method::PbjSingleStep => "pbj-ss",
            Method::PbjStepDown => "pbj-sd",
            Method::PermSingleStep => "perm-ss",
            Method::PermStepDown => "perm-sd",
        }
    }

    pub fn procedure(self) -> Procedure {
        match self {
            Method::Bonferroni => Procedure::Bonferroni,
            Method::Holm => Procedure::Holm,
            Method::PbjSingleStep | Method::PermSingleStep => Procedure::JointSingleStep,
            Method::PbjStepDown | Method::PermStepDown => Procedure::JointStepDown,
        }
    }

    pub fn uses_pbj(self) -> bool {
        matches!(self, Method::PbjSingleStep | Method::PbjStepDown)
    }

    pub fn uses_permutation(self) -> bool {
        matches!(self, Method::PermSingleStep | Method::PermStepDown)
    }

    pub fn is_step_down_joint(self) -> bool {
        matches!(self, Method::PbjStepDown | Method::PermStepDown)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PbjError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s.as_str() {
                "pbj" => Some(Method::PbjStepDown),
                "perm" => Some(Method::PermStepDown),
                _ => None,
            })
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                PbjError::invalid(format!(
                    "unknown method '{s}' (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// Parses a comma-separated method list, dropping duplicates.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for tok in list.split(',').filter(|t| !t.trim().is_empty()) {
        let m: Method = tok.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(PbjError::invalid("no methods requested"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationMode {
    Random,
    /// All `n!` permutations; `replicates` is ignored.
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub yeo_johnson: bool,
    pub smoothed: bool,
    pub permutations: PermutationMode,
    /// Keep the null ensembles (needed to dump them).
    pub retain_ensembles: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::PbjStepDown],
            replicates: 5000,
            seed: 0,
            alpha: 0.05,
            yeo_johnson: false,
            smoothed: false,
            permutations: PermutationMode::Random,
            retain_ensembles: false,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(PbjError::invalid("no methods requested"));
        }
        if self.replicates == 0 {
            return Err(PbjError::invalid("B must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PbjError::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub p: AdjustedPValues,
    /// Wall-clock seconds spent on the method's null distribution and
    /// adjustment; methods sharing an ensemble report the shared time.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub ids: Vec<String>,
    pub stats: StatisticVector,
    /// Marginal `χ²(m1)` p-values; degenerate locations carry 1.
    pub p_raw: Vec<f64>,
    pub results: Vec<MethodResult>,
    pub pbj_ensemble: Option<NullEnsemble>,
    /// Permutation ensemble on the chi-square scale.
    pub perm_ensemble: Option<NullEnsemble>,
    /// Fitted Yeo-Johnson parameter per location (`None` for constant
    /// columns, which are left untransformed).
    pub lambdas: Option<Vec<Option<f64>>>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }

    /// Rows sorted by ascending adjusted p-value of the first method, ties
    /// by location index.
    pub fn report_rows(&self) -> Vec<ReportRow> {
        let v = self.ids.len();
        let mut idx: Vec<usize> = (0..v).collect();
        if let Some(first) = self.results.first() {
            let p = &first.p.p_adj;
            idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
        }
        idx.into_iter()
            .map(|i| ReportRow {
                id: self.ids[i].clone(),
                f: self.stats.f[i],
                z: self.stats.z[i],
                p_raw: self.p_raw[i],
                p_adj: self.results.iter().map(|r| r.p.p_adj[i]).collect(),
                degenerate: self.stats.degenerate[i],
            })
            .collect()
    }

    pub fn write_report<W: Write>(&self, w: W) -> std::io::Result<()> {
        let names: Vec<String> = self.results.iter().map(|r| r.method.name().to_string()).collect();
        write_report(w, &names, &self.report_rows())
    }
}

/// Applies a maximum-likelihood Yeo-Johnson transform to every column.
pub fn yeo_johnson_columns(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<Option<f64>>)> {
    let cols: Vec<Result<(Vec<f64>, Option<f64>)>> = (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = y.column(j).iter().copied().collect();
            if col.iter().all(|&x| x == col[0]) {
                return Ok((col, None));
            }
            let fit = yeo_johnson_mle(&col)?;
            Ok((yeo_johnson(&col, fit.lambda)?, Some(fit.lambda)))
        })
        .collect();
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    let mut lambdas = Vec::with_capacity(y.ncols());
    for (j, c) in cols.into_iter().enumerate() {
        let (col, lambda) = c?;
        out.column_mut(j).copy_from_slice(&col);
        lambdas.push(lambda);
    }
    Ok((out, lambdas))
}

/// Builds `[X0, X1]` from a labelled design. `tested` entries are column
/// labels or 1-based column numbers. With `intercept`, a column of ones is
/// prepended to the nuisance part unless a nonzero constant nuisance column
/// already exists.
pub fn split_design(design: &LabeledMatrix, tested: &[String], intercept: bool) -> Result<Design> {
    if tested.is_empty() {
        return Err(PbjError::invalid("at least one tested column is required"));
    }
    let p = design.data.ncols();
    let mut cols = Vec::new();
    for t in tested {
        let t = t.trim();
        let j = match design.column_index(t) {
            Some(j) => j,
            None => match t.parse::<usize>() {
                Ok(k) if (1..=p).contains(&k) => k - 1,
                _ => {
                    return Err(PbjError::invalid(format!(
                        "tested column '{t}' is not in the design (columns: {})",
                        design.labels.join(", ")
                    )))
                }
            },
        };
        if cols.contains(&j) {
            return Err(PbjError::invalid(format!("tested column '{t}' listed twice")));
        }
        cols.push(j);
    }
    let nuisance: Vec<usize> = (0..p).filter(|j| !cols.contains(j)).collect();
    let n = design.data.nrows();
    let has_constant = nuisance.iter().any(|&j| {
        let c = design.data.column(j);
        c[0] != 0.0 && c.iter().all(|&x| x == c[0])
    });
    let add = intercept && !has_constant;
    let m0 = nuisance.len() + add as usize;
    let mut x0 = DMatrix::zeros(n, m0);
    if add {
        x0.column_mut(0).fill(1.0);
    }
    for (k, &j) in nuisance.iter().enumerate() {
        x0.set_column(k + add as usize, &design.data.column(j));
    }
    let mut x1 = DMatrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        x1.set_column(k, &design.data.column(j));
    }
    Design::new(x0, x1)
}

fn scatter_marginal(
    proc_fn: fn(&[f64], f64) -> Result<AdjustedPValues>,
    p_raw: &[f64],
    active: &[usize],
    alpha: f64,
) -> Result<AdjustedPValues> {
    let v = p_raw.len();
    let mut out = AdjustedPValues {
        procedure: Procedure::Bonferroni,
        p_raw: p_raw.to_vec(),
        p_adj: vec![1.0; v],
        alpha,
        rejected: vec![false; v],
        replicates: None,
        seed: None,
    };
    if active.is_empty() {
        return Ok(out);
    }
    let sub: Vec<f64> = active.iter().map(|&i| p_raw[i]).collect();
    let adj = proc_fn(&sub, alpha)?;
    out.procedure = adj.procedure;
    for (k, &i) in active.iter().enumerate() {
        out.p_adj[i] = adj.p_adj[k];
        out.rejected[i] = adj.rejected[k];
    }
    Ok(out)
}

fn joint_results<S: NullSampler>(
    sampler: &S,
    observed: &[f64],
    methods: &[Method],
    opts: &AnalysisOptions,
    keep: bool,
) -> Result<(Vec<AdjustedPValues>, Option<NullEnsemble>)> {
    let order = sampler.order().to_vec();
    let sorted: Vec<f64> = order.iter().map(|&i| observed[i]).collect();
    let (counts, ens) = if keep {
        let ens = NullEnsemble::from_sampler(sampler);
        (JointCounts::from_ensemble(&ens, &sorted), Some(ens))
    } else {
        (JointCounts::accumulate(sampler, &sorted), None)
    };
    let jopts = JointOptions {
        alpha: opts.alpha,
        smoothed: opts.smoothed,
    };
    let out = methods
        .iter()
        .map(|m| {
            joint_from_counts(
                &counts,
                &order,
                observed.len(),
                m.procedure(),
                &jopts,
                Some(sampler.seed()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, ens))
}

/// Runs every requested method on one outcome family.
pub fn analyze(outcomes: &Outcomes, design: &Design, opts: &AnalysisOptions) -> Result<Analysis> {
    opts.validate()?;
    if outcomes.n() != design.n() {
        return Err(PbjError::Dimension(format!(
            "outcomes have {} rows but the design has {}",
            outcomes.n(),
            design.n()
        )));
    }
    let (transformed, lambdas) = if opts.yeo_johnson {
        let (y, l) = yeo_johnson_columns(outcomes.matrix())?;
        (Some(Outcomes::new(y, outcomes.ids().to_vec())?), Some(l))
    } else {
        (None, None)
    };
    let outcomes = transformed.as_ref().unwrap_or(outcomes);
    let fit = fit_family(outcomes, design)?;
    let stats = f_statistics(&fit, design)?;
    analyze_fitted(outcomes.ids().to_vec(), &fit, &stats, design, opts, lambdas)
}

fn analyze_fitted(
    ids: Vec<String>,
    fit: &FitResult,
    stats: &StatisticVector,
    design: &Design,
    opts: &AnalysisOptions,
    lambdas: Option<Vec<Option<f64>>>,
) -> Result<Analysis> {
    let v = stats.len();
    let active = stats.active();
    let mut p_raw = marginal_p(&stats.z, stats.df_num);
    for &i in &fit.degenerate_locations() {
        p_raw[i] = 1.0;
    }
    // Ordering by F keeps Z nondecreasing even where the chi-square
    // transform saturates.
    let order = ascending_order(&stats.f, &active);
    let mut warnings = Vec::new();
    let mut results: Vec<MethodResult> = Vec::new();

    for &m in &opts.methods {
        let t = Instant::now();
        let p = match m {
            Method::Bonferroni => scatter_marginal(bonferroni, &p_raw, &active, opts.alpha)?,
            Method::Holm => scatter_marginal(holm, &p_raw, &active, opts.alpha)?,
            _ => continue,
        };
        results.push(MethodResult {
            method: m,
            p,
            seconds: t.elapsed().as_secs_f64(),
        });
    }

    let pbj_methods: Vec<Method> = opts.methods.iter().copied().filter(|m| m.uses_pbj()).collect();
    let perm_methods: Vec<Method> =
        opts.methods.iter().copied().filter(|m| m.uses_permutation()).collect();

    let mut pbj_ensemble = None;
    if !pbj_methods.is_empty() {
        let t = Instant::now();
        let (ps, ens) = if order.is_empty() {
            (all_ones(&pbj_methods, v, opts), None)
        } else {
            let e = standardize_residuals(&fit.residuals_full, &order)?;
            let basis = build_basis(&e, order.clone())?;
            let sampler = PbjSampler::new(&basis, stats.df_num, opts.replicates, opts.seed)?;
            joint_results(&sampler, &stats.z, &pbj_methods, opts, opts.retain_ensembles)?
        };
        let secs = t.elapsed().as_secs_f64();
        pbj_ensemble = ens;
        for (m, p) in pbj_methods.iter().zip(ps) {
            results.push(MethodResult { method: *m, p, seconds: secs });
        }
    }

    let mut perm_ensemble = None;
    if !perm_methods.is_empty() {
        let t = Instant::now();
        let plan = match opts.permutations {
            PermutationMode::Random => PermutationPlan::random(opts.replicates, opts.seed)?,
            PermutationMode::Exhaustive => PermutationPlan::exhaustive(),
        };
        let (ps, ens) = if order.is_empty() {
            plan.replicates(design.n())?;
            (all_ones(&perm_methods, v, opts), None)
        } else {
            // Counting on the F scale gives the same exceedances as the
            // chi-square scale and skips a quantile solve per null value.
            let sampler = PermutationSampler::new(fit, design, plan, StatisticScale::F, order.clone())?;
            joint_results(&sampler, &stats.f, &perm_methods, opts, opts.retain_ensembles)?
        };
        let secs = t.elapsed().as_secs_f64();
        if let Some(ens) = ens {
            let z = f_to_chisq(ens.samples(), stats.df_num, stats.df_den)?;
            perm_ensemble = Some(NullEnsemble::new(
                z,
                ens.replicates(),
                ens.locations(),
                ens.df_num(),
                ens.seed(),
                ens.order().map(<[usize]>::to_vec),
            )?
            .with_magic(*b"PERM"));
        }
        for (m, p) in perm_methods.iter().zip(ps) {
            results.push(MethodResult { method: *m, p, seconds: secs });
        }
    }

    // Restore the requested method order.
    results.sort_by_key(|r| opts.methods.iter().position(|m| *m == r.method));

    let b = results
        .iter()
        .filter_map(|r| r.p.replicates)
        .min()
        .unwrap_or(opts.replicates);
    if opts.methods.iter().any(|m| m.is_step_down_joint()) && active.len() > b {
        warnings.push(format!(
            "step-down adjustment with V = {} locations and only B = {b} replicates; \
             per-location cutoffs will be noisy, consider a larger B",
            active.len()
        ));
    }

    Ok(Analysis {
        ids,
        stats: stats.clone(),
        p_raw,
        results,
        pbj_ensemble,
        perm_ensemble,
        lambdas,
        seed: opts.seed,
        warnings,
    })
}

fn all_ones(methods: &[Method], v: usize, opts: &AnalysisOptions) -> Vec<AdjustedPValues> {
    methods
        .iter()
        .map(|m| AdjustedPValues {
            procedure: m.procedure(),
            p_raw: vec![1.0; v],
            p_adj: vec![1.0; v],
            alpha: opts.alpha,
            rejected: vec![false; v],
            replicates: Some(opts.replicates),
            seed: Some(opts.seed),
        })
        .collect()
}
