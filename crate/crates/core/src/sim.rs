//! Monte-Carlo FWER and power studies.
//!
//! Two designs are supported: a synthetic two-sample study with Gaussian
//! noise under independent or AR(1) correlation, and a signal-injection
//! study that subsamples a real outcome matrix, assigns an artificial
//! factor and adds a known effect at a few locations.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::adjust::{holm, joint_from_counts, marginal_p, JointOptions, Procedure};
use crate::analysis::{analyze, yeo_johnson_columns, AnalysisOptions, Method};
use crate::distributions::{chi2_sf, normal_quantile};
use crate::ensemble::{ascending_order, JointCounts, NullSampler};
use crate::error::{PbjError, Result};
use crate::io::fmt_sig6;
use crate::model::{f_statistics, fit_family, Design, Outcomes};
use crate::pbj_null::{build_basis, standardize_residuals, PbjSampler};
use crate::perm_null::{PermutationPlan, PermutationSampler, StatisticScale};
use crate::rng::{derive_seed, stream_rng};

/// Fills `out` with one AR(1) draw: unit marginal variance and
/// `corr(x_j, x_k) = rho^|j-k|`.
pub fn ar1_fill<R: Rng + ?Sized>(rng: &mut R, rho: f64, out: &mut [f64]) {
    let s = (1.0 - rho * rho).sqrt();
    let mut prev = 0.0;
    for (j, x) in out.iter_mut().enumerate() {
        let e: f64 = StandardNormal.sample(rng);
        prev = if j == 0 { e } else { rho * prev + s * e };
        *x = prev;
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(PbjError::invalid(format!("rho must lie in (-1, 1), got {rho}")));
    }
    Ok(())
}

/// `n × v` matrix of independent AR(1) rows; row `i` uses stream `i`.
pub fn ar1_sample(v: usize, rho: f64, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    let mut y = DMatrix::zeros(n, v);
    let mut row = vec![0.0; v];
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        ar1_fill(&mut rng, rho, &mut row);
        for (j, &x) in row.iter().enumerate() {
            y[(i, j)] = x;
        }
    }
    Ok(y)
}

/// Joint null with a known AR(1) correlation: each replicate is a sum of
/// `df_num` squared AR(1) vectors.
#[derive(Debug, Clone)]
pub struct Ar1Sampler {
    rho: f64,
    df_num: usize,
    replicates: usize,
    seed: u64,
    order: Vec<usize>,
    v: usize,
}

impl Ar1Sampler {
    /// `v` is the full dimension; `order` lists the reported locations in
    /// ascending observed order.
    pub fn new(v: usize, rho: f64, df_num: usize, replicates: usize, seed: u64, order: Vec<usize>) -> Result<Self> {
        check_rho(rho)?;
        if replicates == 0 || df_num == 0 {
            return Err(PbjError::invalid("replicates and df must be at least 1"));
        }
        if order.iter().any(|&i| i >= v) {
            return Err(PbjError::Dimension("order refers to a location beyond V".into()));
        }
        Ok(Self {
            rho,
            df_num,
            replicates,
            seed,
            order,
            v,
        })
    }
}

impl NullSampler for Ar1Sampler {
    fn locations(&self) -> usize {
        self.order.len()
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
        &self.order
    }

    fn magic(&self) -> [u8; 4] {
        *b"PBJN"
    }

    fn sample_block(&self, first: usize, count: usize, out: &mut [f64]) {
        let k = self.order.len();
        let mut x = vec![0.0; self.v];
        let mut acc = vec![0.0; self.v];
        for r in 0..count {
            let mut rng = stream_rng(self.seed, (first + r) as u64);
            acc.fill(0.0);
            for _ in 0..self.df_num {
                ar1_fill(&mut rng, self.rho, &mut x);
                for (a, xi) in acc.iter_mut().zip(&x) {
                    *a += xi * xi;
                }
            }
            for (dst, &loc) in out[r * k..(r + 1) * k].iter_mut().zip(&self.order) {
                *dst = acc[loc];
            }
        }
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(PbjError::invalid(format!(
            "need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PbjError::invalid("confidence level must lie in (0, 1)"));
    }
    let z = normal_quantile(0.5 + 0.5 * level);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Mean of per-simulation proportions with a normal-approximation interval.
fn mean_ci(xs: &[f64], level: f64) -> Option<(f64, f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let half = normal_quantile(0.5 + 0.5 * level) * (var / n).sqrt();
    Some((mean, (mean - half).max(0.0), (mean + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Covariance {
    Independent,
    Ar1(f64),
}

impl Covariance {
    pub fn rho(self) -> f64 {
        match self {
            Covariance::Independent => 0.0,
            Covariance::Ar1(r) => r,
        }
    }
}

impl fmt::Display for Covariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Covariance::Independent => f.write_str("independent"),
            Covariance::Ar1(r) if r >= 0.0 => write!(f, "posAR1({r})"),
            Covariance::Ar1(r) => write!(f, "negAR1({r})"),
        }
    }
}

/// Methods compared in the synthetic study. `T` arms use the raw statistic
/// `m1·F` with asymptotic `χ²` calibration; `Z` arms use the transformed
/// statistic. All joint arms are step-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticMethod {
    HolmT,
    HolmZ,
    PbjTrueSigma,
    PbjTSigmaHat,
    PbjZSigmaHat,
    PermT,
}

impl SyntheticMethod {
    pub const ALL: [SyntheticMethod; 6] = [
        SyntheticMethod::HolmT,
        SyntheticMethod::HolmZ,
        SyntheticMethod::PbjTrueSigma,
        SyntheticMethod::PbjTSigmaHat,
        SyntheticMethod::PbjZSigmaHat,
        SyntheticMethod::PermT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticMethod::HolmT => "holm-T",
            SyntheticMethod::HolmZ => "holm-Z",
            SyntheticMethod::PbjTrueSigma => "pbj-trueSigma",
            SyntheticMethod::PbjTSigmaHat => "pbj-T-SigmaHat",
            SyntheticMethod::PbjZSigmaHat => "pbj-Z-SigmaHat",
            SyntheticMethod::PermT => "perm-T",
        }
    }
}

impl fmt::Display for SyntheticMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticMethod {
    type Err = PbjError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s
            .trim()
            .replace("Σ̂", "SigmaHat")
            .replace('Σ', "Sigma")
            .to_ascii_lowercase();
        SyntheticMethod::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| PbjError::invalid(format!("unknown synthetic method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n: usize,
    pub v: usize,
    pub covariance: Covariance,
    /// Fraction of locations (the first ones) with a nonzero group effect.
    pub effect_fraction: f64,
    pub effect_size: f64,
    pub n_sims: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub methods: Vec<SyntheticMethod>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 100,
            v: 1000,
            covariance: Covariance::Independent,
            effect_fraction: 0.1,
            effect_size: 0.4,
            n_sims: 500,
            replicates: 1000,
            alpha: 0.05,
            methods: SyntheticMethod::ALL.to_vec(),
            seed: 0,
        }
    }
}

fn check_common(n_sims: usize, replicates: usize, alpha: f64) -> Result<()> {
    if n_sims == 0 {
        return Err(PbjError::invalid("number of simulations must be at least 1"));
    }
    if replicates == 0 {
        return Err(PbjError::invalid("B must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PbjError::invalid("alpha must lie in (0, 1)"));
    }
    Ok(())
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.n_sims, self.replicates, self.alpha)?;
        if self.n < 4 {
            return Err(PbjError::invalid("n must be at least 4"));
        }
        if self.v == 0 {
            return Err(PbjError::invalid("V must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.effect_fraction) {
            return Err(PbjError::invalid("effect fraction must lie in [0, 1)"));
        }
        if !self.effect_size.is_finite() {
            return Err(PbjError::invalid("effect size must be finite"));
        }
        if self.methods.is_empty() {
            return Err(PbjError::invalid("no methods requested"));
        }
        check_rho(self.covariance.rho())
    }

    /// Number of leading locations carrying the effect.
    pub fn n_effect(&self) -> usize {
        if self.effect_size == 0.0 {
            0
        } else {
            (self.effect_fraction * self.v as f64).round() as usize
        }
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        vec![
            ("study".into(), "synthetic".into()),
            ("n".into(), self.n.to_string()),
            ("V".into(), self.v.to_string()),
            ("covariance".into(), self.covariance.to_string()),
            ("rho".into(), self.covariance.rho().to_string()),
            ("effect_fraction".into(), self.effect_fraction.to_string()),
            ("effect_size".into(), self.effect_size.to_string()),
            ("nsims".into(), self.n_sims.to_string()),
            ("B".into(), self.replicates.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("methods".into(), methods.join(",")),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Per-simulation outcome for one method.
#[derive(Debug, Clone, Copy, Default)]
struct SimRecord {
    any_false_rejection: bool,
    power: Option<f64>,
    seconds: f64,
}

fn record(p_adj: &[f64], alpha: f64, is_signal: &[bool], seconds: f64) -> SimRecord {
    let mut any = false;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, &s) in p_adj.iter().zip(is_signal) {
        let rej = *p < alpha;
        if s {
            total += 1;
            hit += rej as usize;
        } else {
            any |= rej;
        }
    }
    SimRecord {
        any_false_rejection: any,
        power: (total > 0).then(|| hit as f64 / total as f64),
        seconds,
    }
}

/// One row of a study table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub method: String,
    pub n: usize,
    pub v: usize,
    pub covariance: String,
    pub sims: usize,
    pub fwer: f64,
    pub fwer_lo: f64,
    pub fwer_hi: f64,
    /// `None` when no location carries a signal.
    pub power: Option<(f64, f64, f64)>,
    /// Mean wall-clock seconds per simulation; arms sharing a null sample
    /// each report the shared time.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: Vec<(String, String)>,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn row(&self, method: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.config {
            writeln!(w, "# {k}={v}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "method", "n", "V", "covariance", "nsims", "fwer", "fwerLo", "fwerHi", "power", "powerLo",
            "powerHi", "seconds",
        ])?;
        for r in &self.rows {
            let (p, lo, hi) = match r.power {
                Some((p, lo, hi)) => (fmt_sig6(p), fmt_sig6(lo), fmt_sig6(hi)),
                None => ("NA".into(), "NA".into(), "NA".into()),
            };
            wtr.write_record([
                r.method.clone(),
                r.n.to_string(),
                r.v.to_string(),
                r.covariance.clone(),
                r.sims.to_string(),
                fmt_sig6(r.fwer),
                fmt_sig6(r.fwer_lo),
                fmt_sig6(r.fwer_hi),
                p,
                lo,
                hi,
                fmt_sig6(r.seconds),
            ])?;
        }
        wtr.flush()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.config {
            writeln!(w, "# {k}={v}")?;
        }
        let header = ["method", "n", "V", "covariance", "FWER", "FWER 95% CI", "power", "power 95% CI", "sec/sim"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let (p, pci) = match r.power {
                Some((p, lo, hi)) => (format!("{p:.3}"), format!("[{lo:.3}, {hi:.3}]")),
                None => ("NA".into(), "NA".into()),
            };
            cells.push(vec![
                r.method.clone(),
                r.n.to_string(),
                r.v.to_string(),
                r.covariance.clone(),
                format!("{:.3}", r.fwer),
                format!("[{:.3}, {:.3}]", r.fwer_lo, r.fwer_hi),
                p,
                pci,
                format!("{:.4}", r.seconds),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| cells.iter().map(|c| c[j].chars().count()).max().unwrap_or(0))
            .collect();
        for c in &cells {
            let line: Vec<String> = c
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, &wd))| {
                    if j == 0 || j == 3 {
                        format!("{s:<wd$}")
                    } else {
                        format!("{s:>wd$}")
                    }
                })
                .collect();
            writeln!(w, "{}", line.join("  ").trim_end())?;
        }
        Ok(())
    }
}

fn summarize(
    name: &str,
    n: usize,
    v: usize,
    covariance: &str,
    records: &[SimRecord],
) -> Result<StudyRow> {
    let sims = records.len();
    let fails = records.iter().filter(|r| r.any_false_rejection).count();
    let (fwer_lo, fwer_hi) = wilson_ci(fails, sims, 0.95)?;
    let powers: Vec<f64> = records.iter().filter_map(|r| r.power).collect();
    Ok(StudyRow {
        method: name.to_string(),
        n,
        v,
        covariance: covariance.to_string(),
        sims,
        fwer: fails as f64 / sims as f64,
        fwer_lo,
        fwer_hi,
        power: mean_ci(&powers, 0.95),
        seconds: records.iter().map(|r| r.seconds).sum::<f64>() / sims as f64,
    })
}

fn synthetic_outcomes(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, v) = (cfg.n, cfg.v);
    let rho = cfg.covariance.rho();
    let k = cfg.n_effect();
    let mut y = DMatrix::zeros(n, v);
    let mut row = vec![0.0; v];
    for i in 0..n {
        ar1_fill(rng, rho, &mut row);
        let shift = if i >= n / 2 { cfg.effect_size } else { 0.0 };
        for (j, &x) in row.iter().enumerate() {
            y[(i, j)] = x + if j < k { shift } else { 0.0 };
        }
    }
    y
}

/// Two-sample design: intercept plus an indicator for the second half.
pub fn two_sample_design(n: usize) -> Result<Design> {
    let x0 = DMatrix::from_element(n, 1, 1.0);
    let x1 = DMatrix::from_fn(n, 1, |i, _| if i >= n / 2 { 1.0 } else { 0.0 });
    Design::new(x0, x1)
}

fn step_down_p(counts: &JointCounts, order: &[usize], v: usize, alpha: f64) -> Result<Vec<f64>> {
    let opts = JointOptions { alpha, smoothed: false };
    Ok(joint_from_counts(counts, order, v, Procedure::JointStepDown, &opts, None)?.p_adj)
}

fn synthetic_sim(cfg: &SyntheticConfig, design: &Design, sim: usize) -> Result<Vec<SimRecord>> {
    let seed = derive_seed(cfg.seed, sim as u64);
    let mut rng = stream_rng(seed, 0);
    let y = Outcomes::from_matrix(synthetic_outcomes(cfg, &mut rng))?;
    let v = cfg.v;
    let k = cfg.n_effect();
    let is_signal: Vec<bool> = (0..v).map(|j| j < k).collect();
    let fit = fit_family(&y, design)?;
    let stats = f_statistics(&fit, design)?;
    let raw = stats.raw_chisq();
    let active = stats.active();
    let order = ascending_order(&stats.f, &active);
    let df = stats.df_num;
    let b = cfg.replicates;
    let alpha = cfg.alpha;

    let mut out = vec![SimRecord::default(); cfg.methods.len()];
    let slot = |m: SyntheticMethod| cfg.methods.iter().position(|&x| x == m);

    let holm_on = |p: Vec<f64>| -> Result<Vec<f64>> { Ok(holm(&p, alpha)?.p_adj) };
    if let Some(i) = slot(SyntheticMethod::HolmT) {
        let t = Instant::now();
        let p: Vec<f64> = raw.iter().map(|&x| chi2_sf(x, df as f64)).collect();
        let adj = holm_on(p)?;
        out[i] = record(&adj, alpha, &is_signal, t.elapsed().as_secs_f64());
    }
    if let Some(i) = slot(SyntheticMethod::HolmZ) {
        let t = Instant::now();
        let adj = holm_on(marginal_p(&stats.z, df))?;
        out[i] = record(&adj, alpha, &is_signal, t.elapsed().as_secs_f64());
    }
    if let Some(i) = slot(SyntheticMethod::PbjTrueSigma) {
        let t = Instant::now();
        let sampler = Ar1Sampler::new(v, cfg.covariance.rho(), df, b, derive_seed(seed, 1), order.clone())?;
        let sorted: Vec<f64> = order.iter().map(|&j| raw[j]).collect();
        let counts = JointCounts::accumulate(&sampler, &sorted);
        let adj = step_down_p(&counts, &order, v, alpha)?;
        out[i] = record(&adj, alpha, &is_signal, t.elapsed().as_secs_f64());
    }
    let hat_t = slot(SyntheticMethod::PbjTSigmaHat);
    let hat_z = slot(SyntheticMethod::PbjZSigmaHat);
    if hat_t.is_some() || hat_z.is_some() {
        let t = Instant::now();
        let e = standardize_residuals(&fit.residuals_full, &order)?;
        let basis = build_basis(&e, order.clone())?;
        let sampler = PbjSampler::new(&basis, df, b, derive_seed(seed, 2))?;
        let sorted_t: Vec<f64> = order.iter().map(|&j| raw[j]).collect();
        let sorted_z: Vec<f64> = order.iter().map(|&j| stats.z[j]).collect();
        let counts = JointCounts::accumulate_many(&sampler, &[&sorted_t, &sorted_z]);
        let secs = t.elapsed().as_secs_f64();
        if let Some(i) = hat_t {
            let adj = step_down_p(&counts[0], &order, v, alpha)?;
            out[i] = record(&adj, alpha, &is_signal, secs);
        }
        if let Some(i) = hat_z {
            let adj = step_down_p(&counts[1], &order, v, alpha)?;
            out[i] = record(&adj, alpha, &is_signal, secs);
        }
    }
    if let Some(i) = slot(SyntheticMethod::PermT) {
        let t = Instant::now();
        let plan = PermutationPlan::random(b, derive_seed(seed, 3))?;
        let sampler = PermutationSampler::new(&fit, design, plan, StatisticScale::F, order.clone())?;
        let sorted: Vec<f64> = order.iter().map(|&j| stats.f[j]).collect();
        let counts = JointCounts::accumulate(&sampler, &sorted);
        let adj = step_down_p(&counts, &order, v, alpha)?;
        out[i] = record(&adj, alpha, &is_signal, t.elapsed().as_secs_f64());
    }
    Ok(out)
}

/// Runs the synthetic two-sample study.
pub fn run_synthetic(cfg: &SyntheticConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let design = two_sample_design(cfg.n)?;
    let sims: Vec<Vec<SimRecord>> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| synthetic_sim(cfg, &design, s))
        .collect::<Result<_>>()?;
    let cov = cfg.covariance.to_string();
    let rows = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let recs: Vec<SimRecord> = sims.iter().map(|s| s[i]).collect();
            summarize(m.name(), cfg.n, cfg.v, &cov, &recs)
        })
        .collect::<Result<_>>()?;
    Ok(StudyResult {
        config: cfg.echo(),
        rows,
    })
}

/// Named synthetic configurations matching the two type-1-error tables
/// (independent covariance, V = 1000 by default).
pub fn preset(name: &str) -> Result<SyntheticConfig> {
    let n = match name {
        "table-n40" => 40,
        "table-n100" => 100,
        other => {
            return Err(PbjError::invalid(format!(
                "unknown preset '{other}' (expected table-n40 or table-n100)"
            )))
        }
    };
    Ok(SyntheticConfig {
        n,
        ..Default::default()
    })
}

#[derive(Debug, Clone)]
pub struct InjectionConfig {
    pub base: Outcomes,
    /// Optional real covariates (rows aligned with `base`).
    pub covariates: Option<DMatrix<f64>>,
    pub subsample_sizes: Vec<usize>,
    pub n_signal: usize,
    pub signal_beta: f64,
    pub factor_levels: usize,
    /// 1 tests the first factor indicator; `factor_levels - 1` tests all.
    pub test_df: usize,
    pub yeo_johnson: bool,
    pub n_sims: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl InjectionConfig {
    pub fn new(base: Outcomes) -> Self {
        Self {
            base,
            covariates: None,
            subsample_sizes: vec![40, 100, 200],
            n_signal: 3,
            signal_beta: 10.0,
            factor_levels: 4,
            test_df: 1,
            yeo_johnson: true,
            n_sims: 500,
            replicates: 1000,
            alpha: 0.05,
            methods: Method::ALL.to_vec(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.n_sims, self.replicates, self.alpha)?;
        let rows = self.base.n();
        if let Some(c) = &self.covariates {
            if c.nrows() != rows {
                return Err(PbjError::Dimension(format!(
                    "covariates have {} rows, outcomes have {rows}",
                    c.nrows()
                )));
            }
        }
        if self.subsample_sizes.is_empty() {
            return Err(PbjError::invalid("no subsample sizes given"));
        }
        if let Some(&n) = self.subsample_sizes.iter().find(|&&n| n > rows) {
            return Err(PbjError::invalid(format!(
                "subsample size {n} exceeds the {rows} available rows"
            )));
        }
        if self.factor_levels < 2 {
            return Err(PbjError::invalid("the artificial factor needs at least 2 levels"));
        }
        if self.test_df != 1 && self.test_df != self.factor_levels - 1 {
            return Err(PbjError::invalid(format!(
                "test df must be 1 or {}",
                self.factor_levels - 1
            )));
        }
        if self.n_signal > self.base.v() {
            return Err(PbjError::invalid("more signal locations than locations"));
        }
        if !self.signal_beta.is_finite() {
            return Err(PbjError::invalid("signal beta must be finite"));
        }
        if self.methods.is_empty() {
            return Err(PbjError::invalid("no methods requested"));
        }
        Ok(())
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let sizes: Vec<String> = self.subsample_sizes.iter().map(|n| n.to_string()).collect();
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        vec![
            ("study".into(), "injection".into()),
            ("rows".into(), self.base.n().to_string()),
            ("V".into(), self.base.v().to_string()),
            (
                "covariates".into(),
                self.covariates.as_ref().map_or(0, |c| c.ncols()).to_string(),
            ),
            ("subsample_sizes".into(), sizes.join(",")),
            ("signal_regions".into(), self.n_signal.to_string()),
            ("signal_beta".into(), self.signal_beta.to_string()),
            ("factor_levels".into(), self.factor_levels.to_string()),
            ("test_df".into(), self.test_df.to_string()),
            ("yeo_johnson".into(), self.yeo_johnson.to_string()),
            ("nsims".into(), self.n_sims.to_string()),
            ("B".into(), self.replicates.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("methods".into(), methods.join(",")),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn injection_sim(cfg: &InjectionConfig, n: usize, sim: usize) -> Result<Vec<SimRecord>> {
    let seed = derive_seed(derive_seed(cfg.seed, n as u64), sim as u64);
    let mut rng = stream_rng(seed, 0);
    let base = cfg.base.matrix();
    let v = base.ncols();
    let rows = index::sample(&mut rng, base.nrows(), n).into_vec();
    let mut y = base.select_rows(&rows);
    if cfg.yeo_johnson {
        y = yeo_johnson_columns(&y)?.0;
    }
    let levels = cfg.factor_levels;
    let mut labels: Vec<usize> = (0..n).map(|i| i % levels).collect();
    labels.shuffle(&mut rng);
    let g = |j: usize| DMatrix::from_fn(n, 1, |i, _| if labels[i] == j { 1.0 } else { 0.0 });
    let signal = index::sample(&mut rng, v, cfg.n_signal).into_vec();
    let mut is_signal = vec![false; v];
    for &s in &signal {
        is_signal[s] = true;
        for i in 0..n {
            if labels[i] == 1 {
                y[(i, s)] += cfg.signal_beta;
            }
        }
    }

    let cov = cfg.covariates.as_ref().map(|c| c.select_rows(&rows));
    let n_cov = cov.as_ref().map_or(0, |c| c.ncols());
    let (nuis_levels, test_levels): (Vec<usize>, Vec<usize>) = if cfg.test_df == 1 {
        ((2..levels).collect(), vec![1])
    } else {
        (vec![], (1..levels).collect())
    };
    let mut x0 = DMatrix::zeros(n, 1 + n_cov + nuis_levels.len());
    x0.column_mut(0).fill(1.0);
    if let Some(c) = &cov {
        x0.columns_mut(1, n_cov).copy_from(c);
    }
    for (k, &l) in nuis_levels.iter().enumerate() {
        x0.set_column(1 + n_cov + k, &g(l).column(0));
    }
    let mut x1 = DMatrix::zeros(n, test_levels.len());
    for (k, &l) in test_levels.iter().enumerate() {
        x1.set_column(k, &g(l).column(0));
    }
    let design = Design::new(x0, x1)?;
    let outcomes = Outcomes::new(y, cfg.base.ids().to_vec())?;
    let opts = AnalysisOptions {
        methods: cfg.methods.clone(),
        replicates: cfg.replicates,
        seed: derive_seed(seed, 1),
        alpha: cfg.alpha,
        ..Default::default()
    };
    let a = analyze(&outcomes, &design, &opts)?;
    Ok(a.results
        .iter()
        .map(|r| record(&r.p.p_adj, cfg.alpha, &is_signal, r.seconds))
        .collect())
}

/// Runs the signal-injection study, one block of rows per subsample size.
pub fn run_injection(cfg: &InjectionConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.subsample_sizes {
        let sims: Vec<Vec<SimRecord>> = (0..cfg.n_sims)
            .into_par_iter()
            .map(|s| injection_sim(cfg, n, s))
            .collect::<Result<_>>()?;
        for (i, m) in cfg.methods.iter().enumerate() {
            let recs: Vec<SimRecord> = sims.iter().map(|s| s[i]).collect();
            rows.push(summarize(m.name(), n, cfg.base.v(), "empirical", &recs)?);
        }
    }
    Ok(StudyResult {
        config: cfg.echo(),
        rows,
    })
}
