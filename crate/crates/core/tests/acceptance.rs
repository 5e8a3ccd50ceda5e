//! Acceptance criteria. Runs without the libtest harness so each criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{brute_force_permutation_p, dense_f, randn, random_design, rel_err};
use nalgebra::DMatrix;
use pbj::adjust::{marginal_p, JointOptions};
use pbj::analysis::{analyze, split_design, AnalysisOptions, Method};
use pbj::diagnostics::ks_test;
use pbj::distributions::{chi2_cdf, chi2_isf};
use pbj::ensemble::ascending_order;
use pbj::io::{load_matrix, save_delimited, LabeledMatrix, MatrixFormat};
use pbj::model::{f_statistics, fit_family, Design, Outcomes};
use pbj::pbj_null::{build_basis, sample_null, standardize_residuals, ResidualBasis};
use pbj::perm_null::{permutation_null, PermutationPlan};
use pbj::sim::{run_synthetic, wilson_ci, Covariance, StudyRow, SyntheticConfig, SyntheticMethod};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn fwer_line(r: &StudyRow) -> String {
    format!("{} FWER {:.3} [{:.3}, {:.3}] over {} sims", r.method, r.fwer, r.fwer_lo, r.fwer_hi, r.sims)
}

fn c1_wilson() -> Outcome {
    let a = wilson_ci(25, 500, 0.95).unwrap();
    let b = wilson_ci(250, 5000, 0.95).unwrap();
    let ok = (round2(a.0), round2(a.1)) == (0.03, 0.07) && (round2(b.0), round2(b.1)) == (0.04, 0.06);
    check(ok, format!("500: [{:.4}, {:.4}], 5000: [{:.4}, {:.4}]", a.0, a.1, b.0, b.1))
}

fn synthetic(n: usize, v: usize, cov: Covariance, methods: Vec<SyntheticMethod>, sims: usize, seed: u64) -> Vec<StudyRow> {
    let cfg = SyntheticConfig {
        n,
        v,
        covariance: cov,
        n_sims: sims,
        replicates: 1000,
        methods,
        seed,
        ..Default::default()
    };
    run_synthetic(&cfg).unwrap().rows
}

fn c2_nominal_fwer() -> Outcome {
    let rows = synthetic(100, 1000, Covariance::Independent, vec![SyntheticMethod::PbjZSigmaHat], 500, 2);
    let r = &rows[0];
    check(r.fwer_lo <= 0.05 && 0.05 <= r.fwer_hi, fwer_line(r))
}

fn c3_inflation() -> Outcome {
    let rows = synthetic(
        40,
        10_000,
        Covariance::Independent,
        vec![SyntheticMethod::HolmT, SyntheticMethod::PbjZSigmaHat],
        500,
        3,
    );
    let (holm, pbj) = (&rows[0], &rows[1]);
    check(holm.fwer >= 0.20 && pbj.fwer <= 0.12, format!("{}; {}", fwer_line(holm), fwer_line(pbj)))
}

fn c4_conservative() -> Outcome {
    let rows = synthetic(100, 1000, Covariance::Ar1(0.9), vec![SyntheticMethod::HolmZ], 500, 4);
    let r = &rows[0];
    // Upper end of the Wilson interval a nominal-level procedure would produce.
    let (_, margin_hi) = wilson_ci(25, r.sims, 0.95).unwrap();
    check(r.fwer <= margin_hi, format!("{}; bound {:.4}", fwer_line(r), margin_hi))
}

fn c5_identity_permutation() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (x0, x1) = random_design(30, 2, 1 + seed as usize % 3, seed);
        let d = Design::new(x0, x1).unwrap();
        let y = Outcomes::from_matrix(randn(30, 20, 100 + seed)).unwrap();
        let stats = f_statistics(&fit_family(&y, &d).unwrap(), &d).unwrap();
        let plan = PermutationPlan::explicit(vec![(0..30).collect()]).unwrap();
        let ens = permutation_null(&y, &d, &plan).unwrap();
        for k in 0..ens.locations() {
            worst = worst.max(rel_err(ens.row(0)[k], stats.z[ens.location_of(k)]));
        }
    }
    check(worst <= 1e-10, format!("max relative error {worst:.2e}"))
}

fn c6_exhaustive() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let design = LabeledMatrix {
        data: DMatrix::from_column_slice(6, 2, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.4, -0.3, 0.2, 2.2, -1.0, 0.5]),
        labels: vec!["group".into(), "cov".into()],
    };
    let y = LabeledMatrix { data: randn(6, 1, 606), labels: vec!["loc".into()] };
    let (xp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    save_delimited(&xp, &design, b',').unwrap();
    save_delimited(&yp, &y, b',').unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pbj"))
        .args(["analyze", "--outcome", yp.to_str().unwrap(), "--design", xp.to_str().unwrap()])
        .args(["--test", "group", "--method", "perm-ss", "--permutations", "exhaustive"])
        .output()
        .unwrap();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let text = String::from_utf8(out.stdout).unwrap();
    let printed = text.lines().nth(1).unwrap().split(',').nth(4).unwrap().to_string();

    let mut x0 = DMatrix::from_element(6, 2, 1.0);
    x0.set_column(1, &design.data.column(1));
    let x1 = design.data.columns(0, 1).into_owned();
    let (hits, total) = brute_force_permutation_p(&y.data, &x0, &x1, 0);
    let exact = hits as f64 / total as f64;

    // Reload through the same parser to compare at full precision.
    let loaded = load_matrix(&yp, MatrixFormat::Csv).unwrap();
    let x = load_matrix(&xp, MatrixFormat::Csv).unwrap();
    let d = split_design(&x, &["group".into()], true).unwrap();
    let opts = AnalysisOptions {
        methods: vec![Method::PermSingleStep],
        permutations: pbj::analysis::PermutationMode::Exhaustive,
        ..Default::default()
    };
    let lib = analyze(&Outcomes::new(loaded.data, loaded.labels).unwrap(), &d, &opts).unwrap();
    let p_lib = lib.results[0].p.p_adj[0];
    check(
        total == 720 && printed == pbj::io::fmt_sig6(exact) && p_lib == exact,
        format!("enumeration {hits}/{total} = {exact}; CLI {printed}; library {p_lib}"),
    )
}

fn c7_sidak() -> Outcome {
    let (v, b) = (50, 20_000);
    // Observed statistics spanning marginal p-values from 1e-3 to 0.5.
    let p_targets: Vec<f64> = (0..v).map(|j| 10f64.powf(-3.0 + 2.69897 * j as f64 / (v - 1) as f64)).collect();
    let z: Vec<f64> = p_targets.iter().map(|&p| chi2_isf(p, 1.0)).collect();
    let order = ascending_order(&z, &(0..v).collect::<Vec<_>>());
    let ens = sample_null(&ResidualBasis::identity(order), 1, b, 7).unwrap();
    let res = pbj::adjust::joint_single_step(&z, &ens, &JointOptions::default()).unwrap();
    let p_raw = marginal_p(&z, 1);
    let mut worst: f64 = 0.0;
    for j in 0..v {
        if (0.001..=0.5).contains(&p_raw[j]) {
            let sidak = 1.0 - (1.0 - p_raw[j]).powi(v as i32);
            worst = worst.max((res.p_adj[j] - sidak).abs());
        }
    }
    check(worst <= 0.02, format!("max |pAdj - Sidak| = {worst:.4}"))
}

fn c8_marginal_law() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, &m1) in [1usize, 3, 9].iter().enumerate() {
        let e = standardize_residuals(&randn(40, 5, 80 + i as u64), &[0, 1, 2, 3, 4]).unwrap();
        let basis = build_basis(&e, vec![0, 1, 2, 3, 4]).unwrap();
        let ens = sample_null(&basis, m1, 20_000, 800 + i as u64).unwrap();
        let (d, p) = ks_test(&ens.column(2), |x| chi2_cdf(x, m1 as f64)).unwrap();
        ok &= p > 0.01;
        parts.push(format!("m1={m1}: D={d:.4} p={p:.3}"));
    }
    check(ok, parts.join(", "))
}

fn c9_gram_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, &(dof, v)) in [(10usize, 5usize), (10, 200), (50, 5), (50, 200)].iter().enumerate() {
        let idx: Vec<usize> = (0..v).collect();
        let e = standardize_residuals(&randn(dof, v, 900 + i as u64), &idx).unwrap();
        let basis = build_basis(&e, idx).unwrap();
        let diff = basis.factor() * basis.factor().transpose() - e.tr_mul(&e);
        worst = worst.max(diff.amax());
    }
    check(worst <= 1e-10, format!("max |MMt - EtE| = {worst:.2e}"))
}

fn c10_dominance() -> Outcome {
    let mut violations = Vec::new();
    for seed in 0..1000u64 {
        let n = 8 + (seed % 13) as usize;
        let v = 1 + (seed % 11) as usize;
        let m1 = 1 + (seed % 3) as usize;
        let (x0, x1) = random_design(n, (seed % 2) as usize, m1, seed);
        let mut y = randn(n, v, 10_000 + seed);
        // Plant signal in a few locations so adjusted p-values vary.
        for j in (0..v).step_by(3) {
            for i in 0..n {
                y[(i, j)] += 0.8 * x1[(i, 0)];
            }
        }
        let d = Design::new(x0, x1).unwrap();
        let opts = AnalysisOptions {
            methods: Method::ALL.to_vec(),
            replicates: 60,
            seed,
            ..Default::default()
        };
        let a = analyze(&Outcomes::from_matrix(y).unwrap(), &d, &opts).unwrap();
        let p = |m: Method| &a.result(m).unwrap().p;
        for j in 0..v {
            let mut bad = p(Method::PbjStepDown).p_adj[j] > p(Method::PbjSingleStep).p_adj[j]
                || p(Method::PermStepDown).p_adj[j] > p(Method::PermSingleStep).p_adj[j]
                || p(Method::Holm).p_adj[j] > p(Method::Bonferroni).p_adj[j];
            for r in &a.results {
                bad |= r.p.p_adj[j] < r.p.p_raw[j];
            }
            if bad {
                violations.push((seed, j));
            }
        }
    }
    check(violations.is_empty(), format!("{} violations over 1000 instances {:?}", violations.len(), violations.iter().take(5).collect::<Vec<_>>()))
}

fn c11_dense_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let m1 = if seed % 2 == 0 { 1 } else { 3 };
        let n = 8 + (seed % 13) as usize;
        let v = 1 + (seed % 10) as usize;
        let (x0, x1) = random_design(n, (seed % 3) as usize, m1, 5_000 + seed);
        let y = randn(n, v, 6_000 + seed);
        let d = Design::new(x0.clone(), x1.clone()).unwrap();
        let stats = f_statistics(&fit_family(&Outcomes::from_matrix(y.clone()).unwrap(), &d).unwrap(), &d).unwrap();
        for j in 0..v {
            worst = worst.max(rel_err(stats.f[j], dense_f(&y, &x0, &x1, j)));
        }
    }
    check(worst <= 1e-12, format!("max relative error {worst:.2e}"))
}

fn c12_timing() -> Outcome {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let y = load_matrix(&data.join("outcomes.csv"), MatrixFormat::Csv).unwrap();
    let x = load_matrix(&data.join("design.csv"), MatrixFormat::Csv).unwrap();
    let design = split_design(&x, &["group".into()], true).unwrap();
    let outcomes = Outcomes::new(y.data, y.labels).unwrap();
    let time = |m: Method, seed: u64| {
        let opts = AnalysisOptions { methods: vec![m], replicates: 5000, seed, ..Default::default() };
        let t = Instant::now();
        analyze(&outcomes, &design, &opts).unwrap();
        t.elapsed().as_secs_f64()
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let pbj = median((0..5).map(|s| time(Method::PbjStepDown, s)).collect());
    let perm = median((0..5).map(|s| time(Method::PermStepDown, s)).collect());
    let ratio = pbj / perm;
    check(ratio < 1.0, format!("PBJ {pbj:.4} s, permutation {perm:.4} s, ratio {ratio:.3}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("wilson interval exactness", c1_wilson),
        ("synthetic FWER at nominal level", c2_nominal_fwer),
        ("inflation reproduction", c3_inflation),
        ("conservativeness under correlation", c4_conservative),
        ("identity-permutation oracle", c5_identity_permutation),
        ("exhaustive permutation equivalence", c6_exhaustive),
        ("sidak independence oracle", c7_sidak),
        ("marginal-law property", c8_marginal_law),
        ("gram fidelity", c9_gram_fidelity),
        ("dominance suite", c10_dominance),
        ("brute-force F oracle", c11_dense_oracle),
        ("performance direction", c12_timing),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} ({secs:.2} s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
