mod common;

use common::{dense_f, dense_residual_former, randn, random_design, rel_err};
use nalgebra::{DMatrix, DVector};
use pbj::diagnostics::ks_test;
use pbj::distributions::{chi2_cdf, chi2_isf, chi2_quantile, f_cdf, f_sf};
use pbj::model::{f_statistics, f_to_chisq, fit_family, residual_projector, Design, Outcomes};
use pbj::yeo_johnson::{yeo_johnson_mle, yeo_johnson};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

#[test]
fn chi_square_and_f_cdfs_match_reference() {
    for &df in &[1.0, 2.0, 3.0, 7.5, 40.0, 300.0] {
        let reference = ChiSquared::new(df).unwrap();
        for &x in &[1e-6, 0.05, 0.7, 2.0, 5.5, 20.0, 80.0, 400.0] {
            let ours = chi2_cdf(x, df);
            let theirs = reference.cdf(x);
            assert!((ours - theirs).abs() < 1e-12, "df={df} x={x}: {ours} vs {theirs}");
        }
    }
    for &(d1, d2) in &[(1.0, 5.0), (3.0, 17.0), (1.0, 1000.0), (9.0, 40.0)] {
        let reference = FisherSnedecor::new(d1, d2).unwrap();
        for &f in &[1e-4, 0.3, 1.0, 2.5, 7.0, 30.0] {
            let ours = f_cdf(f, d1, d2);
            assert!((ours - reference.cdf(f)).abs() < 1e-12, "F({d1},{d2}) at {f}");
            assert!((ours + f_sf(f, d1, d2) - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn chi_square_quantiles_match_reference() {
    for &df in &[1.0, 3.0, 9.0, 60.0] {
        let reference = ChiSquared::new(df).unwrap();
        for &p in &[0.001, 0.05, 0.5, 0.9, 0.999] {
            let ours = chi2_quantile(p, df);
            let theirs = reference.inverse_cdf(p);
            assert!(rel_err(ours, theirs) < 1e-8, "df={df} p={p}: {ours} vs {theirs}");
        }
        // Deep upper tail, where 1 - p is not representable.
        let x = chi2_isf(1e-40, df);
        assert!(rel_err(reference.sf(x), 1e-40) < 1e-8, "df={df} sf={}", reference.sf(x));
    }
}

#[test]
fn projector_matches_normal_equations() {
    for seed in 0..20 {
        let a = randn(8, 2, seed);
        let y = randn(8, 1, seed + 100).column(0).into_owned();
        let proj = residual_projector(&a).unwrap();
        let expect = dense_residual_former(&a) * &y;
        assert!((proj.apply(&y) - expect).amax() < 1e-12);
    }
}

#[test]
fn centering_projector() {
    let a = DMatrix::from_element(5, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 4.0, -2.0, 8.0, 3.0]);
    let r = residual_projector(&a).unwrap().apply(&y);
    let mean = y.mean();
    for i in 0..5 {
        assert!((r[i] - (y[i] - mean)).abs() < 1e-12);
    }
}

#[test]
fn two_group_coefficients_are_group_means() {
    // Group 0: 3, 5, 4 (mean 4). Group 1: 10, 12, 14 (mean 12).
    let y = DMatrix::from_column_slice(6, 1, &[3.0, 5.0, 4.0, 10.0, 12.0, 14.0]);
    let x0 = DMatrix::from_element(6, 1, 1.0);
    let x1 = DMatrix::from_column_slice(6, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let d = Design::new(x0, x1).unwrap();
    let fit = fit_family(&Outcomes::from_matrix(y).unwrap(), &d).unwrap();
    assert!((fit.coefficients[(0, 0)] - 4.0).abs() < 1e-12);
    assert!((fit.coefficients[(1, 0)] - 8.0).abs() < 1e-12);
    // Pooled variance: (1 + 1 + 0 + 4 + 0 + 4) / 4.
    assert!((fit.sigma2[0] - 2.5).abs() < 1e-12);
}

#[test]
fn f_matches_dense_oracle_on_random_instances() {
    for seed in 0..40u64 {
        let n = 10 + (seed % 9) as usize;
        let m1 = if seed % 2 == 0 { 1 } else { 3 };
        let (x0, x1) = random_design(n, (seed % 3) as usize, m1, seed);
        let y = randn(n, 6, seed + 500);
        let d = Design::new(x0.clone(), x1.clone()).unwrap();
        let fit = fit_family(&Outcomes::from_matrix(y.clone()).unwrap(), &d).unwrap();
        let stats = f_statistics(&fit, &d).unwrap();
        for v in 0..6 {
            let oracle = dense_f(&y, &x0, &x1, v);
            assert!(rel_err(stats.f[v], oracle) < 1e-10, "seed {seed} v {v}");
        }
    }
}

#[test]
fn f_equals_squared_t_for_two_groups() {
    let y = [4.1, 5.3, 3.9, 4.8, 6.2, 7.0, 5.9, 6.6];
    let (a, b) = (&y[..4], &y[4..]);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let ss = |s: &[f64]| {
        let m = mean(s);
        s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let sp2 = (ss(a) + ss(b)) / 6.0;
    let t = (mean(b) - mean(a)) / (sp2 * 0.5).sqrt();
    let x0 = DMatrix::from_element(8, 1, 1.0);
    let x1 = DMatrix::from_fn(8, 1, |i, _| (i >= 4) as u8 as f64);
    let d = Design::new(x0, x1).unwrap();
    let fit = fit_family(&Outcomes::from_matrix(DMatrix::from_column_slice(8, 1, &y)).unwrap(), &d).unwrap();
    let f = f_statistics(&fit, &d).unwrap().f[0];
    assert!(rel_err(f, t * t) < 1e-12);
}

#[test]
fn transform_anchor_values() {
    assert_eq!(f_to_chisq(&[0.0], 2, 10).unwrap(), vec![0.0]);
    let median_f = FisherSnedecor::new(3.0, 12.0).unwrap().inverse_cdf(0.5);
    let z = f_to_chisq(&[median_f], 3, 12).unwrap()[0];
    let median_chi = ChiSquared::new(3.0).unwrap().inverse_cdf(0.5);
    assert!(rel_err(z, median_chi) < 1e-8);
    let z = f_to_chisq(&[3.84], 1, 1000).unwrap()[0];
    assert!((z - 3.84).abs() < 0.05);
    assert!(f_to_chisq(&[f64::NAN], 1, 5).is_err());
}

#[test]
fn marginal_p_equals_f_scale_p() {
    let f: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
    for &(d1, d2) in &[(1usize, 8usize), (3, 30), (2, 200)] {
        let z = f_to_chisq(&f, d1, d2).unwrap();
        let p = pbj::adjust::marginal_p(&z, d1);
        for (i, &fi) in f.iter().enumerate() {
            let q = f_sf(fi, d1 as f64, d2 as f64);
            assert!((p[i] - q).abs() < 1e-12, "F={fi} df=({d1},{d2}): {} vs {q}", p[i]);
        }
    }
}

#[test]
fn null_f_statistics_follow_the_f_distribution() {
    let (n, v) = (15, 10_000);
    let (x0, x1) = random_design(n, 1, 2, 42);
    let d = Design::new(x0, x1).unwrap();
    let y = randn(n, v, 43);
    let fit = fit_family(&Outcomes::from_matrix(y).unwrap(), &d).unwrap();
    let f = f_statistics(&fit, &d).unwrap().f;
    let df2 = d.df_residual() as f64;
    let (_, p) = ks_test(&f, |x| f_cdf(x, 2.0, df2)).unwrap();
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn yeo_johnson_mle_recovers_parameters() {
    let z = randn(10_000, 1, 9);
    let z: Vec<f64> = z.iter().copied().collect();
    let fit = yeo_johnson_mle(&z).unwrap();
    assert!((0.85..=1.15).contains(&fit.lambda), "lambda {}", fit.lambda);

    // Invert the transform at lambda = 0.5.
    let inv = |t: f64| {
        if t >= 0.0 {
            (1.0 + 0.5 * t).powf(2.0) - 1.0
        } else {
            1.0 - (1.0 - 1.5 * t).powf(1.0 / 1.5)
        }
    };
    let y: Vec<f64> = z.iter().map(|&t| inv(t)).collect();
    let back = yeo_johnson(&y, 0.5).unwrap();
    assert!(back.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));
    let fit = yeo_johnson_mle(&y).unwrap();
    assert!((0.35..=0.65).contains(&fit.lambda), "lambda {}", fit.lambda);
}
