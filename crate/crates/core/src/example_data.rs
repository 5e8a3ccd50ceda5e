//! Deterministic region-wise example dataset: 200 subjects, 112 regions,
//! a two-group factor with a true effect in three regions, plus age and sex
//! covariates. Noise is correlated across regions and right-skewed.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::io::{save_delimited, LabeledMatrix};
use crate::rng::stream_rng;

pub const EXAMPLE_SEED: u64 = 20_191_112;
pub const EXAMPLE_N: usize = 200;
pub const EXAMPLE_V: usize = 112;
/// Zero-based indices of the regions with a group effect.
pub const EXAMPLE_SIGNAL: [usize; 3] = [16, 53, 89];
pub const EXAMPLE_EFFECT: f64 = 9.0;
const N_FACTORS: usize = 4;

#[derive(Debug, Clone)]
pub struct ExampleData {
    pub outcomes: LabeledMatrix,
    /// Columns `group`, `age`, `sex`.
    pub design: LabeledMatrix,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn region_label(j: usize) -> String {
    format!("r{:03}", j + 1)
}

pub fn generate_example() -> ExampleData {
    let (n, v) = (EXAMPLE_N, EXAMPLE_V);
    let mut rng = stream_rng(EXAMPLE_SEED, 0);
    let loadings = DMatrix::from_fn(v, N_FACTORS, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        2.5 * z
    });
    let baseline: Vec<f64> = (0..v).map(|j| 55.0 + 12.0 * (0.37 * j as f64).sin()).collect();
    let age_slope: Vec<f64> = (0..v).map(|_| -0.15 - 0.2 * rng.random::<f64>()).collect();

    let mut y = DMatrix::zeros(n, v);
    let mut x = DMatrix::zeros(n, 3);
    for i in 0..n {
        let mut rng = stream_rng(EXAMPLE_SEED, 1 + i as u64);
        let group = (i % 2) as f64;
        let age = round4(20.0 + 60.0 * rng.random::<f64>());
        let sex = if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
        x[(i, 0)] = group;
        x[(i, 1)] = age;
        x[(i, 2)] = sex;
        let f: Vec<f64> = (0..N_FACTORS).map(|_| StandardNormal.sample(&mut rng)).collect();
        for j in 0..v {
            let shared: f64 = (0..N_FACTORS).map(|k| loadings[(j, k)] * f[k]).sum();
            // Centred log-normal noise gives a right skew.
            let e: f64 = StandardNormal.sample(&mut rng);
            let skewed = 6.0 * ((0.6 * e).exp() - (0.18f64).exp());
            let mut val = baseline[j] + age_slope[j] * (age - 50.0) + 1.5 * sex + shared + skewed;
            if group == 1.0 && EXAMPLE_SIGNAL.contains(&j) {
                val += EXAMPLE_EFFECT;
            }
            y[(i, j)] = round4(val);
        }
    }
    ExampleData {
        outcomes: LabeledMatrix {
            data: y,
            labels: (0..v).map(region_label).collect(),
        },
        design: LabeledMatrix {
            data: x,
            labels: vec!["group".into(), "age".into(), "sex".into()],
        },
    }
}

/// Writes `outcomes.csv` and `design.csv` into `dir`.
pub fn write_example(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::PbjError::io(dir, e))?;
    let data = generate_example();
    save_delimited(&dir.join("outcomes.csv"), &data.outcomes, b',')?;
    save_delimited(&dir.join("design.csv"), &data.design, b',')?;
    Ok(())
}
