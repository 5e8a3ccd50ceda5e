//! Family-wise error rate control for mass-univariate linear models.
//!
//! The crate fits the same linear model at many locations, computes
//! F-statistics mapped to the chi-square scale, and adjusts p-values with
//! Bonferroni, Holm, or joint procedures whose null distribution comes from
//! either a parametric bootstrap or residual permutation.

pub mod adjust;
pub mod analysis;
pub mod cli;
pub mod diagnostics;
pub mod distributions;
pub mod ensemble;
pub mod error;
pub mod example_data;
pub mod io;
pub mod model;
pub mod pbj_null;
pub mod perm_null;
pub mod rng;
pub mod sim;
pub mod yeo_johnson;

pub use error::{PbjError, Result};
