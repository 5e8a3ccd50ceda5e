//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::analysis::{analyze, parse_methods, split_design, AnalysisOptions, PermutationMode};
use crate::error::{PbjError, Result};
use crate::example_data::write_example;
use crate::io::{load_matrix, MatrixFormat};
use crate::model::Outcomes;
use crate::sim::{preset, run_injection, run_synthetic, Covariance, InjectionConfig, StudyResult, SyntheticConfig, SyntheticMethod};

#[derive(Debug, Parser)]
#[command(name = "pbj", version, about = "Family-wise error control for mass-univariate linear models")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model at every location and write adjusted p-values.
    Analyze(AnalyzeArgs),
    /// Run a Monte-Carlo FWER/power study.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Write the bundled region-wise example dataset.
    ExampleData {
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Csv,
    Tsv,
    Binary,
}

impl From<InputFormat> for MatrixFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Csv => MatrixFormat::Csv,
            InputFormat::Tsv => MatrixFormat::Tsv,
            InputFormat::Binary => MatrixFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PermutationArg {
    Random,
    Exhaustive,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Outcome matrix, one column per location.
    #[arg(long)]
    pub outcome: PathBuf,
    /// Design matrix with a header row.
    #[arg(long)]
    pub design: PathBuf,
    /// Tested design columns (labels or 1-based numbers), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub test: Vec<String>,
    /// Methods: bonferroni, holm, pbj-ss, pbj-sd, perm-ss, perm-sd.
    #[arg(long, default_value = "pbj-sd")]
    pub method: String,
    /// Number of bootstrap samples or permutations.
    #[arg(long = "B", default_value_t = 5000)]
    pub b: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Yeo-Johnson transform each location before fitting.
    #[arg(long)]
    pub yeo_johnson: bool,
    /// Do not add an intercept to the nuisance columns.
    #[arg(long)]
    pub no_intercept: bool,
    /// Report (1 + count) / (1 + B) instead of count / B.
    #[arg(long)]
    pub smoothed: bool,
    #[arg(long, value_enum, default_value = "random")]
    pub permutations: PermutationArg,
    /// Input format override (default: from the file extension).
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    /// Write null ensembles to `<prefix>.pbj.bin` / `<prefix>.perm.bin`.
    #[arg(long)]
    pub dump_null: Option<PathBuf>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Two-sample study with Gaussian noise.
    Synthetic(SyntheticArgs),
    /// Signal injection into subsamples of a real outcome matrix.
    Injection(InjectionArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovarianceArg {
    Independent,
    #[value(name = "posAR1")]
    PosAr1,
    #[value(name = "negAR1")]
    NegAr1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableFormat {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 500)]
    pub nsims: usize,
    #[arg(long = "B", default_value_t = 1000)]
    pub b: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// table-n40 or table-n100.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub v: Option<usize>,
    #[arg(long, value_enum)]
    pub covariance: Option<CovarianceArg>,
    /// Magnitude of the AR(1) coefficient.
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long)]
    pub effect_fraction: Option<f64>,
    #[arg(long)]
    pub effect_size: Option<f64>,
    /// Comma-separated subset of holm-T, holm-Z, pbj-trueSigma,
    /// pbj-T-SigmaHat, pbj-Z-SigmaHat, perm-T.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub study: StudyArgs,
}

#[derive(Debug, Args)]
pub struct InjectionArgs {
    #[arg(long)]
    pub outcome: PathBuf,
    /// Covariates to keep in every model (header row required).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "40,100,200")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub signal_regions: usize,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// 1 tests one factor indicator; levels - 1 tests them all.
    #[arg(long, default_value_t = 1)]
    pub test_df: usize,
    #[arg(long)]
    pub no_yeo_johnson: bool,
    #[arg(long, default_value = "bonferroni,holm,pbj-ss,pbj-sd,perm-ss,perm-sd")]
    pub method: String,
    #[command(flatten)]
    pub study: StudyArgs,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s: u64 = rand::rng().random();
        eprintln!("seed: {s}");
        s
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PbjError::io(path, e))
}

fn with_output(out: &Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w).and_then(|_| w.flush()).map_err(|e| PbjError::io(p, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| PbjError::io("<stdout>", e))
        }
    }
}

fn load(path: &Path, fmt: Option<InputFormat>) -> Result<crate::io::LabeledMatrix> {
    let fmt = fmt.map(MatrixFormat::from).unwrap_or_else(|| MatrixFormat::from_path(path));
    load_matrix(path, fmt)
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let methods = parse_methods(&args.method)?;
    let y = load(&args.outcome, args.input_format)?;
    let x = load(&args.design, args.input_format)?;
    if y.data.nrows() != x.data.nrows() {
        return Err(PbjError::Dimension(format!(
            "outcome has {} rows but design has {}",
            y.data.nrows(),
            x.data.nrows()
        )));
    }
    let design = split_design(&x, &args.test, !args.no_intercept)?;
    let outcomes = Outcomes::new(y.data, y.labels)?;
    let uses_random = methods.iter().any(|m| m.uses_pbj())
        || (methods.iter().any(|m| m.uses_permutation()) && matches!(args.permutations, PermutationArg::Random));
    let seed = if uses_random { resolve_seed(args.seed) } else { args.seed.unwrap_or(0) };
    let opts = AnalysisOptions {
        methods,
        replicates: args.b,
        seed,
        alpha: args.alpha,
        yeo_johnson: args.yeo_johnson,
        smoothed: args.smoothed,
        permutations: match args.permutations {
            PermutationArg::Random => PermutationMode::Random,
            PermutationArg::Exhaustive => PermutationMode::Exhaustive,
        },
        retain_ensembles: args.dump_null.is_some(),
    };
    let analysis = analyze(&outcomes, &design, &opts)?;
    for w in &analysis.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(prefix) = &args.dump_null {
        for (ens, tag) in [(&analysis.pbj_ensemble, "pbj"), (&analysis.perm_ensemble, "perm")] {
            if let Some(ens) = ens {
                let path = PathBuf::from(format!("{}.{tag}.bin", prefix.display()));
                let w = create(&path)?;
                ens.write_binary(w).map_err(|e| PbjError::io(&path, e))?;
            }
        }
    }
    with_output(&args.out, |w| analysis.write_report(w))
}

fn write_study(study: &StudyResult, args: &StudyArgs) -> Result<()> {
    with_output(&args.out, |w| match args.format {
        TableFormat::Csv => study.write_csv(w),
        TableFormat::Text => study.write_text(w),
    })
}

pub fn synthetic_config(args: &SyntheticArgs) -> Result<SyntheticConfig> {
    let mut cfg = match &args.preset {
        Some(p) => preset(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(v) = args.v {
        cfg.v = v;
    }
    let rho = args.rho.abs();
    if let Some(c) = args.covariance {
        cfg.covariance = match c {
            CovarianceArg::Independent => Covariance::Independent,
            CovarianceArg::PosAr1 => Covariance::Ar1(rho),
            CovarianceArg::NegAr1 => Covariance::Ar1(-rho),
        };
    }
    if let Some(f) = args.effect_fraction {
        cfg.effect_fraction = f;
    }
    if let Some(e) = args.effect_size {
        cfg.effect_size = e;
    }
    if let Some(list) = &args.method {
        let mut methods = Vec::new();
        for tok in list.split(',').filter(|t| !t.trim().is_empty()) {
            let m: SyntheticMethod = tok.parse()?;
            if !methods.contains(&m) {
                methods.push(m);
            }
        }
        cfg.methods = methods;
    }
    cfg.n_sims = args.study.nsims;
    cfg.replicates = args.study.b;
    cfg.alpha = args.study.alpha;
    cfg.validate()?;
    cfg.seed = resolve_seed(args.study.seed);
    Ok(cfg)
}

pub fn injection_config(args: &InjectionArgs) -> Result<InjectionConfig> {
    let y = load(&args.outcome, None)?;
    let mut cfg = InjectionConfig::new(Outcomes::new(y.data, y.labels)?);
    if let Some(p) = &args.covariates {
        cfg.covariates = Some(load(p, None)?.data);
    }
    cfg.subsample_sizes = args.sizes.clone();
    cfg.n_signal = args.signal_regions;
    cfg.signal_beta = args.beta;
    cfg.factor_levels = args.levels;
    cfg.test_df = args.test_df;
    cfg.yeo_johnson = !args.no_yeo_johnson;
    cfg.methods = parse_methods(&args.method)?;
    cfg.n_sims = args.study.nsims;
    cfg.replicates = args.study.b;
    cfg.alpha = args.study.alpha;
    cfg.validate()?;
    cfg.seed = resolve_seed(args.study.seed);
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(PbjError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| PbjError::invalid(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Analyze(args) => run_analyze(&args),
        Command::Simulate(SimulateCommand::Synthetic(args)) => {
            let cfg = synthetic_config(&args)?;
            write_study(&run_synthetic(&cfg)?, &args.study)
        }
        Command::Simulate(SimulateCommand::Injection(args)) => {
            let cfg = injection_config(&args)?;
            write_study(&run_injection(&cfg)?, &args.study)
        }
        Command::ExampleData { out } => write_example(&out),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
