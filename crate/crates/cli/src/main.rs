//! `bcsm` command-line front end.
//!
//! Exit status: 0 on success, 1 on invalid input or usage, 2 on runtime failure.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bcsm::covstruct::TwoWayCov;
use bcsm::design::{GibbsConfig, TauAShape, TwoWayNestedDesign};
use bcsm::gibbs::{fit_interaction, fit_oneway, fit_twoway, PosteriorChains};
use bcsm::io::{
    merge_reports, read_dataset_csv, read_study_config, read_study_report, write_chains,
    write_dataset_csv, write_dataset_csv_to, write_fit_summary, write_fit_summary_to,
    write_study_report, write_study_report_to, ConditionSpec, DatasetSchema, FitRow, Format,
    StudyConfigFile, TauSpec,
};
use bcsm::rngdist::{standard_normal, RngStream};
use bcsm::simstudy::{gen_twoway, generate, run_study, Estimator, Generator};
use bcsm::{BalancedDataset, Error};

#[derive(Parser)]
#[command(name = "bcsm", version, about = "Bayesian covariance structure models for clustered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic balanced dataset as long-format CSV.
    Simulate(SimulateArgs),
    /// Fit a model to a long-format CSV and print posterior summaries.
    Fit(FitArgs),
    /// Run a replicated simulation study from a JSON config.
    Study(StudyArgs),
    /// Merge or reformat study reports.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Conditional,
    Marginal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "marginal")]
    generator: GeneratorArg,
    #[arg(long)]
    sigma2: f64,
    /// Covariance (one-way); a number or `lb` for -sigma2/n + 1e-4.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    /// Number of clusters.
    #[arg(long)]
    a: usize,
    /// Sub-clusters per cluster; switches to the two-way nested design.
    #[arg(long)]
    b: Option<usize>,
    /// Observations per (sub-)cluster.
    #[arg(long)]
    n: usize,
    #[arg(long, allow_hyphen_values = true)]
    tau_a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tau_b: Option<f64>,
    /// General mean; drawn from N(0, 1) when omitted.
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Oneway,
    Twoway,
    Interaction,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauAShapeArg {
    Half,
    Full,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = 5_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    prior_g1: f64,
    #[arg(long, default_value_t = 0.0)]
    prior_g2: f64,
    /// Shape of the cluster-level step in the two-way samplers.
    #[arg(long, value_enum, default_value = "half")]
    tau_a_shape: TauAShapeArg,
    #[arg(long, default_value = "cluster_a")]
    cluster_a: String,
    #[arg(long, default_value = "cluster_b")]
    cluster_b: String,
    #[arg(long, default_value = "y")]
    y: String,
    /// Comma-separated covariate columns (an intercept is added).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// 0/1 column flagging heteroscedastic observations (interaction model).
    #[arg(long, default_value = "z")]
    indicator: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Directory for raw chains, one CSV per parameter.
    #[arg(long)]
    chains: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// JSON study configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Comma-separated estimators: bcsm, anova_trunc, anova_raw.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Use the full protocol (1,000 replications, 10,000/5,000 iterations) as the base.
    #[arg(long)]
    full: bool,
    /// Worker threads (default: all cores, capped by BCSM_THREADS).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; inferred from the --out extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct ReportArgs {
    /// Study reports to merge (CSV or JSON by extension); first occurrence of a cell wins.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Validation(msg.into()))
}

fn stdout_err(e: io::Error) -> CliError {
    CliError::Runtime(format!("<stdout>: {e}"))
}

fn output_format(out: Option<&Path>, format: Option<FormatArg>) -> Format {
    match (format, out) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => Format::from_path(p),
        (None, None) => Format::Csv,
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if !(args.sigma2 > 0.0 && args.sigma2.is_finite()) {
        return invalid(format!("--sigma2 must be a positive number, got {}", args.sigma2));
    }
    let mut rng = RngStream::new(args.seed, 0);
    let mu = match args.mu {
        Some(m) => m,
        None => standard_normal(&mut rng),
    };
    let data: BalancedDataset = match args.b {
        None => {
            if args.tau_a.is_some() || args.tau_b.is_some() {
                return invalid("--tau-a and --tau-b need --b (two-way design)");
            }
            let Some(tau) = args.tau else {
                return invalid("--tau is required for a one-way design");
            };
            let spec = ConditionSpec {
                sigma2: args.sigma2,
                tau: match tau.parse::<f64>() {
                    Ok(v) => TauSpec::Value(v),
                    Err(_) => TauSpec::Named(tau),
                },
                a: args.a,
                n: args.n,
                generator: Some(match args.generator {
                    GeneratorArg::Conditional => Generator::Conditional,
                    GeneratorArg::Marginal => Generator::Marginal,
                }),
            };
            let cond = spec
                .resolve()
                .map_err(|e| CliError::Validation(format!("--tau/--sigma2/--a/--n: {e}")))?;
            generate(&cond, mu, &mut rng)?
        }
        Some(b) => {
            if args.tau.is_some() {
                return invalid("--tau applies to one-way designs; use --tau-a and --tau-b with --b");
            }
            if matches!(args.generator, GeneratorArg::Conditional) {
                return invalid("--generator conditional is one-way only; two-way data is marginal");
            }
            let design = TwoWayNestedDesign::new(args.a, b, args.n)
                .map_err(|e| CliError::Validation(format!("--a/--b/--n: {e}")))?;
            let cov = TwoWayCov::new(
                args.sigma2,
                args.tau_a.unwrap_or(0.0),
                args.tau_b.unwrap_or(0.0),
                b,
                args.n,
            )
            .map_err(|e| CliError::Validation(format!("--tau-a/--tau-b: {e}")))?;
            gen_twoway(&design, &cov, &vec![mu; design.total()], &mut rng)?
        }
    };
    match args.out {
        Some(p) => write_dataset_csv(&p, &data, None)?,
        None => write_dataset_csv_to(io::stdout().lock(), &data, None)
            .map_err(|e| CliError::Runtime(format!("<stdout>: {e}")))?,
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    if args.iterations == 0 {
        return invalid("--iterations must be positive");
    }
    if args.burn_in >= args.iterations {
        return invalid(format!(
            "--burn-in ({}) must be smaller than --iterations ({})",
            args.burn_in, args.iterations
        ));
    }
    for (flag, v) in [("--prior-g1", args.prior_g1), ("--prior-g2", args.prior_g2)] {
        if !(v >= 0.0 && v.is_finite()) {
            return invalid(format!("{flag} must be a finite non-negative number, got {v}"));
        }
    }
    let cfg = GibbsConfig {
        iterations: args.iterations,
        burn_in: args.burn_in,
        prior_g1: args.prior_g1,
        prior_g2: args.prior_g2,
        seed: args.seed,
        tau_a_shape: match args.tau_a_shape {
            TauAShapeArg::Half => TauAShape::HalfDf,
            TauAShapeArg::Full => TauAShape::FullDf,
        },
    };
    let oneway = matches!(args.model, ModelArg::Oneway);
    let schema = DatasetSchema {
        cluster_a: args.cluster_a,
        cluster_b: (!oneway).then_some(args.cluster_b),
        y: args.y,
        covariates: args.covariates,
        indicator: matches!(args.model, ModelArg::Interaction).then_some(args.indicator),
    };
    let loaded = read_dataset_csv(&args.data, &schema)?;
    let chains: PosteriorChains = match args.model {
        ModelArg::Oneway => fit_oneway(&loaded.data, &cfg)?,
        ModelArg::Twoway => fit_twoway(&loaded.data, &cfg)?,
        ModelArg::Interaction => {
            let z = loaded.indicator.as_deref().unwrap_or_default();
            fit_interaction(&loaded.data, z, &cfg)?
        }
    };
    let rows: Vec<FitRow> = chains
        .summaries()?
        .iter()
        .map(|(name, s)| FitRow::new(name, s))
        .collect();
    let format = output_format(args.out.as_deref(), Some(args.format));
    match &args.out {
        Some(p) => write_fit_summary(p, &rows, format)?,
        None => write_fit_summary_to(io::stdout().lock(), &rows, format)?,
    }
    if let Some(dir) = &args.chains {
        write_chains(dir, &chains)?;
    }
    Ok(())
}

/// `--workers` (or all cores) capped by `BCSM_THREADS`.
fn worker_count(flag: Option<usize>) -> Result<usize, CliError> {
    let cap = match std::env::var("BCSM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(c) if c > 0 => Some(c),
            _ => return invalid(format!("BCSM_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => None,
    };
    if flag == Some(0) {
        return invalid("--workers must be positive");
    }
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let requested = flag.unwrap_or(all);
    Ok(cap.map_or(requested, |c| requested.min(c)))
}

fn study(args: StudyArgs) -> Result<(), CliError> {
    let mut file = match &args.config {
        Some(p) => read_study_config(p)?,
        None => StudyConfigFile::default(),
    };
    if let Some(r) = args.reps {
        if r < 2 {
            return invalid(format!("--reps must be at least 2, got {r}"));
        }
        file.reps = Some(r);
    }
    if args.seed.is_some() {
        file.seed = args.seed;
    }
    if args.iterations.is_some() || args.burn_in.is_some() {
        let mut g = file.gibbs.take().unwrap_or_default();
        g.iterations = args.iterations.or(g.iterations);
        g.burn_in = args.burn_in.or(g.burn_in);
        file.gibbs = Some(g);
    }
    if !args.estimators.is_empty() {
        let ests = args
            .estimators
            .iter()
            .map(|s| Estimator::parse(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Validation(format!("--estimators: {e}")))?;
        file.estimators = Some(ests);
    }
    let cfg = file.resolve(args.full)?;
    let workers = worker_count(args.workers)?;
    let report = run_study(&cfg, workers)?;
    let format = output_format(args.out.as_deref(), args.format);
    match &args.out {
        Some(p) => write_study_report(p, &report, format)?,
        None => write_study_report_to(io::stdout().lock(), &report, format)?,
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let reports = args
        .inputs
        .iter()
        .map(|p| read_study_report(p, Format::from_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_reports(&reports);
    let format = output_format(args.out.as_deref(), args.format);
    match &args.out {
        Some(p) => write_study_report(p, &merged, format)?,
        None => write_study_report_to(io::stdout().lock(), &merged, format)?,
    }
    io::stdout().flush().map_err(stdout_err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
