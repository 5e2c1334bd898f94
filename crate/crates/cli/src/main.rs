//! `ziss`: simulate count data, fit the zero-inflated smoothing spline and
//! score fits against a known mean.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure or a fit
//! that did not converge, 4 I/O error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod input;
mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ziss_core::simulate::{truth_for, GroundTruth};
use ziss_core::{
    fit_ziss, generate, run_replicates, LambdaPolicy, Method, Setting, SimulationConfig,
    ZissConfig,
};

use crate::error::{CliError, CliResult};
use crate::input::{bin_observations, parse_domain, read_observations};
use crate::report::{curve_csv, write_file, FitReport};

#[derive(Parser)]
#[command(name = "ziss", version, about = "Zero-inflated smoothing spline fits for pseudotime count data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a simulation setting, or tabulate replicate MSEs.
    Simulate(SimulateArgs),
    /// Fit a long-format `t,y` CSV.
    Fit(FitArgs),
    /// Score a saved fit against a known mean curve.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthName {
    Setting1,
    Setting2,
}

impl TruthName {
    fn truth(self, shift: f64) -> GroundTruth {
        let setting = match self {
            TruthName::Setting1 => Setting::One,
            TruthName::Setting2 => Setting::Two,
        };
        truth_for(setting).with_shift(shift)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation setting, 1 or 2.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    setting: u8,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dataset CSV, or the results table with `--replicates`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 41)]
    n_points: usize,
    /// Observations per point.
    #[arg(long, default_value_t = 80)]
    samples: usize,
    /// Negative-binomial over-dispersion; 0 draws Poisson counts.
    #[arg(long, default_value_t = 0.0)]
    overdispersion: f64,
    /// Constant added to the mean curve.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// Run this many replicates and write an MSE table instead of data.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ziss,nzss,dss")]
    methods: Vec<String>,
    /// Worker threads for replicates; 0 uses every available processor.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV with header `t,y`.
    #[arg(long)]
    input: PathBuf,
    /// Fit summary JSON.
    #[arg(long)]
    out: PathBuf,
    /// Curve CSV on a 512-point grid.
    #[arg(long)]
    curve: PathBuf,
    /// Equal-width pseudotime bins; 0 keeps each distinct t as a point.
    #[arg(long, default_value_t = 150)]
    bins: usize,
    /// Fitting domain `LO:HI`; defaults to the data range.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<(f64, f64)>,
    /// B-spline basis size for the dropout curve.
    #[arg(long, default_value_t = 6)]
    basis_m: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// EM iterations allowed per phase.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Decades searched on each side of the initial λ.
    #[arg(long, default_value_t = 3.0)]
    lambda_grid_span: f64,
    /// Upper bound on GCV selections.
    #[arg(long, default_value_t = 5)]
    gcv_rounds: usize,
    /// Add a `mu_true` column from a built-in setting.
    #[arg(long)]
    truth: Option<TruthName>,
    #[arg(long, default_value_t = 0.0, requires = "truth")]
    shift: f64,
    /// Exit 0 even if EM stopped at the iteration limit.
    #[arg(long)]
    allow_nonconverged: bool,
    /// Accepted for script compatibility; fitting uses no randomness.
    #[arg(long, hide = true)]
    seed_independent: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fit JSON written by `ziss fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Built-in mean curve, scored at the fitted points.
    #[arg(long, conflicts_with = "truth_csv", required_unless_present = "truth_csv")]
    truth: Option<TruthName>,
    #[arg(long, default_value_t = 0.0, requires = "truth")]
    shift: f64,
    /// CSV with header `t,mu_true`, scored at its own points.
    #[arg(long)]
    truth_csv: Option<PathBuf>,
    /// Per-point squared errors.
    #[arg(long)]
    out: PathBuf,
    /// Optional summary JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Evaluate(args) => evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut config = SimulationConfig::new(Setting::from_index(args.setting)?, args.seed);
    config.n_points = args.n_points;
    config.samples_per_point = args.samples;
    config.overdispersion = args.overdispersion;
    config.shift = args.shift;
    config.validate()?;

    let Some(replicates) = args.replicates else {
        let (data, _) = generate(&config)?;
        let mut out = String::from("t,y\n");
        for (t, y) in data.observations() {
            writeln!(out, "{t},{y}").unwrap();
        }
        return write_file(&args.out, &out);
    };

    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Validation("no methods selected".into()));
    }
    config.replicates = replicates;
    let study = run_replicates(&config, &methods, &ZissConfig::default(), args.jobs)?;

    let mut out = String::from("method,mean_mse,std_mse,effective_R\n");
    for s in &study.summaries {
        if s.failures > 0 {
            eprintln!("warning: {} failed on {} of {replicates} replicates", s.method, s.failures);
        }
        writeln!(out, "{},{},{},{}", s.method, s.mean_mse, s.std_mse, s.effective_r).unwrap();
    }
    write_file(&args.out, &out)
}

fn fit(args: FitArgs) -> CliResult<()> {
    if !(args.lambda_grid_span >= 0.0 && args.lambda_grid_span.is_finite()) {
        return Err(CliError::Validation("--lambda-grid-span must be non-negative".into()));
    }
    let rows = read_observations(&args.input)?;
    let data = bin_observations(&rows, args.bins, args.domain)?;
    let config = ZissConfig {
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        basis_m: args.basis_m,
        gcv_rounds: args.gcv_rounds,
        lambda: LambdaPolicy::Gcv {
            span_decades: args.lambda_grid_span,
            grid_len: 31,
        },
        ..ZissConfig::default()
    };
    let fit = fit_ziss(&data, &config)?;
    let report = FitReport::new(&fit, fit.penalized_nll(&data)?, data.points());

    let truth = args.truth.map(|name| name.truth(args.shift));
    if truth.is_some() {
        let (lo, hi) = data.domain();
        if lo < 0.0 || hi > 1.0 {
            return Err(CliError::Validation(format!(
                "built-in truths live on [0, 1]; the fit domain is [{lo}, {hi}]"
            )));
        }
    }
    let truth_fn = truth.as_ref().map(|g| move |t: f64| g.mean(t));
    let curve = curve_csv(
        &fit.mean_curve,
        &fit.dropout,
        truth_fn.as_ref().map(|f| f as &dyn Fn(f64) -> f64),
    )?;

    write_file(&args.out, &report.to_json())?;
    write_file(&args.curve, &curve)?;

    if !fit.converged {
        let msg = format!("EM did not converge within {} iterations per phase", args.max_iter);
        if args.allow_nonconverged {
            eprintln!("warning: {msg}");
        } else {
            return Err(CliError::Numerical(msg));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluationSummary {
    mse: f64,
    n_points: usize,
    truth: String,
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let report = FitReport::read(&args.fit)?;
    let curve = report.mean_curve()?;

    let (label, points, truth): (String, Vec<f64>, Vec<f64>) = match (&args.truth, &args.truth_csv) {
        (Some(name), _) => {
            let g = name.truth(args.shift);
            if let Some(&t) = report.points.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(CliError::Validation(format!(
                    "fitted point {t} lies outside [0, 1], where the built-in truths are defined"
                )));
            }
            let values = report.points.iter().map(|&t| g.mean(t)).collect();
            (g.name().to_string(), report.points.clone(), values)
        }
        (None, Some(path)) => {
            let (pts, values) = read_truth_csv(path)?;
            (path.display().to_string(), pts, values)
        }
        (None, None) => unreachable!("clap requires a truth"),
    };

    let mut out = String::from("t,mu_hat,mu_true,sq_error\n");
    let mut total = 0.0;
    for (&t, &mu_true) in points.iter().zip(&truth) {
        let mu_hat = curve.mean(t)?;
        let sq = (mu_hat - mu_true).powi(2);
        total += sq;
        writeln!(out, "{t},{mu_hat},{mu_true},{sq}").unwrap();
    }
    let mse = total / points.len() as f64;

    write_file(&args.out, &out)?;
    if let Some(path) = &args.json {
        let summary = EvaluationSummary {
            mse,
            n_points: points.len(),
            truth: label,
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        write_file(path, &text)?;
    }
    println!("mse {mse}");
    Ok(())
}

fn read_truth_csv(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "mu_true" {
        return Err(CliError::Validation(format!(
            "{}: expected header `t,mu_true`",
            path.display()
        )));
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        match (parse(&record[0]), parse(&record[1])) {
            (Some(t), Some(mu)) => {
                points.push(t);
                values.push(mu);
            }
            _ => {
                return Err(CliError::Validation(format!(
                    "{}: line {line}: expected two finite numbers",
                    path.display()
                )))
            }
        }
    }
    if points.is_empty() {
        return Err(CliError::Validation(format!("{}: no rows", path.display())));
    }
    Ok((points, values))
}
