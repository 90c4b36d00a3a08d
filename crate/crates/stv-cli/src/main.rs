//! Command-line front end: contaminated-Gaussian benchmarks, fitting a model
//! to a data file, and the theory-verification property suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use stv::bench::{
    emit_report, run_cov_experiment, run_mean_experiment, run_rate_check, summary_markdown,
    EstimatorId, ExperimentConfig, RateCheck, ReportFormat, Scenario,
};
use stv::estimators::{fit_stv, ModelExpectation, ModelFamily, StvLearnConfig, Variant};
use stv::kernels::{KernelSpec, Point, Representation};
use stv::optim::Decay;

mod overrides;
use overrides::apply_override;

#[derive(Parser)]
#[command(
    name = "stv",
    about = "Robust estimation for kernel exponential families via smoothed total variation distances",
    version
)]
struct Cli {
    /// Worker threads for benchmark trials and solver restarts
    /// (default: available parallelism; env fallback STV_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BenchArgs {
    /// Data dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Sample size per trial.
    #[arg(long)]
    n: Option<usize>,
    /// Contamination rate override (scenario default otherwise).
    #[arg(long)]
    eps: Option<f64>,
    /// Number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; fully determines all randomized output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the per-trial report.
    #[arg(long)]
    out: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// JSON experiment-config file; CLI flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides of the experiment config (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> ReportFormat {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitModel {
    /// Gaussian mean model N(f, I) with the linear kernel.
    Mean,
    /// Gaussian covariance model N(0, (I + F)^{-1}) with the quadratic kernel.
    Cov,
    /// RBF-kernel exponential family in representer form.
    Kernel,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-estimation benchmark: 0.9 N_d(0, I) + 0.1 N_d(5 e, I).
    MeanBench(BenchArgs),
    /// Covariance benchmark: 0.8 N_d(0, S) + 0.2 N_d(6 e, S), S_ij = 2^-|i-j|.
    CovBench(BenchArgs),
    /// Clean-data convergence-rate check: slope of log error vs log n.
    RateCheck {
        #[arg(long, default_value_t = 10)]
        d: usize,
        /// Comma-separated sample sizes.
        #[arg(long, default_value = "250,500,1000,2000,4000")]
        n_grid: String,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional output path (CSV of per-n mean errors, or JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// key=value overrides of the learner config (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Fit a model to a headerless CSV data file (one sample per row).
    Fit {
        #[arg(long, value_enum)]
        model: FitModel,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// RBF bandwidth (kernel model only).
        #[arg(long, default_value_t = 1.0)]
        bandwidth: f64,
        /// key=value overrides of the learner config (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Run the theory-verification property suite; nonzero exit on any FAIL.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    if let Err(code) = setup_threads(cli.threads) {
        return code;
    }

    let result = match cli.command {
        Command::MeanBench(args) => bench(args, Scenario::MeanShift),
        Command::CovBench(args) => bench(args, Scenario::CovShift),
        Command::RateCheck {
            d,
            n_grid,
            trials,
            seed,
            out,
            format,
            sets,
        } => rate_check(d, &n_grid, trials, seed, out, format, &sets),
        Command::Fit {
            model,
            data,
            out,
            seed,
            bandwidth,
            sets,
        } => fit(model, &data, &out, seed, bandwidth, &sets),
        Command::Verify { seed } => verify(seed),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &stv::Error) -> u8 {
    use stv::Error::*;
    match e {
        DimensionMismatch { .. } | KernelMismatch(_) | InvalidInput(_) | Io { .. }
        | Unsupported(_) => 1,
        Domain(_) | Numeric(_) | State(_) | DegenerateScale { .. } | RateUndefined(_) => 2,
    }
}

fn setup_threads(flag: Option<usize>) -> Result<(), ExitCode> {
    let from_env = std::env::var("STV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(k) = flag.or(from_env) {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return Err(ExitCode::from(1));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| {
                eprintln!("error: failed to build thread pool: {e}");
                ExitCode::from(1)
            })?;
    }
    Ok(())
}

fn load_config(args: &BenchArgs, scenario: Scenario) -> stv::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| stv::Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| {
                stv::Error::InvalidInput(format!("bad config file {}: {e}", path.display()))
            })?
        }
        None => match scenario {
            Scenario::CovShift => ExperimentConfig::cov_default(5, 5000, 10, args.seed),
            _ => ExperimentConfig::mean_default(10, 1000, 10, args.seed),
        },
    };
    cfg.scenario = scenario;
    for kv in &args.sets {
        apply_override(&mut cfg, kv)?;
    }
    // Typed flags win over both the config file and --set.
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.eps_override = args.eps.or(cfg.eps_override);
    cfg.master_seed = args.seed;
    Ok(cfg)
}

fn bench(args: BenchArgs, scenario: Scenario) -> stv::Result<ExitCode> {
    let cfg = load_config(&args, scenario)?;
    let report = match scenario {
        Scenario::CovShift => run_cov_experiment(&cfg)?,
        _ => run_mean_experiment(&cfg)?,
    };
    emit_report(&report, &args.out, args.format.into())?;
    print!("{}", summary_markdown(&report));
    println!("report written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_learn_sets(sets: &[String]) -> stv::Result<StvLearnConfig> {
    // Reuse the experiment-config override machinery on a scratch config.
    let mut scratch = ExperimentConfig::mean_default(1, 2, 1, 0);
    for kv in sets {
        apply_override(&mut scratch, kv)?;
    }
    Ok(scratch.learn)
}

fn rate_check(
    d: usize,
    n_grid: &str,
    trials: usize,
    seed: u64,
    out: Option<PathBuf>,
    format: Format,
    sets: &[String],
) -> stv::Result<ExitCode> {
    let grid: Vec<usize> = n_grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| stv::Error::InvalidInput(format!("bad n-grid entry '{s}'")))
        })
        .collect::<stv::Result<_>>()?;
    let learn = parse_learn_sets(sets)?;
    let mut checks: Vec<RateCheck> = Vec::new();
    for est in [EstimatorId::SampleMean, EstimatorId::Stv] {
        let rate = run_rate_check(d, &grid, trials, est, &learn, seed)?;
        println!(
            "{}: slope {:.4} over n = {:?}",
            est, rate.slope, rate.n_grid
        );
        checks.push(rate);
    }
    if let Some(path) = out {
        let io_err = |e: std::io::Error| stv::Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        match format {
            Format::Csv => {
                let mut text = String::from("estimator,n,mean_error\n");
                for rate in &checks {
                    for (n, err) in rate.n_grid.iter().zip(rate.mean_errors.iter()) {
                        text.push_str(&format!("{},{},{}\n", rate.estimator, n, err));
                    }
                }
                std::fs::write(&path, text).map_err(io_err)?;
            }
            Format::Json => {
                let file = std::fs::File::create(&path).map_err(io_err)?;
                serde_json::to_writer_pretty(file, &checks)
                    .map_err(|e| stv::Error::InvalidInput(format!("json write failed: {e}")))?;
            }
        }
        println!("rate data written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Headerless CSV, one sample per row; the dimension is inferred from the
/// first row. Malformed rows are reported with their 1-based line number.
fn read_data_csv(path: &std::path::Path) -> stv::Result<Vec<Point>> {
    let text = std::fs::read_to_string(path).map_err(|e| stv::Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows: Vec<Point> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    stv::Error::InvalidInput(format!(
                        "{}: line {lineno}: '{f}' is not a number",
                        path.display()
                    ))
                })
            })
            .collect::<stv::Result<_>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(stv::Error::InvalidInput(format!(
                    "{}: line {lineno}: expected {d} fields, got {}",
                    path.display(),
                    vals.len()
                )));
            }
            _ => {}
        }
        rows.push(Point::from_vec(vals));
    }
    if rows.is_empty() {
        return Err(stv::Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn fit(
    model: FitModel,
    data_path: &std::path::Path,
    out: &std::path::Path,
    seed: u64,
    bandwidth: f64,
    sets: &[String],
) -> stv::Result<ExitCode> {
    let data = read_data_csv(data_path)?;
    let d = data[0].len();
    let mut learn = if sets.is_empty() {
        match model {
            FitModel::Cov => StvLearnConfig::default_cov(),
            _ => StvLearnConfig::default_mean(),
        }
    } else {
        parse_learn_sets(sets)?
    };
    let family = match model {
        FitModel::Mean => ModelFamily::GaussianMean { dim: d },
        FitModel::Cov => ModelFamily::GaussianCovariance { dim: d },
        FitModel::Kernel => {
            if !matches!(
                learn.model_expectation,
                ModelExpectation::ImportanceSampling { .. }
            ) {
                learn.model_expectation = ModelExpectation::ImportanceSampling { draws: 500 };
            }
            ModelFamily::GeneralKernel {
                kernel: KernelSpec::rbf(d, bandwidth)?,
            }
        }
    };
    let result = fit_stv(&data, &family, &learn, seed)?;

    let mut doc = serde_json::Map::new();
    doc.insert("dim".into(), d.into());
    doc.insert("n".into(), data.len().into());
    doc.insert("seed".into(), seed.into());
    match result.f_hat.representation() {
        Representation::ExplicitVector(v) => {
            doc.insert("model".into(), "mean".into());
            doc.insert(
                "f".into(),
                serde_json::to_value(v.as_slice()).expect("vector to json"),
            );
        }
        Representation::ExplicitMatrix(m) => {
            doc.insert("model".into(), "covariance".into());
            let f_mat = m * -2.0; // natural parameter is -x'Fx/2
            let rows: Vec<Vec<f64>> = (0..f_mat.nrows())
                .map(|i| f_mat.row(i).iter().copied().collect())
                .collect();
            doc.insert(
                "f_matrix".into(),
                serde_json::to_value(rows).expect("matrix"),
            );
            if let Some(sigma) = result.covariance_estimate() {
                let rows: Vec<Vec<f64>> = (0..sigma.nrows())
                    .map(|i| sigma.row(i).iter().copied().collect())
                    .collect();
                doc.insert(
                    "covariance".into(),
                    serde_json::to_value(rows).expect("matrix"),
                );
            }
        }
        Representation::Representer {
            anchors,
            coefficients,
        } => {
            doc.insert("model".into(), "kernel".into());
            doc.insert("bandwidth".into(), serde_json::json!(bandwidth));
            let anchor_rows: Vec<Vec<f64>> =
                anchors.iter().map(|a| a.as_slice().to_vec()).collect();
            doc.insert(
                "anchors".into(),
                serde_json::to_value(anchor_rows).expect("anchors"),
            );
            doc.insert(
                "coefficients".into(),
                serde_json::to_value(coefficients.as_slice()).expect("coefficients"),
            );
        }
    }
    doc.insert("f_norm".into(), serde_json::json!(result.f_hat.norm()));
    doc.insert(
        "iterations".into(),
        serde_json::json!(result.diagnostics.iterations),
    );
    doc.insert(
        "wall_ms".into(),
        serde_json::json!(result.diagnostics.wall_ms),
    );
    if !result.diagnostics.warnings.is_empty() {
        doc.insert(
            "warnings".into(),
            serde_json::to_value(&result.diagnostics.warnings).expect("warnings"),
        );
    }

    let file = std::fs::File::create(out).map_err(|e| stv::Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    serde_json::to_writer_pretty(file, &serde_json::Value::Object(doc))
        .map_err(|e| stv::Error::InvalidInput(format!("json write failed: {e}")))?;
    println!("fit written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(seed: u64) -> stv::Result<ExitCode> {
    let results = stv::verify::run_all(seed)?;
    let mut all_pass = true;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status}  {}  ({})", r.name, r.detail);
        all_pass &= r.pass;
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

/// Variant parsing shared with the override module.
pub(crate) fn parse_variant(s: &str) -> stv::Result<Variant> {
    match s {
        "hard" | "hard-constraint" => Ok(Variant::HardConstraint),
        "additive" | "additive-reg" => Ok(Variant::AdditiveReg),
        "full" | "full-reg" => Ok(Variant::FullReg),
        _ => Err(stv::Error::InvalidInput(format!(
            "unknown variant '{s}'; valid: hard, additive, full"
        ))),
    }
}

pub(crate) fn parse_decay(s: &str) -> stv::Result<Decay> {
    if s == "none" {
        return Ok(Decay::None);
    }
    if let Some(w) = s.strip_prefix("inv-sqrt:") {
        let warmup = w
            .parse::<usize>()
            .map_err(|_| stv::Error::InvalidInput(format!("bad decay warmup '{w}'")))?;
        return Ok(Decay::InvSqrt { warmup });
    }
    Err(stv::Error::InvalidInput(format!(
        "unknown decay '{s}'; valid: none, inv-sqrt:<warmup>"
    )))
}
