//! Experiment harness for the contaminated-Gaussian benchmarks.
//!
//! Two experiment drivers mirror the published tables at desk scale: mean
//! estimation under `0.9 N_d(0, I) + 0.1 N_d(5 e, I)` (errors in the
//! Euclidean norm, aggregated as mean/std) and covariance estimation under
//! `0.8 N_d(0, S) + 0.2 N_d(6 e, S)` (Frobenius errors, aggregated as
//! median/MAD). A rate check regresses log mean error on log n for clean
//! data.
//!
//! Reproducibility contract: the per-trial seed is
//! `derive(master_seed, [scenario_family, trial])`, so a fixed
//! `ExperimentConfig` reproduces every per-trial error bit for bit,
//! regardless of thread count. `MeanShift` and `Clean` share a scenario
//! family, which gives them identical core draws for matched seeds (the
//! contamination sampler consumes its core stream independently of the
//! outlier indicators); that makes "contamination never helps" checks
//! well-posed.
//!
//! The CSV artifact is fully deterministic; per-trial wall-clock timings are
//! volatile by nature and therefore only appear in the JSON report and the
//! markdown summary, while the CSV's `wall_ms` column is written as `0`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contamination::{scenario_clean, scenario_cov, scenario_mean, ContaminationSpec};
use crate::estimators::{
    componentwise_median, fit_stv, kendall_cov, sample_mean_cov, ModelFamily, StvLearnConfig,
};
use crate::kernels::Point;
use crate::rng::derive;
use crate::{Error, Result};

const TAG_DATA: u64 = 0x40;
const TAG_EST: u64 = 0x41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    MeanShift,
    CovShift,
    Clean,
}

impl Scenario {
    /// Seed-derivation family: `MeanShift` and `Clean` share core draws.
    fn family(&self) -> u64 {
        match self {
            Scenario::MeanShift | Scenario::Clean => 1,
            Scenario::CovShift => 2,
        }
    }

    fn spec(&self, d: usize) -> ContaminationSpec {
        match self {
            Scenario::MeanShift => scenario_mean(d),
            Scenario::CovShift => scenario_cov(d),
            Scenario::Clean => scenario_clean(d),
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Scenario::MeanShift => 0.1,
            Scenario::CovShift => 0.2,
            Scenario::Clean => 0.0,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scenario::MeanShift => "mean-shift",
            Scenario::CovShift => "cov-shift",
            Scenario::Clean => "clean",
        };
        f.write_str(name)
    }
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorId {
    Stv,
    CompMedian,
    SampleMean,
    SampleCov,
    Kendall,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 5] = [
        EstimatorId::Stv,
        EstimatorId::CompMedian,
        EstimatorId::SampleMean,
        EstimatorId::SampleCov,
        EstimatorId::Kendall,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorId::Stv => "stv",
            EstimatorId::CompMedian => "comp-median",
            EstimatorId::SampleMean => "sample-mean",
            EstimatorId::SampleCov => "sample-cov",
            EstimatorId::Kendall => "kendall",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .iter()
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown estimator '{s}'; valid: {}",
                    EstimatorId::ALL.map(|e| e.name()).join(", ")
                ))
            })
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub estimators: Vec<EstimatorId>,
    pub learn: StvLearnConfig,
    pub master_seed: u64,
    /// Replaces the scenario's contamination rate when set.
    #[serde(default)]
    pub eps_override: Option<f64>,
}

impl ExperimentConfig {
    pub fn mean_default(d: usize, n: usize, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            scenario: Scenario::MeanShift,
            d,
            n,
            trials,
            estimators: vec![
                EstimatorId::Stv,
                EstimatorId::CompMedian,
                EstimatorId::SampleMean,
            ],
            learn: StvLearnConfig::default_mean(),
            master_seed,
            eps_override: None,
        }
    }

    pub fn cov_default(d: usize, n: usize, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            scenario: Scenario::CovShift,
            d,
            n,
            trials,
            estimators: vec![EstimatorId::Stv, EstimatorId::SampleCov, EstimatorId::Kendall],
            learn: StvLearnConfig::default_cov(),
            master_seed,
            eps_override: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(eps) = self.eps_override {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::InvalidInput(format!(
                    "eps override must lie in [0, 1], got {eps}"
                )));
            }
        }
        if self.trials < 1 {
            return Err(Error::InvalidInput("trials must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput("n must be >= 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators selected".into()));
        }
        Ok(())
    }

    /// Per-trial seed: `derive(master_seed, [scenario_family, trial])`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive(self.master_seed, &[self.scenario.family(), trial as u64])
    }

    /// Contamination spec with the eps override applied.
    fn spec(&self) -> ContaminationSpec {
        let mut spec = self.scenario.spec(self.d);
        if let Some(eps) = self.eps_override {
            spec.eps = eps;
        }
        spec
    }

    pub fn eps(&self) -> f64 {
        self.eps_override.unwrap_or_else(|| self.scenario.eps())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    Frobenius,
}

/// Per-estimator summary statistics over the completed trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub mad: f64,
    pub completed: usize,
}

impl Aggregate {
    pub fn compute(errors: &[f64]) -> Aggregate {
        let n = errors.len();
        if n == 0 {
            return Aggregate {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
                mad: f64::NAN,
                completed: 0,
            };
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let med = |v: &[f64]| {
            let m = v.len();
            if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            }
        };
        let median = med(&sorted);
        let mut dev: Vec<f64> = errors.iter().map(|e| (e - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        Aggregate {
            mean,
            std,
            median,
            mad: med(&dev),
            completed: n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub metric: Metric,
    pub estimators: Vec<EstimatorId>,
    /// `errors[trial][estimator]`; `None` records an estimator failure.
    pub errors: Vec<Vec<Option<f64>>>,
    pub seeds: Vec<u64>,
    /// `wall_ms[trial][estimator]` (volatile; excluded from the CSV).
    pub wall_ms: Vec<Vec<u64>>,
    pub aggregates: Vec<Aggregate>,
    pub failures: usize,
}

impl ExperimentReport {
    /// Error column of one estimator over the completed trials.
    pub fn estimator_errors(&self, id: EstimatorId) -> Vec<f64> {
        let idx = self
            .estimators
            .iter()
            .position(|e| *e == id)
            .unwrap_or(usize::MAX);
        self.errors
            .iter()
            .filter_map(|row| row.get(idx).copied().flatten())
            .collect()
    }

    pub fn aggregate(&self, id: EstimatorId) -> Option<&Aggregate> {
        let idx = self.estimators.iter().position(|e| *e == id)?;
        self.aggregates.get(idx)
    }

    fn assemble(
        scenario: Scenario,
        eps: f64,
        d: usize,
        n: usize,
        metric: Metric,
        estimators: Vec<EstimatorId>,
        seeds: Vec<u64>,
        trials: Vec<TrialResult>,
    ) -> ExperimentReport {
        let errors: Vec<Vec<Option<f64>>> = trials.iter().map(|t| t.errors.clone()).collect();
        let wall_ms: Vec<Vec<u64>> = trials.iter().map(|t| t.wall_ms.clone()).collect();
        let failures = errors
            .iter()
            .flat_map(|row| row.iter())
            .filter(|e| e.is_none())
            .count();
        let aggregates = (0..estimators.len())
            .map(|j| {
                let col: Vec<f64> = errors.iter().filter_map(|row| row[j]).collect();
                Aggregate::compute(&col)
            })
            .collect();
        ExperimentReport {
            scenario,
            d,
            n,
            eps,
            metric,
            estimators,
            errors,
            seeds,
            wall_ms,
            aggregates,
            failures,
        }
    }

    /// Recompute the aggregates from the per-trial errors; used to check the
    /// serialization round trip.
    pub fn recomputed_aggregates(&self) -> Vec<Aggregate> {
        (0..self.estimators.len())
            .map(|j| {
                let col: Vec<f64> = self.errors.iter().filter_map(|row| row[j]).collect();
                Aggregate::compute(&col)
            })
            .collect()
    }
}

struct TrialResult {
    errors: Vec<Option<f64>>,
    wall_ms: Vec<u64>,
}

fn run_trial(
    cfg: &ExperimentConfig,
    spec: &ContaminationSpec,
    trial: usize,
    mean_target: Option<&DVector<f64>>,
    cov_target: Option<&nalgebra::DMatrix<f64>>,
) -> Result<TrialResult> {
    let trial_seed = cfg.trial_seed(trial);
    let (data, _labels) = spec.sample(cfg.n, derive(trial_seed, &[TAG_DATA]))?;
    let mut errors = Vec::with_capacity(cfg.estimators.len());
    let mut wall = Vec::with_capacity(cfg.estimators.len());
    for (j, est) in cfg.estimators.iter().enumerate() {
        let started = Instant::now();
        let err = estimate_error(cfg, *est, &data, trial_seed, j, mean_target, cov_target);
        wall.push(started.elapsed().as_millis() as u64);
        errors.push(err);
    }
    Ok(TrialResult {
        errors,
        wall_ms: wall,
    })
}

fn estimate_error(
    cfg: &ExperimentConfig,
    est: EstimatorId,
    data: &[Point],
    trial_seed: u64,
    est_index: usize,
    mean_target: Option<&DVector<f64>>,
    cov_target: Option<&nalgebra::DMatrix<f64>>,
) -> Option<f64> {
    let fit_seed = derive(trial_seed, &[TAG_EST, est_index as u64]);
    match (est, mean_target, cov_target) {
        (EstimatorId::Stv, Some(target), None) => fit_stv(
            data,
            &ModelFamily::GaussianMean { dim: cfg.d },
            &cfg.learn,
            fit_seed,
        )
        .ok()
        .and_then(|fit| fit.mean_estimate())
        .map(|m| (m - target).norm()),
        (EstimatorId::CompMedian, Some(target), None) => componentwise_median(data)
            .ok()
            .map(|m| (m - target).norm()),
        (EstimatorId::SampleMean, Some(target), None) => sample_mean_cov(data)
            .ok()
            .map(|(m, _)| (m - target).norm()),
        (EstimatorId::Stv, None, Some(target)) => fit_stv(
            data,
            &ModelFamily::GaussianCovariance { dim: cfg.d },
            &cfg.learn,
            fit_seed,
        )
        .ok()
        .and_then(|fit| fit.covariance_estimate())
        .map(|s| (s - target).norm()),
        (EstimatorId::SampleCov, None, Some(target)) => sample_mean_cov(data)
            .ok()
            .map(|(_, s)| (s - target).norm()),
        (EstimatorId::Kendall, None, Some(target)) => {
            kendall_cov(data).ok().map(|s| (s - target).norm())
        }
        _ => None,
    }
}

/// Mean-estimation experiment (`MeanShift` or `Clean` scenarios): per trial,
/// sample, fit every estimator, record the Euclidean error against the core
/// mean. Estimator failures are recorded per trial, not fatal.
pub fn run_mean_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.scenario == Scenario::CovShift {
        return Err(Error::InvalidInput(
            "mean experiment needs the MeanShift or Clean scenario".into(),
        ));
    }
    if cfg
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorId::SampleCov | EstimatorId::Kendall))
    {
        return Err(Error::InvalidInput(
            "covariance estimators cannot run in the mean experiment".into(),
        ));
    }
    let spec = cfg.spec();
    let target = spec.core_mean();
    let trials: Vec<Result<TrialResult>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &spec, t, Some(&target), None))
        .collect();
    let trials: Result<Vec<TrialResult>> = trials.into_iter().collect();
    let seeds = (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect();
    Ok(ExperimentReport::assemble(
        cfg.scenario,
        cfg.eps(),
        cfg.d,
        cfg.n,
        Metric::Euclidean,
        cfg.estimators.clone(),
        seeds,
        trials?,
    ))
}

/// Covariance-estimation experiment (`CovShift` scenario): Frobenius errors
/// against the core covariance, aggregated as median/MAD.
pub fn run_cov_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.scenario != Scenario::CovShift {
        return Err(Error::InvalidInput(
            "covariance experiment needs the CovShift scenario".into(),
        ));
    }
    if cfg
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorId::CompMedian | EstimatorId::SampleMean))
    {
        return Err(Error::InvalidInput(
            "mean estimators cannot run in the covariance experiment".into(),
        ));
    }
    let spec = cfg.spec();
    let target = spec.core_covariance();
    let trials: Vec<Result<TrialResult>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &spec, t, None, Some(&target)))
        .collect();
    let trials: Result<Vec<TrialResult>> = trials.into_iter().collect();
    let seeds = (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect();
    Ok(ExperimentReport::assemble(
        cfg.scenario,
        cfg.eps(),
        cfg.d,
        cfg.n,
        Metric::Frobenius,
        cfg.estimators.clone(),
        seeds,
        trials?,
    ))
}

/// Result of the clean-data convergence-rate check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCheck {
    pub estimator: EstimatorId,
    pub n_grid: Vec<usize>,
    pub mean_errors: Vec<f64>,
    /// Least-squares slope of `log(mean error)` against `log n`.
    pub slope: f64,
}

/// Regress log mean error on log n over clean data. The expected slope for a
/// root-n consistent estimator is -1/2.
pub fn run_rate_check(
    d: usize,
    n_grid: &[usize],
    trials: usize,
    estimator: EstimatorId,
    learn: &StvLearnConfig,
    master_seed: u64,
) -> Result<RateCheck> {
    if n_grid.len() < 2 {
        return Err(Error::RateUndefined(format!(
            "need at least two sample sizes, got {}",
            n_grid.len()
        )));
    }
    let mut mean_errors = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let cfg = ExperimentConfig {
            scenario: Scenario::Clean,
            d,
            n,
            trials,
            estimators: vec![estimator],
            learn: learn.clone(),
            master_seed,
            eps_override: None,
        };
        let report = run_mean_experiment(&cfg)?;
        let errs = report.estimator_errors(estimator);
        if errs.is_empty() {
            return Err(Error::RateUndefined(format!(
                "estimator failed on every trial at n = {n}"
            )));
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        if mean <= 0.0 {
            return Err(Error::RateUndefined(format!(
                "zero mean error at n = {n} makes the log-log slope undefined"
            )));
        }
        mean_errors.push(mean);
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_bar = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum();
    if sxx == 0.0 {
        return Err(Error::RateUndefined(
            "sample-size grid has no spread".into(),
        ));
    }
    Ok(RateCheck {
        estimator,
        n_grid: n_grid.to_vec(),
        mean_errors,
        slope: sxy / sxx,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// CSV header of the per-trial data rows.
pub const CSV_HEADER: &str = "scenario,d,n,eps,estimator,trial,seed,error,wall_ms";

/// Write the report: CSV or JSON at `path`, plus a markdown summary next to
/// it (same stem, `.md`). The CSV is byte-deterministic for a fixed config;
/// real timings live in the JSON and markdown outputs only.
pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str(CSV_HEADER);
            out.push('\n');
            for (trial, row) in report.errors.iter().enumerate() {
                for (j, err) in row.iter().enumerate() {
                    let err_s = match err {
                        Some(e) => format!("{e}"),
                        None => String::new(),
                    };
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},0\n",
                        report.scenario,
                        report.d,
                        report.n,
                        report.eps,
                        report.estimators[j],
                        trial,
                        report.seeds[trial],
                        err_s
                    ));
                }
            }
            fs::write(path, out).map_err(io_err)?;
        }
        ReportFormat::Json => {
            let file = fs::File::create(path).map_err(io_err)?;
            serde_json::to_writer_pretty(file, report)
                .map_err(|e| Error::InvalidInput(format!("json serialization failed: {e}")))?;
        }
    }
    let md_path = path.with_extension("md");
    let mut md = fs::File::create(&md_path).map_err(|e| Error::Io {
        path: md_path.display().to_string(),
        source: e,
    })?;
    write!(md, "{}", summary_markdown(report)).map_err(io_err)?;
    Ok(())
}

/// Markdown summary table mirroring the published layout.
pub fn summary_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# {} benchmark: d = {}, n = {}, eps = {}\n\n",
        report.scenario, report.d, report.n, report.eps
    ));
    let metric = match report.metric {
        Metric::Euclidean => "Euclidean",
        Metric::Frobenius => "Frobenius",
    };
    out.push_str(&format!(
        "| estimator | mean (std) | median (MAD) | trials | mean wall (ms) |\n\
         |-----------|------------|--------------|--------|----------------|\n"
    ));
    for (j, est) in report.estimators.iter().enumerate() {
        let a = &report.aggregates[j];
        let wall: u64 = report.wall_ms.iter().map(|row| row[j]).sum::<u64>()
            / report.wall_ms.len().max(1) as u64;
        out.push_str(&format!(
            "| {est} | {:.3} ({:.3}) | {:.3} ({:.3}) | {} | {} |\n",
            a.mean, a.std, a.median, a.mad, a.completed, wall
        ));
    }
    out.push_str(&format!("\nerror metric: {metric} norm"));
    if report.failures > 0 {
        out.push_str(&format!("; {} estimator failures", report.failures));
    }
    out.push('\n');
    out
}

/// One parsed CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub estimator: String,
    pub trial: usize,
    pub seed: u64,
    pub error: Option<f64>,
    pub wall_ms: u64,
}

/// Parse a report CSV produced by [`emit_report`].
pub fn parse_report_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != CSV_HEADER {
                return Err(Error::InvalidInput(format!(
                    "unexpected CSV header: {line}"
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::InvalidInput(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::InvalidInput(format!("line {}: malformed {what}", lineno + 1))
        };
        rows.push(CsvRow {
            scenario: fields[0].to_string(),
            d: fields[1].parse().map_err(|_| parse_err("d"))?,
            n: fields[2].parse().map_err(|_| parse_err("n"))?,
            eps: fields[3].parse().map_err(|_| parse_err("eps"))?,
            estimator: fields[4].to_string(),
            trial: fields[5].parse().map_err(|_| parse_err("trial"))?,
            seed: fields[6].parse().map_err(|_| parse_err("seed"))?,
            error: if fields[7].is_empty() {
                None
            } else {
                Some(fields[7].parse().map_err(|_| parse_err("error"))?)
            },
            wall_ms: fields[8].parse().map_err(|_| parse_err("wall_ms"))?,
        });
    }
    Ok(rows)
}
