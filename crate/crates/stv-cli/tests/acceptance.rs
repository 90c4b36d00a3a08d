//! Acceptance suite: every release criterion, each printing one PASS/FAIL
//! line (visible with `--nocapture`).
//!
//! Run with:
//!
//! ```text
//! cargo test -p stv-cli --test acceptance -- --nocapture
//! ```
//!
//! The long-running benchmark criteria state their wall-clock budgets and
//! are asserted against them.

use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use stv::bench::{
    run_cov_experiment, run_mean_experiment, run_rate_check, EstimatorId, ExperimentConfig,
};
use stv::divergences::expected_sigmoid_gaussian;
use stv::estimators::{
    approx_model_expectation, approx_model_expectation_stderr, importance_objective, ModelFamily,
    StvLearnConfig, Variant,
};
use stv::kernels::{KernelSpec, Point, RkhsFunction};
use stv::models::KernelExpFamilyModel;
use stv::optim::finite_diff_check;
use stv::rng::{derive, Stream};
use stv::verify;

fn report(name: &str, pass: bool, started: Instant, budget: Duration, detail: &str) {
    let elapsed = started.elapsed();
    println!(
        "{}  {name}  ({detail}; {:.1}s of {:.0}s budget)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(pass, "{name}: {detail}");
    assert!(
        elapsed <= budget,
        "{name} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

/// Sigmoid decay-rate bound: grid sup of `sigma(-c log t)(t - 1)` stays
/// below `1/c` for every tested `c`.
#[test]
fn decay_rate_bound_holds() {
    let started = Instant::now();
    let result = verify::check_decay_rate().unwrap();
    report(
        "decay-rate-bound",
        result.pass,
        started,
        Duration::from_secs(1),
        &result.detail,
    );
}

/// STV below TV with bias gap at most `|f - g| / U` (plus solver slack) on
/// twenty random 1-D Gaussian pairs across four witness radii.
#[test]
fn stv_tv_gap_respects_bias_bound() {
    let started = Instant::now();
    let below = verify::check_stv_below_tv(1, 20).unwrap();
    let band = verify::check_bias_bound_sweep(1, 20, 0.02).unwrap();
    report(
        "stv-tv-bias-bound",
        below.pass && band.pass,
        started,
        Duration::from_secs(120),
        &format!("{}; {}", below.detail, band.detail),
    );
}

/// Step-function witness brute force over (sign, 2001-point bias grid)
/// recovers the exact Gaussian TV within 1e-3 on ten random pairs.
#[test]
fn step_witness_grid_recovers_tv() {
    let started = Instant::now();
    let result = verify::check_step_witness_recovers_tv(1, 10, 2001, 1e-3).unwrap();
    report(
        "step-witness-recovers-tv",
        result.pass,
        started,
        Duration::from_secs(10),
        &result.detail,
    );
}

/// Contaminated mean benchmark at d = 10, n = 1000, eps = 0.1: the learner
/// lands in the published band and beats the componentwise median.
#[test]
fn mean_benchmark_contaminated() {
    let started = Instant::now();
    let cfg = ExperimentConfig::mean_default(10, 1000, 10, 7);
    let rep = run_mean_experiment(&cfg).unwrap();
    let stv = rep.aggregate(EstimatorId::Stv).unwrap().mean;
    let med = rep.aggregate(EstimatorId::CompMedian).unwrap().mean;
    let pass = (0.08..=0.35).contains(&stv) && stv < med && (0.30..=0.60).contains(&med);
    report(
        "mean-benchmark-contaminated",
        pass,
        started,
        Duration::from_secs(600),
        &format!("stv mean error {stv:.3}, componentwise median {med:.3}"),
    );
}

/// Error shrinks with the sample size: at d = 50 the error at n = 1000 is at
/// most half the error at n = 100.
#[test]
fn mean_benchmark_scaling_with_n() {
    let started = Instant::now();
    let mut small = ExperimentConfig::mean_default(50, 100, 5, 11);
    small.estimators = vec![EstimatorId::Stv];
    let mut large = small.clone();
    large.n = 1000;
    let err_small = run_mean_experiment(&small)
        .unwrap()
        .aggregate(EstimatorId::Stv)
        .unwrap()
        .mean;
    let err_large = run_mean_experiment(&large)
        .unwrap()
        .aggregate(EstimatorId::Stv)
        .unwrap()
        .mean;
    report(
        "mean-benchmark-scaling",
        err_large <= 0.5 * err_small,
        started,
        Duration::from_secs(600),
        &format!("error {err_small:.3} at n=100 vs {err_large:.3} at n=1000"),
    );
}

/// Contaminated covariance benchmark at d = 5, n = 5000, eps = 0.2: the
/// learner beats the sample covariance and the Kendall baseline, with median
/// Frobenius error below 2.
#[test]
fn cov_benchmark_contaminated() {
    let started = Instant::now();
    let cfg = ExperimentConfig::cov_default(5, 5000, 10, 7);
    let rep = run_cov_experiment(&cfg).unwrap();
    let stv = rep.aggregate(EstimatorId::Stv).unwrap().median;
    let sample = rep.aggregate(EstimatorId::SampleCov).unwrap().median;
    let kendall = rep.aggregate(EstimatorId::Kendall).unwrap().median;
    let pass = stv < sample && stv < kendall && stv < 2.0;
    report(
        "cov-benchmark-contaminated",
        pass,
        started,
        Duration::from_secs(900),
        &format!("stv {stv:.3}, sample {sample:.3}, kendall {kendall:.3}"),
    );
}

/// Clean-data consistency: the log-log slope of mean error against n sits in
/// the square-root band for both the learner and the sample-mean oracle.
#[test]
fn clean_rate_exponent() {
    let started = Instant::now();
    let grid = [250usize, 500, 1000, 2000, 4000];
    let learn = StvLearnConfig::default_mean();
    let stv_rate = run_rate_check(10, &grid, 10, EstimatorId::Stv, &learn, 13).unwrap();
    let oracle_rate =
        run_rate_check(10, &grid, 10, EstimatorId::SampleMean, &learn, 13).unwrap();
    let band = -0.65..=-0.35;
    let pass = band.contains(&stv_rate.slope) && band.contains(&oracle_rate.slope);
    report(
        "clean-rate-exponent",
        pass,
        started,
        Duration::from_secs(900),
        &format!(
            "stv slope {:.3}, sample-mean slope {:.3}",
            stv_rate.slope, oracle_rate.slope
        ),
    );
}

/// Finite differences confirm the analytic gradient of the full learner
/// objective (model side, witness side, softmax-weight path) at 20 random
/// points for every family and variant.
#[test]
fn gradient_finite_difference() {
    let started = Instant::now();
    let result = verify::check_gradients(1, 20, 1e-4).unwrap();
    report(
        "gradient-finite-difference",
        result.pass,
        started,
        Duration::from_secs(30),
        &result.detail,
    );
}

/// Importance-sampling and exact-sampling estimates of the model expectation
/// agree within three combined standard errors in at least 95% of repetitions.
#[test]
fn importance_sampling_consistency() {
    let started = Instant::now();
    let sigma = stv::divergences::SigmaFunction::Sigmoid;
    let l = 100_000;
    let reps = 20;
    let mut agree = 0;
    for rep in 0..reps {
        let mut direction = Stream::new(derive(42, &[rep as u64, 1]));
        let mut f_vec = DVector::from_vec(direction.standard_normal_vec(2));
        f_vec /= f_vec.norm();
        let f = RkhsFunction::from_vector(f_vec.clone());
        let u = RkhsFunction::from_vector(DVector::from_vec(
            direction.standard_normal_vec(2),
        ));
        let b = direction.standard_normal();

        let mut zs = Stream::new(derive(42, &[rep as u64, 2]));
        let z: Vec<Point> = (0..l)
            .map(|_| DVector::from_vec(zs.standard_normal_vec(2)))
            .collect();
        let log_q = DVector::zeros(l);
        let is_est = approx_model_expectation(&f, &u, b, &sigma, &z, &log_q).unwrap();
        let is_se = approx_model_expectation_stderr(
            &f,
            &u,
            b,
            &sigma,
            &z,
            &log_q,
            100,
            derive(42, &[rep as u64, 3]),
        )
        .unwrap();

        let model = KernelExpFamilyModel::gaussian_mean(f_vec);
        let draws = model.sample(l, derive(42, &[rep as u64, 4])).unwrap();
        let vals: Vec<f64> = draws
            .iter()
            .map(|x| sigma.value(u.eval(x).unwrap() - b))
            .collect();
        let mc = vals.iter().sum::<f64>() / l as f64;
        let var = vals.iter().map(|v| (v - mc) * (v - mc)).sum::<f64>() / (l as f64 - 1.0);
        let mc_se = (var / l as f64).sqrt();

        let combined = (is_se * is_se + mc_se * mc_se).sqrt();
        if (is_est - mc).abs() <= 3.0 * combined {
            agree += 1;
        }
    }
    report(
        "importance-sampling-consistency",
        agree as f64 >= 0.95 * reps as f64,
        started,
        Duration::from_secs(300),
        &format!("{agree}/{reps} repetitions within 3 combined standard errors"),
    );
}

/// The gradient check also holds at points drawn for each variant separately
/// (covers the penalty terms' gradients).
#[test]
fn gradient_check_covers_all_variants() {
    let started = Instant::now();
    let spec = stv::contamination::scenario_mean(2);
    let (data, _) = spec.sample(50, 3).unwrap();
    let mut s = Stream::new(9);
    let mut worst = 0.0f64;
    for variant in [Variant::HardConstraint, Variant::AdditiveReg, Variant::FullReg] {
        let cfg = StvLearnConfig {
            variant,
            r: 4.0,
            u_radius: 9.0,
            ..StvLearnConfig::default_mean()
        };
        for family in [
            ModelFamily::GaussianMean { dim: 2 },
            ModelFamily::GaussianCovariance { dim: 2 },
            ModelFamily::GeneralKernel {
                kernel: KernelSpec::rbf(2, 0.8).unwrap(),
            },
        ] {
            let obj = importance_objective(&data, &family, &cfg, 30, 17).unwrap();
            let theta: Vec<f64> = (0..obj.dim()).map(|_| 0.3 * s.standard_normal()).collect();
            let err = finite_diff_check(&|t: &[f64]| obj.value_grad(t), &theta, 1e-5).unwrap();
            worst = worst.max(err);
        }
    }
    report(
        "gradient-variants",
        worst < 1e-4,
        started,
        Duration::from_secs(30),
        &format!("max relative error {worst:.2e}"),
    );
}

/// Repeated `mean-bench` runs with identical flags and seed produce
/// byte-identical CSV artifacts.
#[test]
fn cli_mean_bench_is_deterministic() {
    let started = Instant::now();
    let dir = std::env::temp_dir().join("stv-acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let out_a = dir.join("det-a.csv");
    let out_b = dir.join("det-b.csv");
    for out in [&out_a, &out_b] {
        let status = Command::new(env!("CARGO_BIN_EXE_stv"))
            .args([
                "mean-bench",
                "--d",
                "5",
                "--n",
                "300",
                "--trials",
                "3",
                "--seed",
                "7",
                "--set",
                "outer_steps=300",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    report(
        "cli-determinism",
        a == b,
        started,
        Duration::from_secs(300),
        &format!("two runs, {} bytes each", a.len()),
    );
}

/// The quadrature oracle behind the bias-bound sweep matches a brute-force
/// trapezoid integral (guards the oracle itself).
#[test]
fn quadrature_oracle_self_check() {
    let started = Instant::now();
    let trap = {
        let n = 400_000;
        let (a, b) = (-12.0f64, 12.0);
        let h = (b - a) / n as f64;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let f = |z: f64| {
            (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * sig(0.8 + 5.0 * z)
        };
        let mut acc = 0.5 * (f(a) + f(b));
        for i in 1..n {
            acc += f(a + i as f64 * h);
        }
        acc * h
    };
    let quad = expected_sigmoid_gaussian(0.8, 5.0);
    report(
        "quadrature-oracle",
        (quad - trap).abs() < 1e-9,
        started,
        Duration::from_secs(10),
        &format!("quadrature {quad:.12} vs trapezoid {trap:.12}"),
    );
}
