//! Scratch harness for inspecting fit dynamics while tuning the optimizer.

use nalgebra::DVector;
use stv::contamination::{scenario_clean, scenario_mean};
use stv::estimators::{fit_stv, ModelExpectation, ModelFamily, StvLearnConfig};
use stv::optim::{Decay, GdaConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("mean");

    match mode {
        "mean" => mean_experiment(&args[2..]),
        "clean" => clean_experiment(&args[2..]),
        "landscape" => landscape(&args[2..]),
        "witness" => witness_probe(&args[2..]),
        "cov" => cov_experiment(&args[2..]),
        "covland" => cov_landscape(&args[2..]),
        "rate" => rate_experiment(&args[2..]),
        _ => eprintln!("unknown mode {mode}"),
    }
}

/// STV values along the segment between the true F and the fitted F.
fn cov_landscape(args: &[String]) {
    use nalgebra::DMatrix;
    use stv::contamination::{banded_covariance, scenario_cov};
    use stv::divergences::{stv_model_vs_samples, ModelSide, StvConfig};
    use stv::kernels::KernelSpec;
    use stv::models::KernelExpFamilyModel;

    let d = parse(args, "d", 5);
    let n = parse(args, "n", 5000);
    let spec = scenario_cov(d);
    let (data, _) = spec.sample(n, 1000).unwrap();

    let sigma0 = banded_covariance(d);
    let f_true = sigma0
        .clone()
        .try_inverse()
        .map(|inv| inv - DMatrix::identity(d, d))
        .unwrap();

    let mut learn = StvLearnConfig::default_cov();
    learn.optimizer.tail_average = 0.5;
    let fit = stv::estimators::fit_stv(
        &data,
        &ModelFamily::GaussianCovariance { dim: d },
        &learn,
        7,
    )
    .unwrap();
    let sig_hat = fit.covariance_estimate().unwrap();
    println!("fit error: {:.3}", (&sig_hat - &sigma0).norm());
    let f_hat = sig_hat
        .try_inverse()
        .map(|inv| inv - DMatrix::identity(d, d))
        .unwrap();

    let mut cfg = StvConfig::new(KernelSpec::quadratic(d), 100.0).unwrap();
    cfg.inner.outer_steps = 1500;
    cfg.inner.restarts = 8;
    cfg.inner.step_inner = 0.2;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let f_t = &f_true * (1.0 - t) + &f_hat * t;
        let model = KernelExpFamilyModel::gaussian_covariance(f_t.clone()).unwrap();
        let sig_t = model.to_gaussian().unwrap().1;
        let est = stv_model_vs_samples(
            &model,
            &data,
            &cfg,
            &ModelSide::ExactDraws { m: 5000 },
            11,
        )
        .unwrap();
        println!(
            "t = {t:.2}: frob err {:.3}, stv = {:.4}",
            (&sig_t - &sigma0).norm(),
            est.value
        );
    }
}

fn cov_experiment(args: &[String]) {
    use stv::bench::{run_cov_experiment, EstimatorId, ExperimentConfig};
    let d = parse(args, "d", 5);
    let n = parse(args, "n", 5000);
    let trials = parse(args, "trials", 3);
    let mut cfg = ExperimentConfig::cov_default(d, n, trials, parse(args, "seed", 7));
    cfg.learn.optimizer = config(args).optimizer;
    cfg.learn.model_expectation = ModelExpectation::ExactSampling {
        draws: parse(args, "draws", 2000),
    };
    let start = std::time::Instant::now();
    let report = run_cov_experiment(&cfg).unwrap();
    for est in [EstimatorId::Stv, EstimatorId::SampleCov, EstimatorId::Kendall] {
        let a = report.aggregate(est).unwrap();
        println!(
            "{est}: median {:.3} (mad {:.3}) mean {:.3}",
            a.median, a.mad, a.mean
        );
    }
    println!("failures: {}, wall {:?}", report.failures, start.elapsed());
}

fn rate_experiment(args: &[String]) {
    use stv::bench::{run_rate_check, EstimatorId};
    let d = parse(args, "d", 10);
    let trials = parse(args, "trials", 10);
    let learn = config(args);
    let grid = [250usize, 500, 1000, 2000, 4000];
    let start = std::time::Instant::now();
    for est in [EstimatorId::SampleMean, EstimatorId::Stv] {
        let rate = run_rate_check(d, &grid, trials, est, &learn, parse(args, "seed", 7)).unwrap();
        println!(
            "{est}: slope {:.3}, errors {:?}",
            rate.slope,
            rate.mean_errors
                .iter()
                .map(|e| (e * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
    println!("wall {:?}", start.elapsed());
}

/// Compare solver-found witnesses against hand-built ones at a fixed drifted
/// model.
fn witness_probe(args: &[String]) {
    use stv::divergences::{stv_between_samples, SigmaFunction, StvConfig, WeightedSample};
    use stv::kernels::KernelSpec;
    use stv::models::KernelExpFamilyModel;

    let d = parse(args, "d", 10);
    let n = parse(args, "n", 1000);
    let s = parse(args, "s", 0.6);
    let spec = scenario_mean(d);
    let (data, _) = spec.sample(n, 1000).unwrap();
    let f = DVector::from_element(d, s / (d as f64).sqrt());
    let model = KernelExpFamilyModel::gaussian_mean(f);
    let draws = model.sample(4000, 99).unwrap();

    let sigma = SigmaFunction::Sigmoid;
    let eval = |u: &DVector<f64>, b: f64| -> f64 {
        let m: f64 = draws.iter().map(|x| sigma.value(u.dot(x) - b)).sum::<f64>()
            / draws.len() as f64;
        let q: f64 =
            data.iter().map(|x| sigma.value(u.dot(x) - b)).sum::<f64>() / data.len() as f64;
        m - q
    };

    let e_dir = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    for scale in [2.0, 5.0, 10.0, 20.0, 50.0] {
        // Bulk witness: +e direction, threshold near the bulk.
        let u = &e_dir * scale;
        let mut best = (0.0, 0.0f64);
        for bi in -40..=80 {
            let b = bi as f64 * 0.05 * scale;
            let v = eval(&u, b);
            if v > best.1 {
                best = (b, v);
            }
        }
        // Outlier witness: -e direction, threshold between bulk and outliers.
        let un = -&u;
        let mut bestn = (0.0, 0.0f64);
        for bi in -300..=20 {
            let b = bi as f64 * 0.05 * scale;
            let v = eval(&un, b);
            if v > bestn.1 {
                bestn = (b, v);
            }
        }
        println!(
            "scale {scale:>5}: bulk witness {:.4} (b = {:.2}), outlier witness {:.4} (b = {:.2})",
            best.1, best.0, bestn.1, bestn.0
        );
    }

    let mut cfg = StvConfig::new(KernelSpec::linear(d), 100.0).unwrap();
    cfg.inner.outer_steps = parse(args, "steps", 2000);
    cfg.inner.restarts = parse(args, "restarts", 8);
    cfg.inner.step_inner = parse(args, "si", 0.2);
    let p = WeightedSample::uniform(draws.clone()).unwrap();
    let q = WeightedSample::uniform(data.clone()).unwrap();
    let est = stv_between_samples(&p, &q, &cfg, 5).unwrap();
    println!(
        "solver: value {:.4}, restart values {:?}",
        est.value,
        est.restart_values
            .iter()
            .map(|v| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
}

/// High-quality STV value along the drift direction f = s * e.
fn landscape(args: &[String]) {
    use stv::divergences::{stv_model_vs_samples, ModelSide, StvConfig};
    use stv::kernels::KernelSpec;
    use stv::models::KernelExpFamilyModel;

    let d = parse(args, "d", 10);
    let n = parse(args, "n", 1000);
    let spec = scenario_mean(d);
    let (data, _) = spec.sample(n, 1000).unwrap();
    let mut cfg = StvConfig::new(KernelSpec::linear(d), 100.0).unwrap();
    cfg.inner.outer_steps = 2000;
    cfg.inner.restarts = 8;
    cfg.inner.step_inner = 0.2;
    for s in [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6] {
        let f = DVector::from_element(d, s / (d as f64).sqrt());
        let model = KernelExpFamilyModel::gaussian_mean(f);
        let est = stv_model_vs_samples(
            &model,
            &data,
            &cfg,
            &ModelSide::ExactDraws { m: 4000 },
            5,
        )
        .unwrap();
        println!("|f| = {s:.2}: stv = {:.4}", est.value);
    }
}

fn parse<T: std::str::FromStr>(args: &[String], key: &str, default: T) -> T {
    for a in args {
        if let Some(v) = a.strip_prefix(&format!("{key}=")) {
            if let Ok(x) = v.parse() {
                return x;
            }
        }
    }
    default
}

fn config(args: &[String]) -> StvLearnConfig {
    let mut cfg = StvLearnConfig::default_mean();
    cfg.optimizer = GdaConfig {
        outer_steps: parse(args, "outer", 2000),
        inner_steps_per_outer: parse(args, "inner", 5),
        step_outer: parse(args, "so", 0.02),
        step_inner: parse(args, "si", 0.05),
        decay: Decay::InvSqrt {
            warmup: parse(args, "warmup", 200),
        },
        restarts: parse(args, "restarts", 4),
        tol: 0.0,
        max_wall_ms: None,
        checkpoint_window: parse(args, "window", 25),
        tail_average: parse(args, "tail", 0.0),
    };
    cfg.model_expectation = ModelExpectation::ExactSampling {
        draws: parse(args, "draws", 1000),
    };
    cfg
}

fn mean_experiment(args: &[String]) {
    let d = parse(args, "d", 10);
    let n = parse(args, "n", 1000);
    let trials = parse(args, "trials", 5);
    let cfg = config(args);
    let spec = scenario_mean(d);
    let mut errs = Vec::new();
    for t in 0..trials {
        let start = std::time::Instant::now();
        let (data, _) = spec.sample(n, 1000 + t).unwrap();
        let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: d }, &cfg, 77 + t).unwrap();
        let f = fit.mean_estimate().unwrap();
        let err = f.norm();
        errs.push(err);
        let trace = &fit.objective_trace;
        let tail: f64 =
            trace[trace.len().saturating_sub(50)..].iter().sum::<f64>() / 50.0f64.min(trace.len() as f64);
        println!(
            "trial {t}: err {err:.4}  restarts {:?}  tail-obj {tail:.4}  wall {:?}",
            fit.diagnostics
                .restart_best
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            start.elapsed()
        );
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    println!("mean error over {trials} trials: {mean:.4}");

    // reference: component-wise median and sample mean
    let mut med_errs = Vec::new();
    let mut sm_errs = Vec::new();
    for t in 0..trials {
        let (data, _) = spec.sample(n, 1000 + t).unwrap();
        med_errs.push(
            stv::estimators::componentwise_median(&data)
                .unwrap()
                .norm(),
        );
        let (m, _) = stv::estimators::sample_mean_cov(&data).unwrap();
        sm_errs.push((m - DVector::zeros(d)).norm());
    }
    println!(
        "comp-median mean error: {:.4}, sample-mean: {:.4}",
        med_errs.iter().sum::<f64>() / trials as f64,
        sm_errs.iter().sum::<f64>() / trials as f64
    );
}

fn clean_experiment(args: &[String]) {
    let d = parse(args, "d", 1);
    let n = parse(args, "n", 4000);
    let trials = parse(args, "trials", 3);
    let cfg = config(args);
    let spec = scenario_clean(d);
    for t in 0..trials {
        let (data, _) = spec.sample(n, 500 + t).unwrap();
        let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: d }, &cfg, 33 + t).unwrap();
        let f = fit.mean_estimate().unwrap();
        println!("trial {t}: |f_hat| = {:.4}", f.norm());
    }
}
