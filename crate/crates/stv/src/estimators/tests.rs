use super::*;
use crate::contamination::{scenario_clean, scenario_mean};
use crate::divergences::expected_sigmoid_gaussian;
use crate::optim::finite_diff_check;

fn pt1(x: f64) -> Point {
    DVector::from_element(1, x)
}

fn quick_optimizer(outer: usize) -> GdaConfig {
    GdaConfig {
        outer_steps: outer,
        inner_steps_per_outer: 5,
        step_outer: 0.02,
        step_inner: 0.05,
        decay: Decay::InvSqrt { warmup: 100 },
        restarts: 2,
        tol: 0.0,
        max_wall_ms: None,
        checkpoint_window: 25,
        tail_average: 0.0,
    }
}

// -- softmax weights ----------------------------------------------------------

#[test]
fn softmax_uniform_for_flat_f() {
    let f = RkhsFunction::zero(KernelSpec::linear(1));
    let z: Vec<Point> = (0..8).map(|i| pt1(i as f64)).collect();
    let w = softmax_weights(&f, &z, &DVector::zeros(8)).unwrap();
    for i in 0..8 {
        assert!((w[i] - 0.125).abs() < 1e-15);
    }
}

#[test]
fn softmax_matches_closed_form() {
    // Logits (0, ln 3) give weights (1/4, 3/4).
    let f = RkhsFunction::from_vector(pt1(1.0));
    let z = vec![pt1(0.0), pt1(3.0f64.ln())];
    let w = softmax_weights(&f, &z, &DVector::zeros(2)).unwrap();
    assert!((w[0] - 0.25).abs() < 1e-14);
    assert!((w[1] - 0.75).abs() < 1e-14);
    let total: f64 = w.iter().sum();
    assert!((total - 1.0).abs() < 1e-14);
}

#[test]
fn softmax_shift_invariant() {
    let logits = [0.0, 1.0, 2.0];
    let shifted = [2.0, 3.0, 4.0];
    assert_eq!(softmax_from_logits(&logits), softmax_from_logits(&shifted));
}

#[test]
fn softmax_rejects_non_finite_logit() {
    let f = RkhsFunction::from_vector(pt1(1.0));
    let z = vec![pt1(f64::NAN)];
    let err = softmax_weights(&f, &z, &DVector::zeros(1)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert!(err.to_string().contains("index 0"));
}

// -- approximate model expectation ---------------------------------------------

#[test]
fn approx_expectation_constant_argument() {
    let f = RkhsFunction::from_vector(pt1(0.7));
    let u = RkhsFunction::zero(KernelSpec::linear(1));
    let z: Vec<Point> = (0..64).map(|i| pt1(i as f64 / 8.0)).collect();
    let v = approx_model_expectation(
        &f,
        &u,
        0.0,
        &SigmaFunction::Sigmoid,
        &z,
        &DVector::zeros(64),
    )
    .unwrap();
    assert!((v - 0.5).abs() < 1e-12);
}

#[test]
fn approx_expectation_reduces_to_plain_average_for_flat_f() {
    let f = RkhsFunction::zero(KernelSpec::linear(1));
    let u = RkhsFunction::from_vector(pt1(1.0));
    let mut s = Stream::new(3);
    let z: Vec<Point> = (0..500).map(|_| pt1(s.standard_normal())).collect();
    let sigma = SigmaFunction::Sigmoid;
    let v = approx_model_expectation(&f, &u, 0.3, &sigma, &z, &DVector::zeros(500)).unwrap();
    let direct: f64 = z.iter().map(|x| sigma.value(x[0] - 0.3)).sum::<f64>() / 500.0;
    assert!((v - direct).abs() < 1e-12);
}

#[test]
fn approx_expectation_matches_quadrature_oracle() {
    // E_{N(1,1)}[sigmoid(X)] via importance sampling from N(0,1) against the
    // deterministic quadrature value, within three bootstrap standard errors.
    let f = RkhsFunction::from_vector(pt1(1.0));
    let u = RkhsFunction::from_vector(pt1(1.0));
    let mut s = Stream::new(7);
    let l = 100_000;
    let z: Vec<Point> = (0..l).map(|_| pt1(s.standard_normal())).collect();
    let log_q = DVector::zeros(l);
    let sigma = SigmaFunction::Sigmoid;
    let est = approx_model_expectation(&f, &u, 0.0, &sigma, &z, &log_q).unwrap();
    let se =
        approx_model_expectation_stderr(&f, &u, 0.0, &sigma, &z, &log_q, 200, 11).unwrap();
    let oracle = expected_sigmoid_gaussian(1.0, 1.0);
    assert!(
        (est - oracle).abs() < 3.0 * se,
        "est {est}, oracle {oracle}, se {se}"
    );
}

#[test]
fn importance_and_exact_sampling_expectations_agree() {
    // Mean model in two dimensions with a fixed witness.
    let f_vec = DVector::from_row_slice(&[0.6, -0.8]);
    let f = RkhsFunction::from_vector(f_vec.clone());
    let u = RkhsFunction::from_vector(DVector::from_row_slice(&[1.0, 0.5]));
    let b = 0.2;
    let sigma = SigmaFunction::Sigmoid;

    let l = 100_000;
    let mut s = Stream::new(13);
    let z: Vec<Point> = (0..l)
        .map(|_| DVector::from_vec(s.standard_normal_vec(2)))
        .collect();
    let log_q = DVector::zeros(l);
    let is_est = approx_model_expectation(&f, &u, b, &sigma, &z, &log_q).unwrap();
    let is_se =
        approx_model_expectation_stderr(&f, &u, b, &sigma, &z, &log_q, 200, 17).unwrap();

    let model = crate::models::KernelExpFamilyModel::gaussian_mean(f_vec);
    let draws = model.sample(l, 19).unwrap();
    let vals: Vec<f64> = draws
        .iter()
        .map(|x| sigma.value(u.eval(x).unwrap() - b))
        .collect();
    let mc = vals.iter().sum::<f64>() / l as f64;
    let mc_var =
        vals.iter().map(|v| (v - mc) * (v - mc)).sum::<f64>() / (l as f64 - 1.0);
    let mc_se = (mc_var / l as f64).sqrt();

    let combined = (is_se * is_se + mc_se * mc_se).sqrt();
    assert!(
        (is_est - mc).abs() < 3.0 * combined,
        "is {is_est} vs mc {mc}, combined se {combined}"
    );
}

// -- gradients -------------------------------------------------------------------

#[test]
fn importance_objective_gradients_match_finite_differences() {
    let spec = scenario_mean(2);
    let (data, _) = spec.sample(60, 23).unwrap();
    let mut s = Stream::new(29);

    for (family, scale) in [
        (ModelFamily::GaussianMean { dim: 2 }, 0.5),
        (ModelFamily::GaussianCovariance { dim: 2 }, 0.3),
        (
            ModelFamily::GeneralKernel {
                kernel: KernelSpec::rbf(2, 1.0).unwrap(),
            },
            0.4,
        ),
    ] {
        for variant in [Variant::HardConstraint, Variant::AdditiveReg, Variant::FullReg] {
            let cfg = StvLearnConfig {
                variant,
                r: 5.0,
                u_radius: 8.0,
                sigma: SigmaFunction::Sigmoid,
                model_expectation: ModelExpectation::ImportanceSampling { draws: 40 },
                optimizer: quick_optimizer(10),
            };
            let obj = importance_objective(&data, &family, &cfg, 40, 31).unwrap();
            for _ in 0..3 {
                let theta: Vec<f64> = (0..obj.dim()).map(|_| scale * s.standard_normal()).collect();
                let err =
                    finite_diff_check(&|t: &[f64]| obj.value_grad(t), &theta, 1e-5).unwrap();
                assert!(
                    err < 1e-4,
                    "{family:?} / {variant:?}: finite-difference error {err}"
                );
            }
        }
    }
}

#[test]
fn mean_exact_pathwise_gradient_matches_finite_differences() {
    // With the per-step noise frozen, the reparameterized draws make the
    // objective a deterministic differentiable function of (f, u, b).
    let spec = scenario_clean(2);
    let (data, _) = spec.sample(50, 37).unwrap();
    let center = componentwise_median(&data).unwrap();
    let data_c: Vec<Point> = data.iter().map(|x| x - &center).collect();
    let mut obj = MeanObjective {
        data_c: columns(&data_c),
        center,
        sigma: SigmaFunction::Sigmoid,
        pen: Penalties::for_variant(Variant::FullReg, 3.0, 6.0),
        u_radius: 6.0,
        expectation: MeanExpectation::Exact {
            draws: 30,
            seed: 41,
            noise: DMatrix::zeros(2, 0),
            model_pts: DMatrix::zeros(2, 0),
        },
    };
    let x0 = [0.3, -0.2];
    obj.begin_outer_step(1, &x0);

    // Joint check over [x; y]; the draws shift with x, so d(model)/dx flows
    // through Y = x + xi.
    let vg = |theta: &[f64]| {
        let (x, y) = theta.split_at(2);
        let mut o = obj.clone();
        o.begin_outer_step(1, x); // same seed + step => same noise, Y = x + xi
        let v = o.value(x, y);
        let mut g = o.grad_x(x, y);
        g.extend(o.grad_y(x, y));
        (v, g)
    };
    let theta = [0.3, -0.2, 0.9, 0.4, 0.1];
    let err = finite_diff_check(&vg, &theta, 1e-5).unwrap();
    assert!(err < 1e-4, "pathwise gradient error {err}");
}

#[test]
fn cov_score_function_gradient_is_unbiased() {
    // Score-function estimate of d/dF E_{N(0,(I+F)^{-1})}[sigma(u(Y)-b)]
    // against central finite differences of the exact expectation computed
    // with large fresh batches (1-D case).
    let d = 1;
    let f0 = 0.4f64;
    let w = 0.8;
    let b = 0.3;
    let sigma = SigmaFunction::Sigmoid;

    let expectation = |f: f64, seed: u64| -> f64 {
        let model =
            crate::models::KernelExpFamilyModel::gaussian_covariance(DMatrix::from_element(
                1, 1, f,
            ))
            .unwrap();
        let draws = model.sample(400_000, seed).unwrap();
        draws
            .iter()
            .map(|y| sigma.value(w * y[0] * y[0] - b))
            .sum::<f64>()
            / 400_000.0
    };
    // Common random numbers make the finite difference stable.
    let h = 1e-3;
    let fd = (expectation(f0 + h, 5) - expectation(f0 - h, 5)) / (2.0 * h);

    let obj = CovObjective {
        data: columns(&[pt1(0.0), pt1(1.0)]),
        dim: d,
        sigma,
        pen: Penalties::for_variant(Variant::HardConstraint, 1.0, 1.0),
        u_radius: 1.0,
        expectation: CovExpectation::Exact {
            draws: 400_000,
            seed: 7,
            model_pts: DMatrix::zeros(1, 0),
            poisoned: false,
        },
    };
    let mut o = obj.clone();
    o.begin_outer_step(1, &[f0]);
    // grad_x of the model term only: subtract the (f-independent) data part,
    // which contributes nothing to grad_x under HardConstraint.
    let g = o.grad_x(&[f0], &[w, b])[0];
    assert!(
        (g - fd).abs() < 0.02,
        "score-function gradient {g} vs finite difference {fd}"
    );
}

// -- fit_stv ----------------------------------------------------------------------

#[test]
fn fit_mean_clean_data_recovers_origin() {
    let spec = scenario_clean(1);
    let (data, _) = spec.sample(4000, 43).unwrap();
    let mut cfg = StvLearnConfig::default_mean();
    cfg.optimizer = quick_optimizer(600);
    let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: 1 }, &cfg, 47).unwrap();
    let f_hat = fit.mean_estimate().unwrap();
    assert!(f_hat.norm() <= 0.15, "f_hat {}", f_hat[0]);

    let sample_mean = data.iter().map(|x| x[0]).sum::<f64>() / data.len() as f64;
    assert!(sample_mean.abs() <= 3.0 / (data.len() as f64).sqrt());
}

#[test]
fn fit_mean_contaminated_beats_sample_mean() {
    let spec = scenario_mean(2);
    let (data, _) = spec.sample(800, 53).unwrap();
    let mut cfg = StvLearnConfig::default_mean();
    cfg.optimizer = quick_optimizer(800);
    cfg.optimizer.restarts = 3;
    let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: 2 }, &cfg, 59).unwrap();
    let stv_err = fit.mean_estimate().unwrap().norm();
    let (mean, _) = sample_mean_cov(&data).unwrap();
    assert!(
        stv_err < mean.norm(),
        "stv {stv_err} not better than sample mean {}",
        mean.norm()
    );
    assert!(stv_err < 0.5, "stv error {stv_err}");
}

#[test]
fn fit_trace_running_minimum_is_non_increasing() {
    let spec = scenario_mean(1);
    let (data, _) = spec.sample(300, 61).unwrap();
    let mut cfg = StvLearnConfig::default_mean();
    cfg.optimizer = quick_optimizer(200);
    let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: 1 }, &cfg, 67).unwrap();
    let trace = &fit.objective_trace;
    assert!(!trace.is_empty());
    let w = cfg.optimizer.checkpoint_window;
    let smoothed: Vec<f64> = (0..trace.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            trace[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    let mut best = f64::INFINITY;
    for s in smoothed {
        let new_best = best.min(s);
        assert!(new_best <= best + 1e-6);
        best = new_best;
    }
}

#[test]
fn fit_mean_translation_equivariant() {
    // Hard constraint with an inactive ball keeps the estimator exactly
    // translation-equivariant; verified to 1e-8 despite fresh floating-point
    // roundings from the shifted data.
    let spec = scenario_mean(2);
    let (data, _) = spec.sample(200, 71).unwrap();
    let shift = DVector::from_row_slice(&[13.25, -7.5]);
    let shifted: Vec<Point> = data.iter().map(|x| x + &shift).collect();

    let cfg = StvLearnConfig {
        variant: Variant::HardConstraint,
        r: 1e6,
        u_radius: 20.0,
        sigma: SigmaFunction::Sigmoid,
        model_expectation: ModelExpectation::ExactSampling { draws: 200 },
        optimizer: quick_optimizer(300),
    };
    let fit_a = fit_stv(&data, &ModelFamily::GaussianMean { dim: 2 }, &cfg, 73).unwrap();
    let fit_b = fit_stv(&shifted, &ModelFamily::GaussianMean { dim: 2 }, &cfg, 73).unwrap();
    let delta = fit_b.mean_estimate().unwrap() - fit_a.mean_estimate().unwrap() - &shift;
    assert!(delta.norm() < 1e-8, "equivariance gap {}", delta.norm());
}

#[test]
fn hard_constraint_fit_respects_radii() {
    let spec = scenario_mean(2);
    let (data, _) = spec.sample(300, 79).unwrap();
    let cfg = StvLearnConfig {
        variant: Variant::HardConstraint,
        r: 0.2,
        u_radius: 1.5,
        sigma: SigmaFunction::Sigmoid,
        model_expectation: ModelExpectation::ExactSampling { draws: 200 },
        optimizer: quick_optimizer(150),
    };
    let fit = fit_stv(&data, &ModelFamily::GaussianMean { dim: 2 }, &cfg, 83).unwrap();
    assert!(fit.f_hat.norm() <= cfg.r + 1e-9);
    assert!(fit.witness.0.norm() <= cfg.u_radius + 1e-9);
}

#[test]
fn fit_cov_recovers_inflated_variance() {
    // Clean data from N(0, 2 I): F should approach -1/2 so that
    // (I + F)^{-1} = 2 I.
    let f_true = DMatrix::from_element(1, 1, -0.5);
    let model = crate::models::KernelExpFamilyModel::gaussian_covariance(f_true).unwrap();
    let data = model.sample(3000, 89).unwrap();
    let mut cfg = StvLearnConfig::default_cov();
    cfg.optimizer = quick_optimizer(800);
    let fit = fit_stv(
        &data,
        &ModelFamily::GaussianCovariance { dim: 1 },
        &cfg,
        97,
    )
    .unwrap();
    let sigma_hat = fit.covariance_estimate().unwrap();
    assert!(
        (sigma_hat[(0, 0)] - 2.0).abs() < 0.35,
        "sigma_hat {}",
        sigma_hat[(0, 0)]
    );
}

#[test]
fn fit_general_kernel_runs_and_respects_hard_constraints() {
    let spec = scenario_clean(1);
    let (data, _) = spec.sample(120, 101).unwrap();
    let kernel = KernelSpec::rbf(1, 1.0).unwrap();
    let cfg = StvLearnConfig {
        variant: Variant::HardConstraint,
        r: 1.0,
        u_radius: 2.0,
        sigma: SigmaFunction::Sigmoid,
        model_expectation: ModelExpectation::ImportanceSampling { draws: 80 },
        optimizer: quick_optimizer(120),
    };
    let fit = fit_stv(&data, &ModelFamily::GeneralKernel { kernel }, &cfg, 103).unwrap();
    assert!(fit.f_hat.norm() <= cfg.r + 1e-9);
    assert!(fit.witness.0.norm() <= cfg.u_radius + 1e-6);
    assert!(fit.objective_trace.iter().all(|v| v.is_finite()));
}

#[test]
fn fit_general_kernel_rejects_exact_sampling() {
    let kernel = KernelSpec::rbf(1, 1.0).unwrap();
    let cfg = StvLearnConfig {
        model_expectation: ModelExpectation::ExactSampling { draws: 10 },
        ..StvLearnConfig::default_mean()
    };
    let err = fit_stv(
        &[pt1(0.0), pt1(1.0)],
        &ModelFamily::GeneralKernel { kernel },
        &cfg,
        1,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn fit_rejects_tiny_datasets() {
    let cfg = StvLearnConfig::default_mean();
    let err = fit_stv(&[pt1(1.0)], &ModelFamily::GaussianMean { dim: 1 }, &cfg, 1).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn config_validation_warns_on_small_witness_radius() {
    let cfg = StvLearnConfig {
        r: 100.0,
        u_radius: 100.0,
        ..StvLearnConfig::default_mean()
    };
    let warnings = cfg.validate().unwrap();
    assert_eq!(warnings.len(), 1);

    let ok = StvLearnConfig::default_mean();
    // U = 100 < 2 r = 365: the published experiment configuration itself
    // trips the warning, which is fine - it is a warning, not an error.
    assert!(!ok.validate().unwrap().is_empty());
}
