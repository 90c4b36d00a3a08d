//! The regularized STV learners and classical baselines.
//!
//! Three variants of the min-max learner are provided:
//!
//! * `HardConstraint` — project `|f| <= r` and `|u| <= U` after every step;
//! * `AdditiveReg` — add `|f|^2 / r^2` to the outer objective, project `u`;
//! * `FullReg` — add `|f|^2 / r^2` and subtract `|u|^2 / U^2`, no projection.
//!
//! The model-side expectation is either recomputed from fresh exact draws at
//! every outer step (Gaussian submodels) or frozen once as proposal draws
//! `Z_1..Z_l` with self-normalized weights `w_i ∝ exp(f(Z_i)) / q(Z_i)`; the
//! frozen draws are what let the representer theorem reduce a general-kernel
//! fit to finitely many coefficients.

mod baselines;
mod objective;

pub use baselines::{componentwise_median, kendall_cov, sample_mean_cov};
pub use objective::JointObjective;

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergences::SigmaFunction;
use crate::kernels::{KernelSpec, Point, RkhsFunction};
use crate::optim::{gda_minimax, Decay, GdaConfig, GdaOutcome, MinimaxObjective};
use crate::rng::{derive, Stream};
use crate::{Error, Result};

use baselines::{mad, median};
use objective::{
    build_repr_objective, columns, importance_draws, CovExpectation, CovObjective,
    MeanExpectation, MeanObjective, Penalties,
};

const TAG_FIT: u64 = 0x30;
const TAG_WITNESS_INIT: u64 = 0x31;
const TAG_RESTART: u64 = 0x32;

// ---------------------------------------------------------------------------
// Softmax weights and the approximate model expectation
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max subtracted before exponentiation).
pub(crate) fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for w in out.iter_mut() {
        *w /= total;
    }
    out
}

/// Self-normalized importance weights `w_i ∝ exp(f(Z_i)) / q(Z_i)`.
///
/// `log_q` is the proposal log-density **relative to the model's base
/// measure** (all zeros when the proposal is the base measure itself).
pub fn softmax_weights(
    f: &RkhsFunction,
    z: &[Point],
    log_q: &DVector<f64>,
) -> Result<DVector<f64>> {
    if z.is_empty() {
        return Err(Error::InvalidInput("softmax weights need l >= 1".into()));
    }
    if z.len() != log_q.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: log_q.len(),
        });
    }
    let mut logits = Vec::with_capacity(z.len());
    for (i, zi) in z.iter().enumerate() {
        let logit = f.eval(zi)? - log_q[i];
        if !logit.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite importance logit at index {i}: {logit}"
            )));
        }
        logits.push(logit);
    }
    Ok(DVector::from_vec(softmax_from_logits(&logits)))
}

/// Self-normalized importance-sampling estimate of
/// `E_{P_f}[sigma(u(X) - b)]` from fixed proposal draws.
pub fn approx_model_expectation(
    f: &RkhsFunction,
    u: &RkhsFunction,
    b: f64,
    sigma: &SigmaFunction,
    z: &[Point],
    log_q: &DVector<f64>,
) -> Result<f64> {
    let w = softmax_weights(f, z, log_q)?;
    let mut acc = 0.0;
    for (i, zi) in z.iter().enumerate() {
        acc += w[i] * sigma.value(u.eval(zi)? - b);
    }
    Ok(acc)
}

/// Bootstrap standard error of [`approx_model_expectation`] over index
/// resamples of the fixed draws.
pub fn approx_model_expectation_stderr(
    f: &RkhsFunction,
    u: &RkhsFunction,
    b: f64,
    sigma: &SigmaFunction,
    z: &[Point],
    log_q: &DVector<f64>,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    let l = z.len();
    let mut logits = Vec::with_capacity(l);
    let mut sigmas = Vec::with_capacity(l);
    for (i, zi) in z.iter().enumerate() {
        logits.push(f.eval(zi)? - log_q[i]);
        sigmas.push(sigma.value(u.eval(zi)? - b));
    }
    let mut stream = Stream::new(seed);
    let mut estimates = Vec::with_capacity(resamples);
    let mut idx_logits = Vec::with_capacity(l);
    for _ in 0..resamples {
        idx_logits.clear();
        let mut sig = Vec::with_capacity(l);
        for _ in 0..l {
            let i = stream.below(l as u64) as usize;
            idx_logits.push(logits[i]);
            sig.push(sigmas[i]);
        }
        let w = softmax_from_logits(&idx_logits);
        estimates.push(w.iter().zip(sig.iter()).map(|(wi, s)| wi * s).sum::<f64>());
    }
    let mean = estimates.iter().sum::<f64>() / resamples as f64;
    let var = estimates
        .iter()
        .map(|e| (e - mean) * (e - mean))
        .sum::<f64>()
        / (resamples as f64 - 1.0);
    Ok(var.sqrt())
}

// ---------------------------------------------------------------------------
// Learner configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    HardConstraint,
    AdditiveReg,
    FullReg,
}

/// How the model-side expectation is computed during the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelExpectation {
    /// `draws` fresh exact samples per outer step (Gaussian submodels only).
    ExactSampling { draws: usize },
    /// `draws` proposal samples frozen at the start of the fit, reweighted by
    /// the softmax rule. The proposal is the model's base measure.
    ImportanceSampling { draws: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StvLearnConfig {
    pub variant: Variant,
    /// Generator radius / regularizer scale `r`.
    pub r: f64,
    /// Discriminator radius / regularizer scale `U`.
    pub u_radius: f64,
    pub sigma: SigmaFunction,
    pub model_expectation: ModelExpectation,
    pub optimizer: GdaConfig,
}

impl StvLearnConfig {
    /// Mean-estimation defaults: the full-regularization learner with
    /// `1/U^2 = 1e-4`, `1/r^2 = 3e-5`.
    pub fn default_mean() -> Self {
        StvLearnConfig {
            variant: Variant::FullReg,
            r: (1.0 / 3e-5f64).sqrt(),
            u_radius: 100.0,
            sigma: SigmaFunction::Sigmoid,
            model_expectation: ModelExpectation::ExactSampling { draws: 1000 },
            optimizer: GdaConfig {
                outer_steps: 2000,
                inner_steps_per_outer: 5,
                step_outer: 0.02,
                step_inner: 0.05,
                decay: Decay::InvSqrt { warmup: 200 },
                restarts: 4,
                tol: 0.0,
                max_wall_ms: None,
                checkpoint_window: 25,
                tail_average: 0.0,
            },
        }
    }

    /// Covariance-estimation defaults: `1/U^2 = 1/r^2 = 1e-4`. The outer
    /// schedule is hotter than the mean family's and the returned iterate is
    /// tail-averaged: covariance gradients are score-function estimates with
    /// a small per-step signal, and the conservative mean-family schedule
    /// provably stalls short of the optimum.
    pub fn default_cov() -> Self {
        let mut cfg = StvLearnConfig {
            r: 100.0,
            model_expectation: ModelExpectation::ExactSampling { draws: 2000 },
            ..StvLearnConfig::default_mean()
        };
        cfg.optimizer.step_outer = 0.1;
        cfg.optimizer.decay = Decay::InvSqrt { warmup: 500 };
        cfg.optimizer.tail_average = 0.5;
        cfg
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.r > 0.0) || !(self.u_radius > 0.0) {
            return Err(Error::InvalidInput(
                "learner radii r and U must be positive".into(),
            ));
        }
        self.optimizer.validate()?;
        let mut warnings = Vec::new();
        if self.u_radius < 2.0 * self.r {
            warnings.push(format!(
                "witness radius U = {} is below 2r = {}; the error guarantees assume U >= 2r",
                self.u_radius,
                2.0 * self.r
            ));
        }
        Ok(warnings)
    }
}

/// Which statistical model the learner fits.
#[derive(Debug, Clone)]
pub enum ModelFamily {
    GaussianMean { dim: usize },
    GaussianCovariance { dim: usize },
    /// Natural parameter in representer form over the frozen proposal draws;
    /// base measure is standard normal. Importance sampling only.
    GeneralKernel { kernel: KernelSpec },
}

impl ModelFamily {
    fn dim(&self) -> usize {
        match self {
            ModelFamily::GaussianMean { dim } | ModelFamily::GaussianCovariance { dim } => *dim,
            ModelFamily::GeneralKernel { kernel } => kernel.dimension,
        }
    }
}

/// Fit diagnostics.
#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    /// Best (smoothed) objective per restart.
    pub restart_best: Vec<f64>,
    /// Final importance weights were nearly a point mass.
    pub weight_degeneracy: bool,
    /// Outer steps run by the selected restart.
    pub iterations: usize,
    pub wall_ms: u64,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

/// Result of [`fit_stv`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub f_hat: RkhsFunction,
    /// Witness at the solution, as `(u, b)` in the original coordinates.
    pub witness: (RkhsFunction, f64),
    /// Objective recorded after the inner ascent of every outer step of the
    /// selected restart.
    pub objective_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// Mean-vector estimate, for mean-family fits.
    pub fn mean_estimate(&self) -> Option<DVector<f64>> {
        match self.f_hat.representation() {
            crate::kernels::Representation::ExplicitVector(v) => Some(v.clone()),
            _ => None,
        }
    }

    /// Covariance estimate `(I + F)^{-1}`, for covariance-family fits.
    pub fn covariance_estimate(&self) -> Option<DMatrix<f64>> {
        match self.f_hat.representation() {
            crate::kernels::Representation::ExplicitMatrix(m) => {
                let d = m.nrows();
                let f_mat = m * -2.0;
                let ipf = DMatrix::identity(d, d) + f_mat;
                Cholesky::new(ipf).map(|c| c.inverse())
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// fit_stv
// ---------------------------------------------------------------------------

/// Fit a kernel exponential family model to contaminated data by minimizing
/// the witnessed STV discrepancy. See the module docs for the variants.
pub fn fit_stv(
    data: &[Point],
    family: &ModelFamily,
    cfg: &StvLearnConfig,
    seed: u64,
) -> Result<FitResult> {
    let started = Instant::now();
    let warnings = cfg.validate()?;
    let d = family.dim();
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "fit_stv needs at least two samples, got {}",
            data.len()
        )));
    }
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }

    let fit_seed = derive(seed, &[TAG_FIT]);
    let pen = Penalties::for_variant(cfg.variant, cfg.r, cfg.u_radius);

    let mut result = match family {
        ModelFamily::GaussianMean { .. } => fit_mean(data, cfg, pen, fit_seed)?,
        ModelFamily::GaussianCovariance { .. } => fit_cov(data, cfg, pen, fit_seed)?,
        ModelFamily::GeneralKernel { kernel } => fit_repr(data, kernel, cfg, pen, fit_seed)?,
    };
    result.diagnostics.warnings = warnings;
    result.diagnostics.wall_ms = started.elapsed().as_millis() as u64;
    Ok(result)
}

/// Deterministic objective over frozen proposal draws, exposed for gradient
/// checks: the joint parameter is `[f-params; u-params; b]` and the value is
/// the full learner objective including penalties.
pub fn importance_objective(
    data: &[Point],
    family: &ModelFamily,
    cfg: &StvLearnConfig,
    draws: usize,
    seed: u64,
) -> Result<JointObjective> {
    let d = family.dim();
    let pen = Penalties::for_variant(cfg.variant, cfg.r, cfg.u_radius);
    let (z, log_q) = importance_draws(d, draws, seed);
    Ok(match family {
        ModelFamily::GaussianMean { .. } => {
            let center = componentwise_median(data)?;
            let data_c: Vec<Point> = data.iter().map(|x| x - &center).collect();
            let z_centered: Vec<Point> = z.iter().map(|x| x - &center).collect();
            JointObjective::mean(MeanObjective {
                data_c: columns(&data_c),
                center,
                sigma: cfg.sigma,
                pen,
                u_radius: cfg.u_radius,
                expectation: MeanExpectation::Importance {
                    z: columns(&z),
                    z_centered: columns(&z_centered),
                    log_q,
                },
            })
        }
        ModelFamily::GaussianCovariance { .. } => JointObjective::cov(CovObjective {
            data: columns(data),
            dim: d,
            sigma: cfg.sigma,
            pen,
            u_radius: cfg.u_radius,
            expectation: CovExpectation::Importance {
                z: columns(&z),
                log_q,
            },
        }),
        ModelFamily::GeneralKernel { kernel } => JointObjective::repr(build_repr_objective(
            kernel, data, &z, &log_q, cfg.sigma, pen, cfg.u_radius,
        )?),
    })
}

/// Ball projection in a Euclidean parameterization.
fn ball_project(v: &mut [f64], radius: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > radius {
        let s = radius / n;
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

/// Witness scale that puts the spread of scores at O(1); falls back to the
/// full radius for degenerate spreads.
fn adaptive_scale(scores: &[f64], u_radius: f64) -> f64 {
    if scores.is_empty() {
        return u_radius;
    }
    let spread = mad(scores);
    if spread > 1e-12 {
        (2.0 / spread).min(u_radius)
    } else {
        u_radius
    }
}

fn median_bias(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        0.0
    } else {
        median(scores)
    }
}

/// Run the restart fan-out and keep the run with the best (smoothed) final
/// objective. The final iterate is what matters: early in a run the witness
/// is weak, so small recorded objectives there say nothing about fit quality.
fn run_restarts<O, F>(
    make_objective: F,
    witness_inits: Vec<Vec<f64>>,
    x0: Vec<f64>,
    project_x: Option<&(dyn Fn(&mut [f64]) + Sync)>,
    project_y: Option<&(dyn Fn(&mut [f64]) + Sync)>,
    x_feasible: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
    optimizer: &GdaConfig,
) -> Result<(GdaOutcome, Vec<f64>)>
where
    O: MinimaxObjective + Send,
    F: Fn(usize) -> O + Sync,
{
    let runs: Vec<Result<GdaOutcome>> = witness_inits
        .par_iter()
        .enumerate()
        .map(|(rs, y0)| {
            let mut obj = make_objective(rs);
            obj.begin_outer_step(0, &x0);
            gda_minimax(
                &mut obj,
                project_x.map(|p| p as &dyn Fn(&mut [f64])),
                project_y.map(|p| p as &dyn Fn(&mut [f64])),
                x_feasible.map(|p| p as &dyn Fn(&[f64]) -> bool),
                (&x0, y0),
                optimizer,
            )
        })
        .collect();
    let mut best: Option<GdaOutcome> = None;
    let mut restart_best = Vec::with_capacity(runs.len());
    for run in runs {
        let out = run?;
        restart_best.push(out.final_smoothed);
        if best
            .as_ref()
            .map_or(true, |b| out.final_smoothed < b.final_smoothed)
        {
            best = Some(out);
        }
    }
    Ok((best.expect("at least one restart"), restart_best))
}

// -- mean family -------------------------------------------------------------

fn fit_mean(
    data: &[Point],
    cfg: &StvLearnConfig,
    pen: Penalties,
    fit_seed: u64,
) -> Result<FitResult> {
    let d = data[0].len();
    let center = componentwise_median(data)?;
    let data_c: Vec<Point> = data.iter().map(|x| x - &center).collect();
    let data_mat = columns(&data_c);

    let importance = match cfg.model_expectation {
        ModelExpectation::ImportanceSampling { draws } => {
            let (z, log_q) = importance_draws(d, draws, fit_seed);
            let z_centered: Vec<Point> = z.iter().map(|x| x - &center).collect();
            Some((columns(&z), columns(&z_centered), log_q))
        }
        ModelExpectation::ExactSampling { .. } => None,
    };

    let make_objective = |rs: usize| MeanObjective {
        data_c: data_mat.clone(),
        center: center.clone(),
        sigma: cfg.sigma,
        pen,
        u_radius: cfg.u_radius,
        expectation: match (&importance, cfg.model_expectation) {
            (Some((z, zc, log_q)), _) => MeanExpectation::Importance {
                z: z.clone(),
                z_centered: zc.clone(),
                log_q: log_q.clone(),
            },
            (None, ModelExpectation::ExactSampling { draws }) => MeanExpectation::Exact {
                draws,
                seed: derive(fit_seed, &[TAG_RESTART, rs as u64]),
                noise: DMatrix::zeros(d, 0),
                model_pts: DMatrix::zeros(d, 0),
            },
            _ => unreachable!(),
        },
    };

    // Witness initializations: zero, the mean-discrepancy direction, then
    // random directions; bias at the median score.
    let mean_data_c = {
        let mut m = DVector::zeros(d);
        for x in &data_c {
            m += x;
        }
        m / data_c.len() as f64
    };
    let witness_inits: Vec<Vec<f64>> = (0..cfg.optimizer.restarts)
        .map(|rs| {
            let mut u = DVector::zeros(d);
            if rs == 1 {
                // model init is x0 = 0 in centered coordinates
                u = -mean_data_c.clone();
            } else if rs >= 2 {
                let mut s = Stream::new(derive(fit_seed, &[TAG_WITNESS_INIT, rs as u64]));
                u = DVector::from_vec(s.standard_normal_vec(d));
            }
            let norm = u.norm();
            if norm > 0.0 {
                let unit = &u / norm;
                let scores: Vec<f64> = data_c.iter().map(|x| unit.dot(x)).collect();
                u = unit * adaptive_scale(&scores, cfg.u_radius);
            }
            let scores: Vec<f64> = data_c.iter().map(|x| u.dot(x)).collect();
            let mut y = u.as_slice().to_vec();
            y.push(median_bias(&scores));
            y
        })
        .collect();

    let project_u_ball = |y: &mut [f64]| {
        let dim_u = y.len() - 1;
        ball_project(&mut y[..dim_u], cfg.u_radius);
    };
    let project_y: Option<&(dyn Fn(&mut [f64]) + Sync)> = match cfg.variant {
        Variant::HardConstraint | Variant::AdditiveReg => Some(&project_u_ball),
        Variant::FullReg => None,
    };
    // Hard constraint projects the *uncentered* f onto |f| <= r.
    let center_for_proj = center.clone();
    let r = cfg.r;
    let project_f = move |x: &mut [f64]| {
        let mut orig: Vec<f64> = x
            .iter()
            .zip(center_for_proj.iter())
            .map(|(xi, ci)| xi + ci)
            .collect();
        ball_project(&mut orig, r);
        for (xi, (oi, ci)) in x.iter_mut().zip(orig.iter().zip(center_for_proj.iter())) {
            *xi = oi - ci;
        }
    };
    let project_x: Option<&(dyn Fn(&mut [f64]) + Sync)> = match cfg.variant {
        Variant::HardConstraint => Some(&project_f),
        _ => None,
    };

    let x0 = vec![0.0; d];
    let (best, restart_best) = run_restarts(
        make_objective,
        witness_inits,
        x0,
        project_x,
        project_y,
        None,
        &cfg.optimizer,
    )?;

    let f_hat = DVector::from_column_slice(&best.x_final) + &center;
    let u = DVector::from_column_slice(&best.y_final[..d]);
    let b_centered = best.y_final[d];
    // u . (x - c) - b  ==  u . x - (b + u . c)
    let b_orig = b_centered + u.dot(&center);

    let weight_degeneracy = importance
        .as_ref()
        .map(|(z, _, log_q)| {
            let logits = z.tr_mul(&f_hat) - log_q;
            softmax_from_logits(logits.as_slice())
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max)
                > 0.999
        })
        .unwrap_or(false);

    Ok(FitResult {
        f_hat: RkhsFunction::from_vector(f_hat),
        witness: (RkhsFunction::from_vector(u), b_orig),
        objective_trace: best.trace,
        diagnostics: FitDiagnostics {
            restart_best,
            weight_degeneracy,
            iterations: best.steps_run,
            truncated: best.truncated,
            ..Default::default()
        },
    })
}

// -- covariance family ---------------------------------------------------------

fn fit_cov(
    data: &[Point],
    cfg: &StvLearnConfig,
    pen: Penalties,
    fit_seed: u64,
) -> Result<FitResult> {
    let d = data[0].len();
    let data_mat = columns(data);

    let importance = match cfg.model_expectation {
        ModelExpectation::ImportanceSampling { draws } => {
            let (z, log_q) = importance_draws(d, draws, fit_seed);
            Some((columns(&z), log_q))
        }
        ModelExpectation::ExactSampling { .. } => None,
    };

    let make_objective = |rs: usize| CovObjective {
        data: data_mat.clone(),
        dim: d,
        sigma: cfg.sigma,
        pen,
        u_radius: cfg.u_radius,
        expectation: match (&importance, cfg.model_expectation) {
            (Some((z, log_q)), _) => CovExpectation::Importance {
                z: z.clone(),
                log_q: log_q.clone(),
            },
            (None, ModelExpectation::ExactSampling { draws }) => CovExpectation::Exact {
                draws,
                seed: derive(fit_seed, &[TAG_RESTART, rs as u64]),
                model_pts: DMatrix::zeros(d, 0),
                poisoned: false,
            },
            _ => unreachable!(),
        },
    };

    // Second-moment discrepancy I - S_data is the quadratic analogue of the
    // mean-difference witness (model starts at F = 0, i.e. N(0, I)).
    let second_moment = {
        let mut s = DMatrix::zeros(d, d);
        for x in data {
            s.ger(1.0 / data.len() as f64, x, x, 1.0);
        }
        s
    };
    let witness_inits: Vec<Vec<f64>> = (0..cfg.optimizer.restarts)
        .map(|rs| {
            let mut w = DMatrix::zeros(d, d);
            if rs == 1 {
                w = DMatrix::identity(d, d) - &second_moment;
            } else if rs >= 2 {
                let mut s = Stream::new(derive(fit_seed, &[TAG_WITNESS_INIT, rs as u64]));
                let m = DMatrix::from_fn(d, d, |_, _| s.standard_normal());
                w = (&m + m.transpose()) * 0.5;
            }
            let norm = w.norm();
            if norm > 0.0 {
                let unit = &w / norm;
                let scores: Vec<f64> = data
                    .iter()
                    .map(|x| x.dot(&(&unit * x)))
                    .collect();
                w = unit * adaptive_scale(&scores, cfg.u_radius);
            }
            let scores: Vec<f64> = data.iter().map(|x| x.dot(&(&w * x))).collect();
            let mut y = w.as_slice().to_vec();
            y.push(median_bias(&scores));
            y
        })
        .collect();

    let project_u_ball = |y: &mut [f64]| {
        let dim_u = y.len() - 1;
        ball_project(&mut y[..dim_u], cfg.u_radius);
    };
    let project_y: Option<&(dyn Fn(&mut [f64]) + Sync)> = match cfg.variant {
        Variant::HardConstraint | Variant::AdditiveReg => Some(&project_u_ball),
        Variant::FullReg => None,
    };
    // |f| = |F|_F / 2 <= r.
    let r2 = 2.0 * cfg.r;
    let project_f = move |x: &mut [f64]| ball_project(x, r2);
    let project_x: Option<&(dyn Fn(&mut [f64]) + Sync)> = match cfg.variant {
        Variant::HardConstraint => Some(&project_f),
        _ => None,
    };
    // Keep the eigenvalues of I + F above a margin: the model covariance
    // (I + F)^{-1} stays bounded and the sampler cannot blow up mid-run.
    const PD_MARGIN: f64 = 1e-3;
    let feasible = |x: &[f64]| {
        let f_mat = DMatrix::from_column_slice(d, d, x);
        let shifted = DMatrix::identity(d, d) * (1.0 - PD_MARGIN) + f_mat;
        Cholesky::new(shifted).is_some()
    };

    let x0 = vec![0.0; d * d];
    let (best, restart_best) = run_restarts(
        make_objective,
        witness_inits,
        x0,
        project_x,
        project_y,
        Some(&feasible),
        &cfg.optimizer,
    )?;

    let f_mat = DMatrix::from_column_slice(d, d, &best.x_final);
    let f_mat = (&f_mat + f_mat.transpose()) * 0.5;
    let w_mat = DMatrix::from_column_slice(d, d, &best.y_final[..d * d]);
    let w_mat = (&w_mat + w_mat.transpose()) * 0.5;
    let b = best.y_final[d * d];

    let weight_degeneracy = importance
        .as_ref()
        .map(|(z, log_q)| {
            let logits: Vec<f64> = (0..z.ncols())
                .map(|j| {
                    let col = z.column(j);
                    -0.5 * col.dot(&(&f_mat * col)) - log_q[j]
                })
                .collect();
            softmax_from_logits(&logits)
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max)
                > 0.999
        })
        .unwrap_or(false);

    Ok(FitResult {
        f_hat: RkhsFunction::from_matrix(f_mat * -0.5)?,
        witness: (RkhsFunction::from_matrix(w_mat)?, b),
        objective_trace: best.trace,
        diagnostics: FitDiagnostics {
            restart_best,
            weight_degeneracy,
            iterations: best.steps_run,
            truncated: best.truncated,
            ..Default::default()
        },
    })
}

// -- representer family ---------------------------------------------------------

fn fit_repr(
    data: &[Point],
    kernel: &KernelSpec,
    cfg: &StvLearnConfig,
    pen: Penalties,
    fit_seed: u64,
) -> Result<FitResult> {
    let d = kernel.dimension;
    let draws = match cfg.model_expectation {
        ModelExpectation::ImportanceSampling { draws } => draws,
        ModelExpectation::ExactSampling { .. } => {
            return Err(Error::Unsupported(
                "general-kernel families have no exact sampler; use importance sampling".into(),
            ))
        }
    };
    let (z, log_q) = importance_draws(d, draws, fit_seed);
    let base =
        build_repr_objective(kernel, data, &z, &log_q, cfg.sigma, pen, cfg.u_radius)?;
    let n_z = base.n_z();
    let n_w = base.n_anchors();
    let k_zz = base.k_zz.clone();
    let k_ww = base.k_ww.clone();
    let k_wx = base.k_wx.clone();

    let make_objective = |_rs: usize| base.clone();

    let witness_inits: Vec<Vec<f64>> = (0..cfg.optimizer.restarts)
        .map(|rs| {
            let mut a = DVector::zeros(n_w);
            if rs == 1 {
                // Mean-embedding discrepancy: uniform over Z minus uniform
                // over the data anchors.
                for i in 0..n_z {
                    a[i] = 1.0 / n_z as f64;
                }
                for i in n_z..n_w {
                    a[i] = -1.0 / (n_w - n_z) as f64;
                }
            } else if rs >= 2 {
                let mut s = Stream::new(derive(fit_seed, &[TAG_WITNESS_INIT, rs as u64]));
                a = DVector::from_vec(s.standard_normal_vec(n_w));
            }
            let norm_sq = a.dot(&(&k_ww * &a)).max(0.0);
            if norm_sq > 0.0 {
                let unit = &a / norm_sq.sqrt();
                let scores: Vec<f64> = k_wx.tr_mul(&unit).iter().copied().collect();
                a = unit * adaptive_scale(&scores, cfg.u_radius);
            }
            let scores: Vec<f64> = k_wx.tr_mul(&a).iter().copied().collect();
            let mut y = a.as_slice().to_vec();
            y.push(median_bias(&scores).clamp(-cfg.u_radius, cfg.u_radius));
            y
        })
        .collect();

    let gram_project = |v: &mut [f64], gram: &DMatrix<f64>, radius: f64| {
        let x = DVector::from_column_slice(v);
        let norm = x.dot(&(gram * &x)).max(0.0).sqrt();
        if norm > radius {
            let s = radius / norm;
            for vi in v.iter_mut() {
                *vi *= s;
            }
        }
    };
    let u_radius = cfg.u_radius;
    // The bias is clamped to [-U, U] for the representer family in every
    // variant; this is the infinite-dimensional convention.
    let project_y_full = move |y: &mut [f64]| {
        let dim_u = y.len() - 1;
        y[dim_u] = y[dim_u].clamp(-u_radius, u_radius);
    };
    let k_ww_hard = k_ww.clone();
    let project_y_ball = move |y: &mut [f64]| {
        let dim_u = y.len() - 1;
        gram_project(&mut y[..dim_u], &k_ww_hard, u_radius);
        y[dim_u] = y[dim_u].clamp(-u_radius, u_radius);
    };
    let project_y: &(dyn Fn(&mut [f64]) + Sync) = match cfg.variant {
        Variant::HardConstraint | Variant::AdditiveReg => &project_y_ball,
        Variant::FullReg => &project_y_full,
    };
    let r = cfg.r;
    let k_zz_proj = k_zz.clone();
    let project_x_ball = move |x: &mut [f64]| gram_project(x, &k_zz_proj, r);
    let project_x: Option<&(dyn Fn(&mut [f64]) + Sync)> = match cfg.variant {
        Variant::HardConstraint => Some(&project_x_ball),
        _ => None,
    };

    let x0 = vec![0.0; n_z];
    let (best, restart_best) = run_restarts(
        make_objective,
        witness_inits,
        x0,
        project_x,
        Some(project_y),
        None,
        &cfg.optimizer,
    )?;

    let c = DVector::from_column_slice(&best.x_final);
    let weight_degeneracy = {
        let f_at_z = &k_zz * &c;
        let logits: Vec<f64> = (0..n_z).map(|j| f_at_z[j] - log_q[j]).collect();
        softmax_from_logits(&logits)
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max)
            > 0.999
    };

    let anchors: Vec<Point> = z.iter().chain(data.iter()).cloned().collect();
    let f_hat = RkhsFunction::from_representer(*kernel, z, c)?;
    let witness = RkhsFunction::from_representer(
        *kernel,
        anchors,
        DVector::from_column_slice(&best.y_final[..n_w]),
    )?;

    Ok(FitResult {
        f_hat,
        witness: (witness, best.y_final[n_w]),
        objective_trace: best.trace,
        diagnostics: FitDiagnostics {
            restart_best,
            weight_degeneracy,
            iterations: best.steps_run,
            truncated: best.truncated,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests;
