//! Discrepancy measures: TV, smoothed TV, MMD, decay rates, bias bounds,
//! and the depth objectives expressible as integral probability metrics.
//!
//! The smoothed total variation (STV) distance between `P` and `Q` is
//!
//! ```text
//! STV(P, Q) = sup_{|u| <= U, b} | E_P[sigma(u(X) - b)] - E_Q[sigma(u(X) - b)] |
//! ```
//!
//! with `u` ranging over an RKHS ball. Under the symmetry
//! `sigma(z) + sigma(-z) = 1` the modulus can be dropped: negating `(u, b)`
//! negates the objective, so the signed supremum equals the absolute one.
//! Sample-based values returned here are witness-based **lower bounds** of
//! the true supremum: projected gradient ascent with restarts reports the
//! best witness it found.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::softmax_weights;
use crate::kernels::{KernelKind, KernelSpec, Point, RkhsFunction};
use crate::models::KernelExpFamilyModel;
use crate::optim::{projected_ascent, Decay, GdaConfig};
use crate::rng::{derive, Stream};
use crate::{Error, Result};

const TAG_RESTART: u64 = 0x10;
const TAG_MODEL_DRAWS: u64 = 0x11;
const TAG_DIRECTIONS: u64 = 0x12;
const TAG_MC: u64 = 0x13;

// ---------------------------------------------------------------------------
// Sigma functions
// ---------------------------------------------------------------------------

/// The smoothing function applied to witness scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaFunction {
    /// `1 / (1 + exp(-z))`; strictly increasing with
    /// `sigma(z) + sigma(-z) = 1` exactly (also in floating point).
    Sigmoid,
    /// `1(z >= 0)`.
    Step,
    /// `z`.
    Identity,
}

impl SigmaFunction {
    /// Evaluate the function.
    ///
    /// The sigmoid mirrors its positive branch (`sigma(z) = 1 - sigma(-z)`
    /// for `z < 0`), which makes the symmetry exact in floating point at the
    /// cost of flushing to zero below `z ~ -37`.
    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match self {
            SigmaFunction::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    1.0 - 1.0 / (1.0 + z.exp())
                }
            }
            SigmaFunction::Step => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SigmaFunction::Identity => z,
        }
    }

    /// Derivative (zero almost everywhere for `Step`).
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            SigmaFunction::Sigmoid => {
                let s = self.value(z);
                s * (1.0 - s)
            }
            SigmaFunction::Step => 0.0,
            SigmaFunction::Identity => 1.0,
        }
    }

    /// Whether `0 <= sigma <= 1` (the condition for `STV <= TV`).
    pub fn bounded_unit(&self) -> bool {
        !matches!(self, SigmaFunction::Identity)
    }
}

// ---------------------------------------------------------------------------
// Gaussian TV: exact and Monte-Carlo
// ---------------------------------------------------------------------------

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact TV distance between `N(m1, I)` and `N(m2, I)`:
/// `2 Phi(|m1 - m2| / 2) - 1`.
pub fn tv_gaussian_mean(m1: &DVector<f64>, m2: &DVector<f64>) -> Result<f64> {
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch {
            expected: m1.len(),
            got: m2.len(),
        });
    }
    let delta = (m1 - m2).norm();
    Ok(libm::erf(delta / (2.0 * std::f64::consts::SQRT_2)))
}

/// Monte-Carlo TV estimate `E_p[(1 - q/p)_+]` from `n` draws of `p`,
/// clamped to `[0, 1]`, with its standard error.
pub fn mc_tv(
    log_p: &dyn Fn(&Point) -> f64,
    log_q: &dyn Fn(&Point) -> f64,
    sample_p: &mut dyn FnMut(&mut Stream) -> Point,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidInput("mc_tv needs n >= 1".into()));
    }
    let mut stream = Stream::new(derive(seed, &[TAG_MC]));
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_p(&mut stream);
        let lp = log_p(&x);
        let lq = log_q(&x);
        if !lp.is_finite() || !lq.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite log-density at sampled point {:?}: log p = {lp}, log q = {lq}",
                x.as_slice()
            )));
        }
        vals.push((1.0 - (lq - lp).exp()).max(0.0));
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    Ok((mean.clamp(0.0, 1.0), (var / n as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// Weighted samples and the STV inner solver
// ---------------------------------------------------------------------------

/// A finite sample with nonnegative weights summing to one.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub points: Vec<Point>,
    pub weights: DVector<f64>,
}

impl WeightedSample {
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        let n = points.len();
        Ok(WeightedSample {
            points,
            weights: DVector::from_element(n, 1.0 / n as f64),
        })
    }

    pub fn weighted(points: Vec<Point>, weights: DVector<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidInput("negative sample weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "sample weights must sum to 1, got {total}"
            )));
        }
        Ok(WeightedSample { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

/// Configuration of an STV evaluation.
#[derive(Debug, Clone)]
pub struct StvConfig {
    pub sigma: SigmaFunction,
    /// Radius `U` of the witness ball.
    pub u_radius: f64,
    /// Bound on `|b|`; `f64::INFINITY` leaves the bias unconstrained.
    pub bias_bound: f64,
    pub kernel: KernelSpec,
    /// Inner-maximization settings. `outer_steps` is the ascent step count,
    /// `step_inner` the ascent step size, `restarts` the restart count.
    pub inner: GdaConfig,
}

impl StvConfig {
    pub fn new(kernel: KernelSpec, u_radius: f64) -> Result<Self> {
        if !(u_radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "witness radius must be positive, got {u_radius}"
            )));
        }
        Ok(StvConfig {
            sigma: SigmaFunction::Sigmoid,
            u_radius,
            bias_bound: f64::INFINITY,
            kernel,
            inner: GdaConfig {
                outer_steps: 300,
                inner_steps_per_outer: 1,
                step_outer: 0.1,
                step_inner: 0.1,
                decay: Decay::InvSqrt { warmup: 50 },
                restarts: 8,
                tol: 0.0,
                max_wall_ms: None,
                checkpoint_window: 1,
            tail_average: 0.0,
            },
        })
    }
}

/// Result of a sample-based STV evaluation.
#[derive(Debug, Clone)]
pub struct StvEstimate {
    /// Best witnessed value (a lower bound of the supremum), canonicalized
    /// to be nonnegative.
    pub value: f64,
    pub witness: RkhsFunction,
    pub bias: f64,
    /// Best value found by each restart.
    pub restart_values: Vec<f64>,
    /// Set when self-normalized model weights were nearly a point mass.
    pub weight_degeneracy: bool,
}

/// Witness parameterization over a fixed pair of point sets.
///
/// Scores are `phi' u` where the columns of `phi` are feature images of the
/// points: the points themselves (linear), vectorized outer products
/// (quadratic), or kernel sections over the pooled anchors (RBF).
struct WitnessDesign {
    kernel: KernelSpec,
    dim_u: usize,
    phi_p: DMatrix<f64>,
    phi_q: DMatrix<f64>,
    /// Gram matrix of the anchors; RBF only, where the coefficient norm is
    /// `sqrt(a' K a)` rather than Euclidean.
    gram: Option<DMatrix<f64>>,
    anchors: Option<Vec<Point>>,
}

impl WitnessDesign {
    fn build(kernel: &KernelSpec, p: &[Point], q: &[Point]) -> Result<Self> {
        let d = kernel.dimension;
        let feature_dim = match kernel.kind {
            KernelKind::Linear => d,
            KernelKind::Quadratic => d * d,
            KernelKind::Rbf { .. } => p.len() + q.len(),
        };
        let embed = |points: &[Point], anchors: Option<&[Point]>| -> Result<DMatrix<f64>> {
            let mut phi = DMatrix::zeros(feature_dim, points.len());
            for (j, x) in points.iter().enumerate() {
                if x.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: x.len(),
                    });
                }
                match kernel.kind {
                    KernelKind::Linear => phi.column_mut(j).copy_from(x),
                    KernelKind::Quadratic => {
                        for a in 0..d {
                            for b in 0..d {
                                phi[(a * d + b, j)] = x[a] * x[b];
                            }
                        }
                    }
                    KernelKind::Rbf { .. } => {
                        let anchors = anchors.expect("rbf embedding needs anchors");
                        for (i, w) in anchors.iter().enumerate() {
                            phi[(i, j)] = kernel.eval_unchecked(w, x);
                        }
                    }
                }
            }
            Ok(phi)
        };
        match kernel.kind {
            KernelKind::Rbf { .. } => {
                let anchors: Vec<Point> = p.iter().chain(q.iter()).cloned().collect();
                let gram = kernel.gram(&anchors)?;
                Ok(WitnessDesign {
                    kernel: *kernel,
                    dim_u: feature_dim,
                    phi_p: embed(p, Some(&anchors))?,
                    phi_q: embed(q, Some(&anchors))?,
                    gram: Some(gram),
                    anchors: Some(anchors),
                })
            }
            _ => Ok(WitnessDesign {
                kernel: *kernel,
                dim_u: feature_dim,
                phi_p: embed(p, None)?,
                phi_q: embed(q, None)?,
                gram: None,
                anchors: None,
            }),
        }
    }

    fn norm(&self, u: &DVector<f64>) -> f64 {
        match &self.gram {
            None => u.norm(),
            Some(k) => (u.dot(&(k * u))).max(0.0).sqrt(),
        }
    }

    /// Scale `u` onto the ball of radius `radius` when outside.
    fn project(&self, u: &mut DVector<f64>, radius: f64) {
        let n = self.norm(u);
        if n > radius {
            *u *= radius / n;
        }
    }

    fn to_rkhs(&self, u: &DVector<f64>) -> Result<RkhsFunction> {
        match self.kernel.kind {
            KernelKind::Linear => Ok(RkhsFunction::from_vector(u.clone())),
            KernelKind::Quadratic => {
                let d = self.kernel.dimension;
                let mut m = DMatrix::zeros(d, d);
                for a in 0..d {
                    for b in 0..d {
                        m[(a, b)] = u[a * d + b];
                    }
                }
                // Symmetrize against roundoff drift before constructing.
                let m = (&m + m.transpose()) * 0.5;
                RkhsFunction::from_matrix(m)
            }
            KernelKind::Rbf { .. } => RkhsFunction::from_representer(
                self.kernel,
                self.anchors.clone().expect("rbf design has anchors"),
                u.clone(),
            ),
        }
    }
}

/// Weighted median used to initialize the bias at the centre of the pooled
/// witness scores.
fn weighted_median(scores: &[f64], weights: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= total / 2.0 {
            return scores[i];
        }
    }
    scores[*idx.last().expect("nonempty scores")]
}

struct StvProblem<'a> {
    design: &'a WitnessDesign,
    wp: &'a DVector<f64>,
    wq: &'a DVector<f64>,
    sigma: SigmaFunction,
    u_radius: f64,
    bias_bound: f64,
}

impl StvProblem<'_> {
    /// Objective and gradient in the flat parameter `[u; b]`.
    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let dim_u = self.design.dim_u;
        let u = DVector::from_column_slice(&theta[..dim_u]);
        let b = theta[dim_u];

        let sp = self.design.phi_p.tr_mul(&u); // scores on P
        let sq = self.design.phi_q.tr_mul(&u);

        let mut value = 0.0;
        let mut cp = DVector::zeros(sp.len());
        let mut db = 0.0;
        for i in 0..sp.len() {
            let z = sp[i] - b;
            value += self.wp[i] * self.sigma.value(z);
            let d = self.wp[i] * self.sigma.derivative(z);
            cp[i] = d;
            db -= d;
        }
        let mut cq = DVector::zeros(sq.len());
        for j in 0..sq.len() {
            let z = sq[j] - b;
            value -= self.wq[j] * self.sigma.value(z);
            let d = self.wq[j] * self.sigma.derivative(z);
            cq[j] = d;
            db += d;
        }
        let gu = &self.design.phi_p * cp - &self.design.phi_q * cq;
        let mut grad = Vec::with_capacity(dim_u + 1);
        grad.extend_from_slice(gu.as_slice());
        grad.push(db);
        (value, grad)
    }

    fn project(&self, theta: &mut [f64]) {
        let dim_u = self.design.dim_u;
        let mut u = DVector::from_column_slice(&theta[..dim_u]);
        self.design.project(&mut u, self.u_radius);
        theta[..dim_u].copy_from_slice(u.as_slice());
        if self.bias_bound.is_finite() {
            theta[dim_u] = theta[dim_u].clamp(-self.bias_bound, self.bias_bound);
        }
    }

    /// Initial `[u; b]` for restart `r`: zero witness, then both signs of
    /// the mean-discrepancy direction, then random directions at varied
    /// scales. Both signs matter: the two local witness basins (excess model
    /// mass vs excess data mass) sit on opposite sides.
    fn init(&self, r: usize, seed: u64) -> Vec<f64> {
        let dim_u = self.design.dim_u;
        let mut u = DVector::zeros(dim_u);
        if r == 1 || r == 2 {
            u = match self.design.kernel.kind {
                // For RBF the mean-embedding difference has coefficients
                // [w_p; -w_q] over the pooled anchors.
                KernelKind::Rbf { .. } => {
                    let mut c = DVector::zeros(dim_u);
                    c.rows_mut(0, self.wp.len()).copy_from(self.wp);
                    c.rows_mut(self.wp.len(), self.wq.len())
                        .copy_from(&(-self.wq));
                    c
                }
                _ => &self.design.phi_p * self.wp - &self.design.phi_q * self.wq,
            };
            if r == 2 {
                u = -u;
            }
        } else if r >= 3 {
            let mut stream = Stream::new(derive(seed, &[TAG_RESTART, r as u64]));
            u = match self.design.kernel.kind {
                KernelKind::Quadratic => {
                    // Random symmetric quadratic form.
                    let d = self.design.kernel.dimension;
                    let m = DMatrix::from_fn(d, d, |_, _| stream.standard_normal());
                    let s = (&m + m.transpose()) * 0.5;
                    DVector::from_column_slice(s.as_slice())
                }
                _ => DVector::from_vec(stream.standard_normal_vec(dim_u)),
            };
        }

        let norm = self.design.norm(&u);
        if norm > 0.0 {
            // Scale so the score spread is O(1); large restarts try the full
            // radius, which suits well-separated samples.
            let unit = &u / norm;
            let scale = self.init_scale(&unit, r);
            u = unit * scale;
        }

        let scores: Vec<f64> = self
            .design
            .phi_p
            .tr_mul(&u)
            .iter()
            .chain(self.design.phi_q.tr_mul(&u).iter())
            .copied()
            .collect();
        let pooled: Vec<f64> = self
            .wp
            .iter()
            .map(|w| w * 0.5)
            .chain(self.wq.iter().map(|w| w * 0.5))
            .collect();
        let b = if scores.is_empty() {
            0.0
        } else {
            weighted_median(&scores, &pooled)
        };

        let mut theta = Vec::with_capacity(dim_u + 1);
        theta.extend_from_slice(u.as_slice());
        theta.push(if self.bias_bound.is_finite() {
            b.clamp(-self.bias_bound, self.bias_bound)
        } else {
            b
        });
        theta
    }

    /// Joint rescaling sweep over `(u, b) -> c (u, b)`: the decision boundary
    /// is preserved while the sigmoid sharpness varies, which is exactly the
    /// direction plain ascent crawls along once scores saturate. Keeps the
    /// best value subject to the ball constraints.
    fn sharpen(&self, theta: Vec<f64>, value: f64) -> (Vec<f64>, f64) {
        let dim_u = self.design.dim_u;
        let u = DVector::from_column_slice(&theta[..dim_u]);
        let norm = self.design.norm(&u);
        if norm <= 1e-12 {
            return (theta, value);
        }
        let mut best = (theta.clone(), value);
        for k in 1..=12 {
            let c: f64 = 2.0f64.powi(k);
            let capped = c.min(self.u_radius / norm);
            let mut cand: Vec<f64> = theta.iter().map(|t| t * capped).collect();
            if self.bias_bound.is_finite() {
                cand[dim_u] = cand[dim_u].clamp(-self.bias_bound, self.bias_bound);
            }
            let (v, _) = self.value_grad(&cand);
            if v > best.1 {
                best = (cand, v);
            }
            if capped < c {
                break; // hit the ball boundary
            }
        }
        for k in 1..=4 {
            let c = 0.5f64.powi(k);
            let mut cand: Vec<f64> = theta.iter().map(|t| t * c).collect();
            if self.bias_bound.is_finite() {
                cand[dim_u] = cand[dim_u].clamp(-self.bias_bound, self.bias_bound);
            }
            let (v, _) = self.value_grad(&cand);
            if v > best.1 {
                best = (cand, v);
            }
        }
        best
    }

    fn init_scale(&self, unit: &DVector<f64>, r: usize) -> f64 {
        if r >= 3 && r % 2 == 0 {
            return self.u_radius;
        }
        let scores: Vec<f64> = self
            .design
            .phi_p
            .tr_mul(unit)
            .iter()
            .chain(self.design.phi_q.tr_mul(unit).iter())
            .copied()
            .collect();
        let pooled: Vec<f64> = self
            .wp
            .iter()
            .map(|w| w * 0.5)
            .chain(self.wq.iter().map(|w| w * 0.5))
            .collect();
        let med = weighted_median(&scores, &pooled);
        let dev: Vec<f64> = scores.iter().map(|s| (s - med).abs()).collect();
        let mad = weighted_median(&dev, &pooled);
        if mad > 1e-12 {
            (2.0 / mad).min(self.u_radius)
        } else {
            self.u_radius
        }
    }
}

/// Witness-based STV value between two weighted samples.
///
/// Runs `cfg.inner.restarts` projected-ascent restarts in parallel and keeps
/// the best. The sign is canonicalized by flipping `(u, b) -> (-u, -b)` when
/// the best value is negative, which is lossless under the sigma symmetry.
pub fn stv_between_samples(
    p: &WeightedSample,
    q: &WeightedSample,
    cfg: &StvConfig,
    seed: u64,
) -> Result<StvEstimate> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let design = WitnessDesign::build(&cfg.kernel, &p.points, &q.points)?;
    let problem = StvProblem {
        design: &design,
        wp: &p.weights,
        wq: &q.weights,
        sigma: cfg.sigma,
        u_radius: cfg.u_radius,
        bias_bound: cfg.bias_bound,
    };

    let restarts: Vec<usize> = (0..cfg.inner.restarts.max(1)).collect();
    let runs: Vec<Result<(Vec<f64>, f64)>> = restarts
        .par_iter()
        .map(|&r| {
            let theta0 = problem.init(r, seed);
            let (theta, value) = projected_ascent(
                &|th| problem.value_grad(th),
                Some(&|th: &mut [f64]| problem.project(th)),
                &theta0,
                cfg.inner.outer_steps,
                cfg.inner.step_inner,
                cfg.inner.decay,
            )?;
            Ok(problem.sharpen(theta, value))
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut restart_values = Vec::with_capacity(runs.len());
    for run in runs {
        let (theta, value) = run?;
        restart_values.push(value);
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((theta, value));
        }
    }
    let (mut theta, mut value) = best.expect("at least one restart");

    if value < 0.0 {
        for t in theta.iter_mut() {
            *t = -*t;
        }
        value = -value;
    }
    let dim_u = design.dim_u;
    let witness = design.to_rkhs(&DVector::from_column_slice(&theta[..dim_u]))?;
    Ok(StvEstimate {
        value,
        witness,
        bias: theta[dim_u],
        restart_values,
        weight_degeneracy: false,
    })
}

/// How the model side of [`stv_model_vs_samples`] is represented.
#[derive(Debug, Clone)]
pub enum ModelSide<'a> {
    /// Exact draws (Gaussian submodels only).
    ExactDraws { m: usize },
    /// Fixed proposal draws with self-normalized weights
    /// `w_i ∝ exp(f(Z_i)) / q(Z_i)`; `log_q` is the proposal log-density
    /// relative to the model's base measure.
    ImportanceSample {
        z: &'a [Point],
        log_q: &'a DVector<f64>,
    },
}

/// STV value between a model and an empirical sample.
pub fn stv_model_vs_samples(
    model: &KernelExpFamilyModel,
    data: &[Point],
    cfg: &StvConfig,
    side: &ModelSide,
    seed: u64,
) -> Result<StvEstimate> {
    let q = WeightedSample::uniform(data.to_vec())?;
    let (p, degenerate) = match side {
        ModelSide::ExactDraws { m } => {
            let mut stream = Stream::new(derive(seed, &[TAG_MODEL_DRAWS]));
            let draws = model.sample_with(*m, &mut stream)?;
            (WeightedSample::uniform(draws)?, false)
        }
        ModelSide::ImportanceSample { z, log_q } => {
            if z.is_empty() {
                return Err(Error::InvalidInput(
                    "importance-sample model side needs at least one draw".into(),
                ));
            }
            let weights = softmax_weights(model.natural_parameter(), z, log_q)?;
            let degenerate = weights.iter().cloned().fold(f64::MIN, f64::max) > 0.999;
            (WeightedSample::weighted(z.to_vec(), weights)?, degenerate)
        }
    };
    let mut est = stv_between_samples(&p, &q, cfg, derive(seed, &[TAG_RESTART]))?;
    est.weight_degeneracy = degenerate;
    Ok(est)
}

// ---------------------------------------------------------------------------
// Bias bound and decay rate
// ---------------------------------------------------------------------------

/// Upper bound on the TV-STV gap for models `P_f`, `P_g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasBound {
    pub bound: f64,
    /// True when `U <= |f - g|`, in which case only the trivial bound `1`
    /// is available.
    pub trivial: bool,
}

/// Sigmoid-witness bias bound `|f - g| / U`, valid for `U > |f - g|`:
/// `0 <= TV(P_f, P_g) - STV(P_f, P_g) <= |f - g| / U`.
pub fn bias_bound(f: &RkhsFunction, g: &RkhsFunction, u_radius: f64) -> Result<BiasBound> {
    if !(u_radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "witness radius must be positive, got {u_radius}"
        )));
    }
    let gap = f.sub(g)?.norm();
    if u_radius > gap {
        Ok(BiasBound {
            bound: gap / u_radius,
            trivial: false,
        })
    } else {
        Ok(BiasBound {
            bound: 1.0,
            trivial: true,
        })
    }
}

/// Log-spaced grid on `[1, t_max]`.
pub fn log_grid(t_max: f64, points: usize) -> Vec<f64> {
    assert!(t_max >= 1.0 && points >= 2);
    let lmax = t_max.ln();
    (0..points)
        .map(|i| (lmax * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Grid maximization of `sigma(-c log t) (t - 1)` against the sigmoid decay
/// bound `1/c` (valid for `c > 1`). Returns `(sup_value, bound)`; the grid
/// supremum never exceeds the bound because the true supremum does not.
pub fn decay_rate_check(
    sigma: &SigmaFunction,
    c: f64,
    t_grid: &[f64],
) -> Result<(f64, f64)> {
    if *sigma != SigmaFunction::Sigmoid {
        return Err(Error::Unsupported(
            "decay rate is implemented for the sigmoid only".into(),
        ));
    }
    if !(c > 1.0) {
        return Err(Error::InvalidInput(format!(
            "sigmoid decay bound needs c > 1, got {c}"
        )));
    }
    if t_grid.iter().any(|&t| t < 1.0) {
        return Err(Error::InvalidInput("t grid must satisfy t >= 1".into()));
    }
    let sup = t_grid
        .iter()
        .map(|&t| sigma.value(-c * t.ln()) * (t - 1.0))
        .fold(0.0f64, f64::max);
    Ok((sup, 1.0 / c))
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

/// Biased (V-statistic) MMD: the RKHS norm of the mean-embedding difference.
pub fn mmd(p: &[Point], q: &[Point], kernel: &KernelSpec) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let sum_gram = |a: &[Point], b: &[Point]| -> Result<f64> {
        let mut acc = 0.0;
        for x in a {
            for y in b {
                acc += kernel.eval(x, y)?;
            }
        }
        Ok(acc)
    };
    let (np, nq) = (p.len() as f64, q.len() as f64);
    let kpp = sum_gram(p, p)? / (np * np);
    let kqq = sum_gram(q, q)? / (nq * nq);
    let kpq = sum_gram(p, q)? / (np * nq);
    Ok((kpp + kqq - 2.0 * kpq).max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// Depth objectives
// ---------------------------------------------------------------------------

fn unit_directions(d: usize, m: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut stream = Stream::new(derive(seed, &[TAG_DIRECTIONS]));
    let mut dirs: Vec<DVector<f64>> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        })
        .collect();
    for _ in 0..m {
        loop {
            let v = DVector::from_vec(stream.standard_normal_vec(d));
            let n = v.norm();
            if n > 1e-12 {
                dirs.push(v / n);
                break;
            }
        }
    }
    dirs
}

/// Halfspace-depth objective: max over sampled unit directions (plus the
/// coordinate axes) of `(1/n) sum 1[u'(X_i - mu) >= 0] - 1/2`.
pub fn tukey_depth_ipm(
    data: &[Point],
    mu: &DVector<f64>,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty data".into()));
    }
    if directions < 1 {
        return Err(Error::InvalidInput("need at least one direction".into()));
    }
    let d = mu.len();
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    let n = data.len() as f64;
    let best = unit_directions(d, directions, seed)
        .iter()
        .map(|u| {
            let count = data
                .iter()
                .filter(|x| u.dot(&(*x - mu)) >= 0.0)
                .count() as f64;
            count / n - 0.5
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

/// Covariance-depth objective: max over sampled unit directions of
/// `| (1/n) sum 1[(u'X_i)^2 <= u' Sigma u] - P(Z^2 <= 1) |`.
pub fn covariance_depth_ipm(
    data: &[Point],
    sigma: &DMatrix<f64>,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty data".into()));
    }
    let d = sigma.nrows();
    if sigma.ncols() != d {
        return Err(Error::InvalidInput("sigma must be square".into()));
    }
    if Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::InvalidInput(
            "sigma must be symmetric positive definite".into(),
        ));
    }
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    let p_inside = 2.0 * normal_cdf(1.0) - 1.0;
    let n = data.len() as f64;
    let best = unit_directions(d, directions, seed)
        .iter()
        .map(|u| {
            let threshold = u.dot(&(sigma * u));
            let count = data
                .iter()
                .filter(|x| {
                    let s = u.dot(x);
                    s * s <= threshold
                })
                .count() as f64;
            (count / n - p_inside).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(best)
}

// ---------------------------------------------------------------------------
// Deterministic one-dimensional oracles (quadrature instead of sampling)
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on `[-1, 1]` via the Golub-Welsch
/// eigendecomposition of the Jacobi matrix.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k - 1, k)] = beta;
        jac[(k, k - 1)] = beta;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (node, 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite Gauss-Legendre: 40-point panels over `[a, b]`.
fn composite_gl(a: f64, b: f64, panels: usize, f: &dyn Fn(f64) -> f64) -> f64 {
    use std::sync::OnceLock;
    static GL40: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = GL40.get_or_init(|| gauss_legendre(40));
    let width = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let half = 0.5 * width;
        let mid = lo + half;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            acc += w * f(mid + half * x);
        }
    }
    acc * 0.5 * width
}

/// `E[sigma(nu + tau Z)]` for `Z ~ N(0, 1)` and the logistic sigmoid,
/// accurate for arbitrarily steep `tau` by integrating only the boundary
/// layer around the sign change.
pub fn expected_sigmoid_gaussian(nu: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    let sigma = SigmaFunction::Sigmoid;
    if tau == 0.0 {
        return sigma.value(nu);
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if tau <= 3.0 {
        // Globally smooth integrand: composite panels over [-10, 10] resolve
        // features down to scale ~1/3.
        return composite_gl(-10.0, 10.0, 20, &|z| phi(z) * sigma.value(nu + tau * z));
    }
    // Steep case: sigma(nu + tau z) ~ 1[z >= z0] outside a layer of width
    // O(1/tau) around z0 = -nu / tau; correct Phi(nu / tau) on the layer
    // (|sigma - step| <= exp(-tau |z - z0|), so 46/tau covers it to 1e-20).
    let z0 = -nu / tau;
    let base = normal_cdf(nu / tau);
    let l = 46.0 / tau;
    let (a, b) = ((z0 - l).max(-10.0), (z0 + l).min(10.0));
    if a >= b {
        return base;
    }
    let corr = composite_gl(a, b, 12, &|z| {
        let step = if z >= z0 { 1.0 } else { 0.0 };
        phi(z) * (sigma.value(nu + tau * z) - step)
    });
    (base + corr).clamp(0.0, 1.0)
}

/// Deterministic STV between `N(m1, 1)` and `N(m2, 1)` in one dimension with
/// the linear-kernel sigmoid witness class of radius `u_radius`.
///
/// The witness score is `u x - b` with `|u| <= U`, so
/// `E[sigma] = E[sigma(nu + tau Z)]` with `nu = u m - b`, `tau = |u|`; the
/// objective is maximized over a slope grid with the bias at the pair centre
/// `b = u (m1 + m2) / 2` (the symmetry point) plus a local bias scan.
/// Quadrature replaces sampling, so the value is a deterministic lower bound
/// of the supremum with ~1e-9 accuracy.
pub fn stv_gaussian_mean_1d(m1: f64, m2: f64, u_radius: f64) -> Result<f64> {
    if !(u_radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "witness radius must be positive, got {u_radius}"
        )));
    }
    if m1 == m2 {
        return Ok(0.0);
    }
    let (hi, lo) = if m1 > m2 { (m1, m2) } else { (m2, m1) };
    let delta = hi - lo;
    let centre = 0.5 * (hi + lo);

    let objective = |u: f64, b: f64| -> f64 {
        expected_sigmoid_gaussian(u * hi - b, u) - expected_sigmoid_gaussian(u * lo - b, u)
    };

    let grid = 80usize;
    let mut best = 0.0f64;
    let mut best_u = u_radius;
    for i in 0..=grid {
        // Log-spaced slopes from U/1000 to U.
        let u = u_radius * (1e-3f64).powf(1.0 - i as f64 / grid as f64);
        let v = objective(u, u * centre);
        if v > best {
            best = v;
            best_u = u;
        }
    }
    // Local bias scan around the centre for the best slope.
    let u = best_u;
    let span = u * delta * 0.5 + 8.0;
    let scan = 160;
    for j in 0..=scan {
        let b = u * centre - span + 2.0 * span * j as f64 / scan as f64;
        best = best.max(objective(u, b));
    }
    Ok(best.clamp(0.0, 1.0))
}

/// Brute-force STV between `N(m1, 1)` and `N(m2, 1)` for the **step**
/// witness class: maximize over the slope sign and a `grid_points` bias grid.
/// With the step function only the threshold `b/u` matters, and the exact
/// expectations are normal CDFs.
pub fn stv_gaussian_mean_step_grid(m1: f64, m2: f64, grid_points: usize) -> Result<f64> {
    if grid_points < 2 {
        return Err(Error::InvalidInput("need at least two grid points".into()));
    }
    let lo = m1.min(m2) - 8.0;
    let hi = m1.max(m2) + 8.0;
    let mut best = 0.0f64;
    for j in 0..grid_points {
        let t = lo + (hi - lo) * j as f64 / (grid_points - 1) as f64;
        // u = +1: E[1(x >= t)] = Phi(m - t); u = -1: E[1(x <= t)] = Phi(t - m).
        let plus = normal_cdf(m1 - t) - normal_cdf(m2 - t);
        let minus = normal_cdf(t - m1) - normal_cdf(t - m2);
        best = best.max(plus).max(minus);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contamination::scenario_mean;

    fn pt1(x: f64) -> Point {
        DVector::from_element(1, x)
    }

    // -- exact TV ----------------------------------------------------------

    #[test]
    fn tv_gaussian_mean_examples() {
        let z = DVector::zeros(3);
        assert_eq!(tv_gaussian_mean(&z, &z).unwrap(), 0.0);

        let a = DVector::from_row_slice(&[2.0, 0.0]);
        let tv = tv_gaussian_mean(&DVector::zeros(2), &a).unwrap();
        assert!((tv - 0.6826894921370859).abs() < 1e-12);
    }

    /// 1-D trapezoid quadrature of the TV integral as an independent oracle.
    fn quadrature_tv_1d(m1: f64, m2: f64) -> f64 {
        let n = 200_000;
        let (a, b) = (m1.min(m2) - 10.0, m1.max(m2) + 10.0);
        let h = (b - a) / n as f64;
        let dens = |x: f64, m: f64| {
            (-0.5 * (x - m) * (x - m)).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let f = |x: f64| (dens(x, m1) - dens(x, m2)).abs();
        let mut acc = 0.5 * (f(a) + f(b));
        for i in 1..n {
            acc += f(a + i as f64 * h);
        }
        0.5 * acc * h
    }

    #[test]
    fn tv_gaussian_mean_matches_quadrature() {
        for (m1, m2) in [(0.0, 2.0), (-1.0, 0.5), (0.0, 0.1)] {
            let exact = tv_gaussian_mean(&pt1(m1), &pt1(m2)).unwrap();
            assert!((exact - quadrature_tv_1d(m1, m2)).abs() < 1e-8);
        }
    }

    #[test]
    fn tv_gaussian_mean_dominates_published_lower_bound() {
        let mut s = Stream::new(3);
        for _ in 0..50 {
            let m1 = DVector::from_vec(s.standard_normal_vec(3)) * 2.0;
            let m2 = DVector::from_vec(s.standard_normal_vec(3)) * 2.0;
            let tv = tv_gaussian_mean(&m1, &m2).unwrap();
            let lower = (m1.clone() - &m2).norm().min(1.0) / 200.0;
            assert!(tv >= lower);
        }
    }

    // -- Monte-Carlo TV ----------------------------------------------------

    #[test]
    fn mc_tv_zero_for_identical_densities() {
        let logp = |x: &Point| -0.5 * x.norm_squared();
        let mut sampler = |s: &mut Stream| pt1(s.standard_normal());
        let (est, _) = mc_tv(&logp, &logp, &mut sampler, 1000, 7).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn mc_tv_matches_exact_gaussian_value() {
        let logp = |x: &Point| -0.5 * x[0] * x[0];
        let logq = |x: &Point| -0.5 * (x[0] - 2.0) * (x[0] - 2.0);
        let mut sampler = |s: &mut Stream| pt1(s.standard_normal());
        let (est, se) = mc_tv(&logp, &logq, &mut sampler, 100_000, 11).unwrap();
        let exact = 0.6826894921370859;
        assert!((est - exact).abs() < 3.0 * se, "est {est}, se {se}");
    }

    #[test]
    fn mc_tv_matches_radial_quadrature_in_2d() {
        // N(0, I) vs N(0, 2I): densities are radial, so TV reduces to a 1-D
        // integral in r which we evaluate by trapezoid as the oracle.
        let logp = |x: &Point| -0.5 * x.norm_squared() - (2.0 * std::f64::consts::PI).ln();
        let logq = |x: &Point| {
            -0.25 * x.norm_squared() - (2.0 * std::f64::consts::PI * 2.0f64).ln()
        };
        let mut sampler = |s: &mut Stream| DVector::from_vec(s.standard_normal_vec(2));
        let (est, se) = mc_tv(&logp, &logq, &mut sampler, 100_000, 13).unwrap();

        let n = 400_000;
        let h = 30.0 / n as f64;
        let f = |r: f64| {
            let p = (-0.5 * r * r).exp() / (2.0 * std::f64::consts::PI);
            let q = (-0.25 * r * r).exp() / (4.0 * std::f64::consts::PI);
            (p - q).abs() * 2.0 * std::f64::consts::PI * r
        };
        let mut acc = 0.0;
        for i in 1..n {
            acc += f(i as f64 * h);
        }
        let oracle = 0.5 * acc * h;
        assert!((est - oracle).abs() < 3.0 * se, "est {est}, oracle {oracle}");
    }

    #[test]
    fn mc_tv_reports_offending_point() {
        let logp = |_: &Point| f64::NAN;
        let logq = |x: &Point| -x[0];
        let mut sampler = |s: &mut Stream| pt1(s.standard_normal());
        let err = mc_tv(&logp, &logq, &mut sampler, 10, 3).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    // -- sample STV --------------------------------------------------------

    fn sample_cfg(kernel: KernelSpec, u_radius: f64) -> StvConfig {
        StvConfig::new(kernel, u_radius).unwrap()
    }

    #[test]
    fn stv_identical_samples_is_zero() {
        let pts: Vec<Point> = (0..20).map(|i| pt1(i as f64 / 10.0)).collect();
        let p = WeightedSample::uniform(pts.clone()).unwrap();
        let q = WeightedSample::uniform(pts).unwrap();
        let cfg = sample_cfg(KernelSpec::linear(1), 10.0);
        let est = stv_between_samples(&p, &q, &cfg, 1).unwrap();
        assert!(est.value.abs() < 1e-12, "value {}", est.value);
    }

    #[test]
    fn stv_separated_point_masses_saturates() {
        let p = WeightedSample::uniform(vec![pt1(0.0)]).unwrap();
        let q = WeightedSample::uniform(vec![pt1(10.0)]).unwrap();
        let cfg = sample_cfg(KernelSpec::linear(1), 100.0);
        let est = stv_between_samples(&p, &q, &cfg, 5).unwrap();
        assert!(est.value >= 0.99, "value {}", est.value);

        // Brute-force grid over (u, b) as the oracle for the same bound.
        let mut brute = 0.0f64;
        let sig = SigmaFunction::Sigmoid;
        for ui in -100..=100 {
            let u = ui as f64;
            for bi in -100..=100 {
                let b = bi as f64 * 10.0;
                brute = brute.max(sig.value(-b) - sig.value(10.0 * u - b));
                brute = brute.max(sig.value(10.0 * u - b) - sig.value(-b));
            }
        }
        assert!(brute >= 0.99);
        assert!(est.value <= brute + 1e-6);
    }

    #[test]
    fn stv_is_dominated_by_tv_on_gaussian_pairs() {
        // Lemma-style chain: 0 <= stv <= mc_tv + 3 se on random mean pairs.
        let mut s = Stream::new(29);
        for trial in 0..20 {
            let m1 = 2.0 * s.standard_normal();
            let m2 = 2.0 * s.standard_normal();
            let n = 2000;
            let p_pts: Vec<Point> = (0..n).map(|_| pt1(m1 + s.standard_normal())).collect();
            let q_pts: Vec<Point> = (0..n).map(|_| pt1(m2 + s.standard_normal())).collect();
            let p = WeightedSample::uniform(p_pts).unwrap();
            let q = WeightedSample::uniform(q_pts).unwrap();
            let mut cfg = sample_cfg(KernelSpec::linear(1), 20.0);
            cfg.inner.restarts = 4;
            cfg.inner.outer_steps = 150;
            let est = stv_between_samples(&p, &q, &cfg, trial).unwrap();
            assert!(est.value >= 0.0);

            let logp = move |x: &Point| -0.5 * (x[0] - m1) * (x[0] - m1);
            let logq = move |x: &Point| -0.5 * (x[0] - m2) * (x[0] - m2);
            let mut sampler = |st: &mut Stream| pt1(m1 + st.standard_normal());
            let (tv, se) = mc_tv(&logp, &logq, &mut sampler, 50_000, trial + 100).unwrap();
            // Finite-sample witness optimization can overshoot the population
            // value by O(sqrt(d/n)); allow that on top of the MC band.
            let overshoot = 3.0 * (2.0 / n as f64).sqrt();
            assert!(
                est.value <= tv + 3.0 * se + overshoot,
                "trial {trial}: stv {} vs tv {tv} (se {se})",
                est.value
            );
        }
    }

    #[test]
    fn stv_triangle_inequality_on_empirical_triples() {
        let mut s = Stream::new(31);
        let gen = |s: &mut Stream, m: f64| {
            WeightedSample::uniform((0..600).map(|_| pt1(m + s.standard_normal())).collect())
                .unwrap()
        };
        let cfg = {
            let mut c = sample_cfg(KernelSpec::linear(1), 10.0);
            c.inner.outer_steps = 200;
            c
        };
        for trial in 0..5 {
            let p = gen(&mut s, 0.0);
            let r = gen(&mut s, 0.8);
            let q = gen(&mut s, 1.6);
            let pq = stv_between_samples(&p, &q, &cfg, 3 * trial).unwrap().value;
            let pr = stv_between_samples(&p, &r, &cfg, 3 * trial + 1).unwrap().value;
            let rq = stv_between_samples(&r, &q, &cfg, 3 * trial + 2).unwrap().value;
            // Witness-based values carry solver slack on both sides.
            assert!(
                pq <= pr + rq + 2.0 * 0.02,
                "triangle violated: {pq} > {pr} + {rq}"
            );
        }
    }

    #[test]
    fn sign_canonicalization_is_sound() {
        // objective(u, b) = -objective(-u, -b) under the sigmoid symmetry.
        let mut s = Stream::new(37);
        let p_pts: Vec<Point> = (0..50).map(|_| pt1(s.standard_normal())).collect();
        let q_pts: Vec<Point> = (0..50).map(|_| pt1(1.0 + s.standard_normal())).collect();
        let p = WeightedSample::uniform(p_pts).unwrap();
        let q = WeightedSample::uniform(q_pts).unwrap();
        let design = WitnessDesign::build(&KernelSpec::linear(1), &p.points, &q.points).unwrap();
        let problem = StvProblem {
            design: &design,
            wp: &p.weights,
            wq: &q.weights,
            sigma: SigmaFunction::Sigmoid,
            u_radius: 5.0,
            bias_bound: f64::INFINITY,
        };
        for _ in 0..20 {
            let theta = vec![s.standard_normal(), s.standard_normal()];
            let flipped: Vec<f64> = theta.iter().map(|t| -t).collect();
            let (v, _) = problem.value_grad(&theta);
            let (vf, _) = problem.value_grad(&flipped);
            assert!((v + vf).abs() < 1e-12, "{v} vs {vf}");
        }
    }

    #[test]
    fn stv_model_vs_own_draws_is_small() {
        let model = KernelExpFamilyModel::gaussian_mean(DVector::zeros(2));
        let data = model.sample(2000, 41).unwrap();
        let mut cfg = sample_cfg(KernelSpec::linear(2), 5.0);
        cfg.inner.outer_steps = 200;
        let est =
            stv_model_vs_samples(&model, &data, &cfg, &ModelSide::ExactDraws { m: 2000 }, 43)
                .unwrap();
        assert!(est.value < 0.08, "value {}", est.value);
        assert!(!est.weight_degeneracy);
    }

    #[test]
    fn stv_model_vs_shifted_data_is_large() {
        let model = KernelExpFamilyModel::gaussian_mean(DVector::zeros(2));
        let spec = scenario_mean(2);
        let shifted: Vec<Point> = {
            let (base, _) = spec.sample(1500, 47).unwrap();
            base.iter().map(|x| x + DVector::from_element(2, 5.0)).collect()
        };
        let cfg = sample_cfg(KernelSpec::linear(2), 10.0);
        let est =
            stv_model_vs_samples(&model, &shifted, &cfg, &ModelSide::ExactDraws { m: 1500 }, 49)
                .unwrap();
        assert!(est.value >= 0.9, "value {}", est.value);
    }

    #[test]
    fn stv_importance_side_flags_degeneracy() {
        // A steep f concentrates the softmax weights on the isolated top
        // draw: the logit gap to the runner-up is 3 * (5 - 1) = 12, so the
        // top weight exceeds 1 - 49 e^{-12} > 0.999.
        let model = KernelExpFamilyModel::gaussian_mean(DVector::from_element(1, 3.0));
        let mut s = Stream::new(51);
        let mut z: Vec<Point> = (0..49).map(|_| pt1(s.uniform_in(-1.0, 1.0))).collect();
        z.push(pt1(5.0));
        let log_q = DVector::zeros(50);
        let data: Vec<Point> = (0..50).map(|_| pt1(s.standard_normal())).collect();
        let cfg = sample_cfg(KernelSpec::linear(1), 5.0);
        let est = stv_model_vs_samples(
            &model,
            &data,
            &cfg,
            &ModelSide::ImportanceSample {
                z: &z,
                log_q: &log_q,
            },
            53,
        )
        .unwrap();
        assert!(est.weight_degeneracy);
    }

    // -- bias bound and decay rate ------------------------------------------

    #[test]
    fn bias_bound_examples() {
        let f = RkhsFunction::from_vector(DVector::from_element(2, 1.0));
        let same = bias_bound(&f, &f, 4.0).unwrap();
        assert_eq!(same.bound, 0.0);
        assert!(!same.trivial);

        let g = RkhsFunction::from_vector(DVector::from_row_slice(&[1.0, 0.0]));
        let bb = bias_bound(&f, &g, 10.0).unwrap();
        assert!((bb.bound - 0.1).abs() < 1e-12);

        let trivial = bias_bound(&f, &g, 0.5).unwrap();
        assert_eq!(trivial.bound, 1.0);
        assert!(trivial.trivial);
    }

    #[test]
    fn bias_bound_holds_empirically_in_1d() {
        // TV - STV within [0, |f-g|/U] for the quadrature witness, swept over
        // ballooning radii.
        let (m1, m2) = (0.0, 1.0);
        let delta = 1.0;
        let tv = tv_gaussian_mean(&pt1(m1), &pt1(m2)).unwrap();
        for mult in [2.0, 5.0, 10.0, 50.0] {
            let u = mult * delta;
            let stv = stv_gaussian_mean_1d(m1, m2, u).unwrap();
            let gap = tv - stv;
            assert!(gap >= -1e-9, "gap {gap} at U = {u}");
            assert!(gap <= delta / u + 1e-6, "gap {gap} at U = {u}");
        }
    }

    #[test]
    fn decay_rate_examples() {
        let grid = log_grid(1e6, 20_000);
        let (sup, bound) = decay_rate_check(&SigmaFunction::Sigmoid, 2.0, &grid).unwrap();
        assert!(sup <= bound);
        // Interior maximizer near t = 1 + sqrt(2).
        assert!((sup - 0.20710678).abs() < 1e-4, "sup {sup}");

        let (sup10, bound10) = decay_rate_check(&SigmaFunction::Sigmoid, 10.0, &grid).unwrap();
        assert!(sup10 <= bound10);
        assert!(bound10 == 0.1);

        // t = 1 contributes zero.
        let (s1, _) = decay_rate_check(&SigmaFunction::Sigmoid, 3.0, &[1.0]).unwrap();
        assert_eq!(s1, 0.0);
    }

    // -- mmd -----------------------------------------------------------------

    #[test]
    fn mmd_examples() {
        let pts: Vec<Point> = (0..10).map(|i| pt1(i as f64)).collect();
        let k = KernelSpec::rbf(1, 1.0).unwrap();
        assert!(mmd(&pts, &pts, &k).unwrap() < 1e-12);

        // Linear kernel: equals the Euclidean distance of the means.
        let p: Vec<Point> = vec![pt1(0.0), pt1(2.0)];
        let q: Vec<Point> = vec![pt1(5.0), pt1(7.0)];
        let lin = KernelSpec::linear(1);
        assert!((mmd(&p, &q, &lin).unwrap() - 5.0).abs() < 1e-12);

        // Singletons under RBF: sqrt(2 - 2 k(x, z)).
        let x = pt1(0.0);
        let z = pt1(1.5);
        let expect = (2.0 - 2.0 * k.eval(&x, &z).unwrap()).sqrt();
        assert!((mmd(&[x], &[z], &k).unwrap() - expect).abs() < 1e-12);
    }

    // -- depth objectives ----------------------------------------------------

    #[test]
    fn tukey_depth_examples() {
        // Single point at mu: every direction counts it.
        let data = vec![DVector::from_row_slice(&[0.3, -0.2])];
        let mu = DVector::from_row_slice(&[0.3, -0.2]);
        let v = tukey_depth_ipm(&data, &mu, 16, 3).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // Symmetric +-1 pairs in one dimension balance out.
        let sym = vec![pt1(1.0), pt1(-1.0)];
        let v = tukey_depth_ipm(&sym, &pt1(0.0), 8, 5).unwrap();
        assert!(v.abs() < 1e-12, "v = {v}");

        // Always within [-1/2, 1/2].
        let mut s = Stream::new(7);
        let data: Vec<Point> = (0..40)
            .map(|_| DVector::from_vec(s.standard_normal_vec(3)))
            .collect();
        let v = tukey_depth_ipm(&data, &DVector::zeros(3), 32, 9).unwrap();
        assert!((-0.5..=0.5).contains(&v));
    }

    #[test]
    fn covariance_depth_examples() {
        // Quantile grid of N(0,1) against sigma = 1: empirical CDF converges.
        let n = 4000;
        let data: Vec<Point> = (1..=n)
            .map(|i| {
                let p = i as f64 / (n + 1) as f64;
                // Inverse CDF by bisection on normal_cdf.
                let (mut lo, mut hi) = (-9.0f64, 9.0f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if normal_cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                pt1(0.5 * (lo + hi))
            })
            .collect();
        let sigma = DMatrix::identity(1, 1);
        let v = covariance_depth_ipm(&data, &sigma, 4, 11).unwrap();
        assert!(v < 0.01, "v = {v}");

        // Sigma scaled by 100: every point falls inside the threshold.
        let inflated = DMatrix::identity(1, 1) * 100.0;
        let v = covariance_depth_ipm(&data, &inflated, 4, 13).unwrap();
        assert!((v - (1.0 - 0.6826894921370859)).abs() < 1e-6);

        // Bound: value never exceeds max(P(Z^2<=1), 1 - P(Z^2<=1)).
        let mut s = Stream::new(17);
        let rand_data: Vec<Point> = (0..200)
            .map(|_| DVector::from_vec(s.standard_normal_vec(2)))
            .collect();
        let v = covariance_depth_ipm(&rand_data, &DMatrix::identity(2, 2), 16, 19).unwrap();
        assert!(v <= 0.6826894921370859 + 1e-12);
    }

    #[test]
    fn covariance_depth_rejects_non_spd() {
        let data = vec![pt1(1.0)];
        let sigma = DMatrix::from_element(1, 1, -1.0);
        assert!(covariance_depth_ipm(&data, &sigma, 4, 1).is_err());
    }

    // -- quadrature oracles ---------------------------------------------------

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (nodes, weights) = gauss_legendre(12);
        let integral: f64 = nodes
            .iter()
            .zip(weights.iter())
            .map(|(x, w)| w * (x.powi(4) + 2.0 * x + 1.0))
            .sum();
        // int_{-1}^{1} x^4 + 2x + 1 dx = 2/5 + 0 + 2
        assert!((integral - 2.4).abs() < 1e-12);
    }

    #[test]
    fn expected_sigmoid_gaussian_limits() {
        // tau -> 0 reduces to sigma(nu).
        assert!((expected_sigmoid_gaussian(0.7, 0.0) - SigmaFunction::Sigmoid.value(0.7)).abs() < 1e-15);
        // Steep tau approaches Phi(nu / tau).
        let v = expected_sigmoid_gaussian(50.0, 100.0);
        assert!((v - normal_cdf(0.5)).abs() < 1e-3);
        // Symmetry E[sigma(nu + tau Z)] + E[sigma(-nu + tau Z)] = 1.
        for (nu, tau) in [(0.3, 1.0), (2.0, 9.0), (-4.0, 55.0)] {
            let s = expected_sigmoid_gaussian(nu, tau) + expected_sigmoid_gaussian(-nu, tau);
            assert!((s - 1.0).abs() < 1e-9, "nu {nu} tau {tau}: {s}");
        }

        // Against a dense trapezoid quadrature at moderate steepness.
        let trap = {
            let n = 400_000;
            let (a, b) = (-12.0f64, 12.0);
            let h = (b - a) / n as f64;
            let f = |z: f64| {
                (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
                    * SigmaFunction::Sigmoid.value(1.3 + 7.0 * z)
            };
            let mut acc = 0.5 * (f(a) + f(b));
            for i in 1..n {
                acc += f(a + i as f64 * h);
            }
            acc * h
        };
        assert!((expected_sigmoid_gaussian(1.3, 7.0) - trap).abs() < 1e-9);
    }

    #[test]
    fn step_grid_recovers_tv() {
        let mut s = Stream::new(61);
        for _ in 0..10 {
            let m1 = 2.0 * s.standard_normal();
            let m2 = 2.0 * s.standard_normal();
            let tv = tv_gaussian_mean(&pt1(m1), &pt1(m2)).unwrap();
            let grid = stv_gaussian_mean_step_grid(m1, m2, 2001).unwrap();
            assert!((grid - tv).abs() < 1e-3, "grid {grid} vs tv {tv}");
        }
    }

    #[test]
    fn quadrature_stv_approaches_tv_from_below() {
        let tv = tv_gaussian_mean(&pt1(0.0), &pt1(1.0)).unwrap();
        let mut prev = 0.0;
        for u in [2.0, 5.0, 20.0, 100.0] {
            let stv = stv_gaussian_mean_1d(0.0, 1.0, u).unwrap();
            assert!(stv <= tv + 1e-9);
            assert!(stv >= prev - 1e-9, "monotone in U");
            prev = stv;
        }
        assert!(tv - prev < 0.011);
    }
}
