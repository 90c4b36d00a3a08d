//! Min-max objectives for the three model families.
//!
//! Shared structure: the value is
//!
//! ```text
//! J(f, u, b) = E-hat_model[sigma(u(X) - b)] - (1/n) sum_j sigma(u(X_j) - b)
//!              [+ |f|^2 / r^2] [- |u|^2 / U^2]
//! ```
//!
//! where the model expectation is either a fresh batch of exact draws per
//! outer step or a fixed proposal sample with self-normalized weights
//! `w_i ∝ exp(f(Z_i)) / q(Z_i)`. The derivative of the weighted expectation
//! with respect to the logit at `Z_j` is `w_j (sigma_j - sum_k w_k sigma_k)`.
//!
//! Gradients w.r.t. the model parameter:
//!
//! * mean family, exact draws: pathwise through `Y_i = f + xi_i`;
//! * covariance family, exact draws: score function with the batch mean as
//!   baseline, `-(1/2m) sum (h_i - h_bar) Y_i Y_i'`;
//! * importance sampling: the softmax-logit rule above chained through
//!   `d logit / d f`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::divergences::SigmaFunction;
use crate::kernels::{KernelSpec, Point};
use crate::optim::MinimaxObjective;
use crate::rng::{derive, Stream};
use crate::{Error, Result};

use super::{softmax_from_logits, Variant};

pub(crate) const TAG_MODEL_DRAWS: u64 = 0x20;

/// Penalty strengths derived from a learner config; zero when the variant
/// projects instead of penalizing.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Penalties {
    pub inv_r2: f64,
    pub inv_u2: f64,
}

impl Penalties {
    pub(crate) fn for_variant(variant: Variant, r: f64, u_radius: f64) -> Self {
        match variant {
            Variant::HardConstraint => Penalties {
                inv_r2: 0.0,
                inv_u2: 0.0,
            },
            Variant::AdditiveReg => Penalties {
                inv_r2: 1.0 / (r * r),
                inv_u2: 0.0,
            },
            Variant::FullReg => Penalties {
                inv_r2: 1.0 / (r * r),
                inv_u2: 1.0 / (u_radius * u_radius),
            },
        }
    }
}

/// Columns are points.
pub(crate) fn columns(points: &[Point]) -> DMatrix<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut m = DMatrix::zeros(d, points.len());
    for (j, p) in points.iter().enumerate() {
        m.column_mut(j).copy_from(p);
    }
    m
}

fn sigma_values(sigma: SigmaFunction, scores: &DVector<f64>, b: f64) -> (DVector<f64>, DVector<f64>) {
    let n = scores.len();
    let mut vals = DVector::zeros(n);
    let mut ders = DVector::zeros(n);
    for i in 0..n {
        let z = scores[i] - b;
        vals[i] = sigma.value(z);
        ders[i] = sigma.derivative(z);
    }
    (vals, ders)
}

// ---------------------------------------------------------------------------
// Mean family
// ---------------------------------------------------------------------------

/// Model expectation state for the Gaussian mean family.
#[derive(Debug, Clone)]
pub(crate) enum MeanExpectation {
    /// Fresh reparameterized draws `Y = f + xi` each outer step.
    Exact {
        draws: usize,
        seed: u64,
        noise: DMatrix<f64>,
        model_pts: DMatrix<f64>,
    },
    /// Fixed proposal draws in the original coordinates plus their centered
    /// copies for witness scores.
    Importance {
        z: DMatrix<f64>,
        z_centered: DMatrix<f64>,
        log_q: DVector<f64>,
    },
}

/// Objective for `N_d(f, I)`. Works in coordinates centered at a
/// translation-equivariant anchor (the componentwise median), which keeps the
/// witness path translation-invariant; the `f`-penalty is still applied to
/// the uncentered parameter.
#[derive(Debug, Clone)]
pub(crate) struct MeanObjective {
    pub data_c: DMatrix<f64>,
    pub center: DVector<f64>,
    pub sigma: SigmaFunction,
    pub pen: Penalties,
    pub u_radius: f64,
    pub expectation: MeanExpectation,
}

/// How often fresh witness candidates are offered to the engine.
const WITNESS_PROPOSAL_PERIOD: usize = 10;

/// Candidate menu for the periodic witness refresh: both signs of each
/// discrepancy direction, at a score-adaptive scale and at the ball radius,
/// with the bias at the pooled score median.
fn witness_menu(
    directions: &[DVector<f64>],
    u_radius: f64,
    pooled_scores_for: &dyn Fn(&DVector<f64>) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for dir in directions {
        let norm = dir.norm();
        if !(norm > 1e-12) {
            continue;
        }
        let unit = dir / norm;
        let unit_scores = pooled_scores_for(&unit);
        let spread = crate::estimators::baselines::mad(&unit_scores);
        let adaptive = if spread > 1e-12 {
            (2.0 / spread).min(u_radius)
        } else {
            u_radius
        };
        for sign in [1.0, -1.0] {
            for scale in [adaptive, u_radius] {
                let u = &unit * (sign * scale);
                let mut scores = pooled_scores_for(&u);
                scores.sort_by(f64::total_cmp);
                let b = scores[scores.len() / 2];
                let mut cand = u.as_slice().to_vec();
                cand.push(b);
                out.push(cand);
            }
        }
    }
    out
}

impl MeanObjective {
    pub(crate) fn dim(&self) -> usize {
        self.center.len()
    }

    fn model_columns(&self) -> &DMatrix<f64> {
        match &self.expectation {
            MeanExpectation::Exact { model_pts, .. } => model_pts,
            MeanExpectation::Importance { z_centered, .. } => z_centered,
        }
    }

    /// Mean-embedding discrepancy between the current model side and the
    /// data, in centered coordinates.
    fn moment_difference(&self, x: &[f64]) -> DVector<f64> {
        let d = self.dim();
        let model_mean = match &self.expectation {
            MeanExpectation::Exact { model_pts, .. } => {
                if model_pts.ncols() == 0 {
                    DVector::from_column_slice(x)
                } else {
                    let mut m = DVector::zeros(d);
                    for col in model_pts.column_iter() {
                        m += col;
                    }
                    m / model_pts.ncols() as f64
                }
            }
            MeanExpectation::Importance { z_centered, z, log_q } => {
                let f_orig = DVector::from_column_slice(x) + &self.center;
                let logits = z.tr_mul(&f_orig) - log_q;
                let w = softmax_from_logits(logits.as_slice());
                let mut m = DVector::zeros(d);
                for (j, col) in z_centered.column_iter().enumerate() {
                    m.axpy(w[j], &col.clone_owned(), 1.0);
                }
                m
            }
        };
        let mut data_mean = DVector::zeros(d);
        for col in self.data_c.column_iter() {
            data_mean += col;
        }
        data_mean /= self.data_c.ncols() as f64;
        model_mean - data_mean
    }
}

impl MinimaxObjective for MeanObjective {
    fn witness_candidates(&self, step: usize, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        if step % WITNESS_PROPOSAL_PERIOD != 1 {
            return Vec::new();
        }
        let d = self.dim();
        let diff = self.moment_difference(x);
        let model = self.model_columns();
        let data = &self.data_c;
        let pooled = |u: &DVector<f64>| -> Vec<f64> {
            let mut s: Vec<f64> = model.tr_mul(u).iter().copied().collect();
            s.extend(data.tr_mul(u).iter());
            s
        };
        let _ = (y, d);
        witness_menu(&[diff], self.u_radius, &pooled)
    }

    fn begin_outer_step(&mut self, step: usize, x: &[f64]) {
        if let MeanExpectation::Exact {
            draws,
            seed,
            noise,
            model_pts,
        } = &mut self.expectation
        {
            let d = x.len();
            let mut stream = Stream::new(derive(*seed, &[TAG_MODEL_DRAWS, step as u64]));
            *noise = DMatrix::from_fn(d, *draws, |_, _| stream.standard_normal());
            *model_pts = noise.clone();
            for mut col in model_pts.column_iter_mut() {
                for i in 0..d {
                    col[i] += x[i];
                }
            }
        }
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let u = DVector::from_column_slice(&y[..d]);
        let b = y[d];

        let model_term = match &self.expectation {
            MeanExpectation::Exact { model_pts, .. } => {
                let scores = model_pts.tr_mul(&u);
                let m = scores.len() as f64;
                scores.iter().map(|s| self.sigma.value(s - b)).sum::<f64>() / m
            }
            MeanExpectation::Importance {
                z,
                z_centered,
                log_q,
            } => {
                let f_orig = DVector::from_column_slice(x) + &self.center;
                let logits = z.tr_mul(&f_orig) - log_q;
                let w = softmax_from_logits(logits.as_slice());
                let scores = z_centered.tr_mul(&u);
                w.iter()
                    .zip(scores.iter())
                    .map(|(wi, s)| wi * self.sigma.value(s - b))
                    .sum()
            }
        };
        let data_scores = self.data_c.tr_mul(&u);
        let n = data_scores.len() as f64;
        let data_term = data_scores
            .iter()
            .map(|s| self.sigma.value(s - b))
            .sum::<f64>()
            / n;

        let f_orig_sq = x
            .iter()
            .zip(self.center.iter())
            .map(|(xi, ci)| (xi + ci) * (xi + ci))
            .sum::<f64>();
        model_term - data_term + self.pen.inv_r2 * f_orig_sq - self.pen.inv_u2 * u.norm_squared()
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let u = DVector::from_column_slice(&y[..d]);
        let b = y[d];

        let mut g = match &self.expectation {
            MeanExpectation::Exact { model_pts, .. } => {
                let scores = model_pts.tr_mul(&u);
                let m = scores.len() as f64;
                let mean_der = scores
                    .iter()
                    .map(|s| self.sigma.derivative(s - b))
                    .sum::<f64>()
                    / m;
                &u * mean_der
            }
            MeanExpectation::Importance { z, z_centered, log_q } => {
                let f_orig = DVector::from_column_slice(x) + &self.center;
                let logits = z.tr_mul(&f_orig) - log_q;
                let w = softmax_from_logits(logits.as_slice());
                let scores = z_centered.tr_mul(&u);
                let (vals, _) = sigma_values(self.sigma, &scores, b);
                let sigma_bar: f64 = w.iter().zip(vals.iter()).map(|(wi, v)| wi * v).sum();
                let coeff =
                    DVector::from_fn(w.len(), |j, _| w[j] * (vals[j] - sigma_bar));
                z * coeff
            }
        };
        if self.pen.inv_r2 > 0.0 {
            for i in 0..d {
                g[i] += 2.0 * self.pen.inv_r2 * (x[i] + self.center[i]);
            }
        }
        g.as_slice().to_vec()
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let u = DVector::from_column_slice(&y[..d]);
        let b = y[d];

        let (mut gu, mut gb) = match &self.expectation {
            MeanExpectation::Exact { model_pts, .. } => {
                let scores = model_pts.tr_mul(&u);
                let m = scores.len() as f64;
                let (_, ders) = sigma_values(self.sigma, &scores, b);
                let gu = model_pts * (&ders / m);
                let gb = -ders.sum() / m;
                (gu, gb)
            }
            MeanExpectation::Importance { z, z_centered, log_q } => {
                let f_orig = DVector::from_column_slice(x) + &self.center;
                let logits = z.tr_mul(&f_orig) - log_q;
                let w = softmax_from_logits(logits.as_slice());
                let scores = z_centered.tr_mul(&u);
                let (_, ders) = sigma_values(self.sigma, &scores, b);
                let coeff = DVector::from_fn(w.len(), |j, _| w[j] * ders[j]);
                let gb = -coeff.sum();
                (z_centered * coeff, gb)
            }
        };

        let data_scores = self.data_c.tr_mul(&u);
        let n = data_scores.len() as f64;
        let (_, data_ders) = sigma_values(self.sigma, &data_scores, b);
        gu -= &self.data_c * (&data_ders / n);
        gb += data_ders.sum() / n;

        if self.pen.inv_u2 > 0.0 {
            gu -= &u * (2.0 * self.pen.inv_u2);
        }
        let mut out = gu.as_slice().to_vec();
        out.push(gb);
        out
    }
}

// ---------------------------------------------------------------------------
// Covariance family
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum CovExpectation {
    /// Fresh draws from `N(0, (I + F)^{-1})` each outer step.
    Exact {
        draws: usize,
        seed: u64,
        model_pts: DMatrix<f64>,
        /// Set when `I + F` stopped being positive definite (guarded against
        /// by the feasibility hook, so reaching it is a numeric failure).
        poisoned: bool,
    },
    Importance {
        z: DMatrix<f64>,
        log_q: DVector<f64>,
    },
}

/// Objective for `N_d(0, (I + F)^{-1})`, parameterized by the flattened
/// symmetric matrix `F`. The RKHS norm of `f(x) = -x' F x / 2` is
/// `|F|_F / 2`.
#[derive(Debug, Clone)]
pub(crate) struct CovObjective {
    pub data: DMatrix<f64>,
    pub dim: usize,
    pub sigma: SigmaFunction,
    pub pen: Penalties,
    pub u_radius: f64,
    pub expectation: CovExpectation,
}

fn mat_from_flat(flat: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, flat)
}

/// Per-column quadratic forms `x_j' M x_j`.
fn quad_scores(m: &DMatrix<f64>, pts: &DMatrix<f64>) -> DVector<f64> {
    let prod = m * pts;
    let mut out = DVector::zeros(pts.ncols());
    for j in 0..pts.ncols() {
        out[j] = pts.column(j).dot(&prod.column(j));
    }
    out
}

/// `sum_j c_j x_j x_j'` as a d x d matrix.
fn weighted_outer(pts: &DMatrix<f64>, coeff: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = pts.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= coeff[j];
    }
    &scaled * pts.transpose()
}

impl CovObjective {
    fn logits(&self, f_mat: &DMatrix<f64>, z: &DMatrix<f64>, log_q: &DVector<f64>) -> Vec<f64> {
        let qs = quad_scores(f_mat, z);
        (0..z.ncols())
            .map(|j| -0.5 * qs[j] - log_q[j])
            .collect()
    }
}

impl MinimaxObjective for CovObjective {
    fn witness_candidates(&self, step: usize, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        if step % WITNESS_PROPOSAL_PERIOD != 1 {
            return Vec::new();
        }
        let d = self.dim;
        // Second-moment discrepancy, the quadratic analogue of the
        // mean-difference direction.
        let model_sm = match &self.expectation {
            CovExpectation::Exact {
                model_pts,
                poisoned,
                ..
            } => {
                if *poisoned || model_pts.ncols() == 0 {
                    return Vec::new();
                }
                let ones = DVector::from_element(model_pts.ncols(), 1.0 / model_pts.ncols() as f64);
                weighted_outer(model_pts, &ones)
            }
            CovExpectation::Importance { z, log_q } => {
                let f_mat = mat_from_flat(x, d);
                let w = softmax_from_logits(&self.logits(&f_mat, z, log_q));
                weighted_outer(z, &DVector::from_vec(w))
            }
        };
        let ones = DVector::from_element(self.data.ncols(), 1.0 / self.data.ncols() as f64);
        let data_sm = weighted_outer(&self.data, &ones);
        let diff = model_sm - data_sm;
        let diff_flat = DVector::from_column_slice(diff.as_slice());

        let model = match &self.expectation {
            CovExpectation::Exact { model_pts, .. } => model_pts.clone(),
            CovExpectation::Importance { z, .. } => z.clone(),
        };
        let data = self.data.clone();
        let pooled = |u_flat: &DVector<f64>| -> Vec<f64> {
            let w_mat = mat_from_flat(u_flat.as_slice(), d);
            let mut s: Vec<f64> = quad_scores(&w_mat, &model).iter().copied().collect();
            s.extend(quad_scores(&w_mat, &data).iter());
            s
        };
        // The full second-moment difference is dominated by the outlier
        // cluster; its eigendirections expose residual mismatch orthogonal
        // to it, each as a rank-one quadratic form.
        let mut directions = vec![diff_flat];
        let eig = nalgebra::SymmetricEigen::new((&diff + diff.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs())
        });
        for &i in order.iter().take(3) {
            let v = eig.eigenvectors.column(i).clone_owned();
            let rank_one = &v * v.transpose();
            directions.push(DVector::from_column_slice(rank_one.as_slice()));
        }
        let _ = y;
        witness_menu(&directions, self.u_radius, &pooled)
    }

    fn begin_outer_step(&mut self, step: usize, x: &[f64]) {
        let d = self.dim;
        if let CovExpectation::Exact {
            draws,
            seed,
            model_pts,
            poisoned,
        } = &mut self.expectation
        {
            let f_mat = mat_from_flat(x, d);
            let ipf = DMatrix::identity(d, d) + &f_mat;
            let sampler = Cholesky::new(ipf)
                .map(|c| c.inverse())
                .and_then(Cholesky::new);
            match sampler {
                Some(chol) => {
                    let l = chol.l();
                    let mut stream = Stream::new(derive(*seed, &[TAG_MODEL_DRAWS, step as u64]));
                    let xi = DMatrix::from_fn(d, *draws, |_, _| stream.standard_normal());
                    *model_pts = &l * xi;
                    *poisoned = false;
                }
                None => *poisoned = true,
            }
        }
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let f_mat = mat_from_flat(x, d);
        let w_mat = mat_from_flat(&y[..d * d], d);
        let b = y[d * d];

        let model_term = match &self.expectation {
            CovExpectation::Exact {
                model_pts,
                poisoned,
                ..
            } => {
                if *poisoned {
                    return f64::NAN;
                }
                let scores = quad_scores(&w_mat, model_pts);
                let m = scores.len() as f64;
                scores.iter().map(|s| self.sigma.value(s - b)).sum::<f64>() / m
            }
            CovExpectation::Importance { z, log_q } => {
                let w = softmax_from_logits(&self.logits(&f_mat, z, log_q));
                let scores = quad_scores(&w_mat, z);
                w.iter()
                    .zip(scores.iter())
                    .map(|(wi, s)| wi * self.sigma.value(s - b))
                    .sum()
            }
        };
        let data_scores = quad_scores(&w_mat, &self.data);
        let n = data_scores.len() as f64;
        let data_term = data_scores
            .iter()
            .map(|s| self.sigma.value(s - b))
            .sum::<f64>()
            / n;

        // |f|^2 = |F|_F^2 / 4, |u|^2 = |W|_F^2.
        let f_norm_sq = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        let u_norm_sq = y[..d * d].iter().map(|v| v * v).sum::<f64>();
        model_term - data_term + self.pen.inv_r2 * f_norm_sq - self.pen.inv_u2 * u_norm_sq
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let w_mat = mat_from_flat(&y[..d * d], d);
        let b = y[d * d];

        let mut grad = match &self.expectation {
            CovExpectation::Exact {
                model_pts,
                poisoned,
                ..
            } => {
                if *poisoned {
                    return vec![f64::NAN; d * d];
                }
                let scores = quad_scores(&w_mat, model_pts);
                let m = scores.len() as f64;
                let (vals, _) = sigma_values(self.sigma, &scores, b);
                let h_bar = vals.sum() / m;
                let coeff = DVector::from_fn(vals.len(), |i, _| -(vals[i] - h_bar) / (2.0 * m));
                weighted_outer(model_pts, &coeff)
            }
            CovExpectation::Importance { z, log_q } => {
                let f_mat = mat_from_flat(x, d);
                let w = softmax_from_logits(&self.logits(&f_mat, z, log_q));
                let scores = quad_scores(&w_mat, z);
                let (vals, _) = sigma_values(self.sigma, &scores, b);
                let sigma_bar: f64 = w.iter().zip(vals.iter()).map(|(wi, v)| wi * v).sum();
                let coeff =
                    DVector::from_fn(w.len(), |j, _| -0.5 * w[j] * (vals[j] - sigma_bar));
                weighted_outer(z, &coeff)
            }
        };
        if self.pen.inv_r2 > 0.0 {
            let f_mat = mat_from_flat(x, d);
            grad += f_mat * (self.pen.inv_r2 / 2.0);
        }
        grad.as_slice().to_vec()
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let w_mat = mat_from_flat(&y[..d * d], d);
        let b = y[d * d];

        let (mut gw, mut gb) = match &self.expectation {
            CovExpectation::Exact {
                model_pts,
                poisoned,
                ..
            } => {
                if *poisoned {
                    return vec![f64::NAN; d * d + 1];
                }
                let scores = quad_scores(&w_mat, model_pts);
                let m = scores.len() as f64;
                let (_, ders) = sigma_values(self.sigma, &scores, b);
                let coeff = &ders / m;
                (weighted_outer(model_pts, &coeff), -ders.sum() / m)
            }
            CovExpectation::Importance { z, log_q } => {
                let f_mat = mat_from_flat(x, d);
                let w = softmax_from_logits(&self.logits(&f_mat, z, log_q));
                let scores = quad_scores(&w_mat, z);
                let (_, ders) = sigma_values(self.sigma, &scores, b);
                let coeff = DVector::from_fn(w.len(), |j, _| w[j] * ders[j]);
                let gb = -coeff.sum();
                (weighted_outer(z, &coeff), gb)
            }
        };

        let data_scores = quad_scores(&w_mat, &self.data);
        let n = data_scores.len() as f64;
        let (_, data_ders) = sigma_values(self.sigma, &data_scores, b);
        gw -= weighted_outer(&self.data, &(&data_ders / n));
        gb += data_ders.sum() / n;

        if self.pen.inv_u2 > 0.0 {
            gw -= &w_mat * (2.0 * self.pen.inv_u2);
        }
        let mut out = gw.as_slice().to_vec();
        out.push(gb);
        out
    }
}

// ---------------------------------------------------------------------------
// Representer (general-kernel) family
// ---------------------------------------------------------------------------

/// Objective for `f = sum_j c_j k(Z_j, .)` with the witness expanded over the
/// pooled anchors `[Z; X]`. Importance sampling only: the fixed draws `Z` are
/// what make the representer reduction valid.
#[derive(Debug, Clone)]
pub(crate) struct ReprObjective {
    pub k_zz: DMatrix<f64>,
    /// Cross-Gram of pooled anchors against Z (|W| x l).
    pub k_wz: DMatrix<f64>,
    /// Cross-Gram of pooled anchors against the data (|W| x n).
    pub k_wx: DMatrix<f64>,
    pub k_ww: DMatrix<f64>,
    pub log_q: DVector<f64>,
    pub sigma: SigmaFunction,
    pub pen: Penalties,
    pub u_radius: f64,
}

impl ReprObjective {
    pub(crate) fn n_anchors(&self) -> usize {
        self.k_ww.nrows()
    }

    pub(crate) fn n_z(&self) -> usize {
        self.k_zz.nrows()
    }

    fn weights(&self, c: &DVector<f64>) -> Vec<f64> {
        let f_at_z = &self.k_zz * c;
        let logits: Vec<f64> = (0..f_at_z.len())
            .map(|j| f_at_z[j] - self.log_q[j])
            .collect();
        softmax_from_logits(&logits)
    }
}

impl MinimaxObjective for ReprObjective {
    fn witness_candidates(&self, step: usize, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        if step % WITNESS_PROPOSAL_PERIOD != 1 {
            return Vec::new();
        }
        // Mean-embedding discrepancy in coefficient space: model weights on
        // the Z anchors, minus uniform mass on the data anchors.
        let c = DVector::from_column_slice(x);
        let w = self.weights(&c);
        let nz = self.n_z();
        let nw = self.n_anchors();
        let n_data = nw - nz;
        let mut diff = DVector::zeros(nw);
        for (i, wi) in w.iter().enumerate() {
            diff[i] = *wi;
        }
        for i in nz..nw {
            diff[i] = -1.0 / n_data as f64;
        }
        // Normalization below is Euclidean in coefficient space; only the
        // direction matters because the scale is score-adaptive anyway.
        let pooled = |a: &DVector<f64>| -> Vec<f64> {
            let mut s: Vec<f64> = self.k_wz.tr_mul(a).iter().copied().collect();
            s.extend(self.k_wx.tr_mul(a).iter());
            s
        };
        let _ = y;
        let mut menu = witness_menu(&[diff], self.u_radius, &pooled);
        for cand in menu.iter_mut() {
            let b = cand[nw];
            cand[nw] = b.clamp(-self.u_radius, self.u_radius);
        }
        menu
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let c = DVector::from_column_slice(x);
        let nw = self.n_anchors();
        let a = DVector::from_column_slice(&y[..nw]);
        let b = y[nw];

        let w = self.weights(&c);
        let scores_z = self.k_wz.tr_mul(&a);
        let model_term: f64 = w
            .iter()
            .zip(scores_z.iter())
            .map(|(wi, s)| wi * self.sigma.value(s - b))
            .sum();

        let scores_x = self.k_wx.tr_mul(&a);
        let n = scores_x.len() as f64;
        let data_term = scores_x
            .iter()
            .map(|s| self.sigma.value(s - b))
            .sum::<f64>()
            / n;

        let f_norm_sq = c.dot(&(&self.k_zz * &c)).max(0.0);
        let u_norm_sq = a.dot(&(&self.k_ww * &a)).max(0.0);
        model_term - data_term + self.pen.inv_r2 * f_norm_sq - self.pen.inv_u2 * u_norm_sq
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(x);
        let nw = self.n_anchors();
        let a = DVector::from_column_slice(&y[..nw]);
        let b = y[nw];

        let w = self.weights(&c);
        let scores_z = self.k_wz.tr_mul(&a);
        let (vals, _) = sigma_values(self.sigma, &scores_z, b);
        let sigma_bar: f64 = w.iter().zip(vals.iter()).map(|(wi, v)| wi * v).sum();
        let coeff = DVector::from_fn(w.len(), |j, _| w[j] * (vals[j] - sigma_bar));
        let mut g = &self.k_zz * coeff;
        if self.pen.inv_r2 > 0.0 {
            g += (&self.k_zz * &c) * (2.0 * self.pen.inv_r2);
        }
        g.as_slice().to_vec()
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(x);
        let nw = self.n_anchors();
        let a = DVector::from_column_slice(&y[..nw]);
        let b = y[nw];

        let w = self.weights(&c);
        let scores_z = self.k_wz.tr_mul(&a);
        let (_, ders_z) = sigma_values(self.sigma, &scores_z, b);
        let coeff_z = DVector::from_fn(w.len(), |j, _| w[j] * ders_z[j]);
        let mut ga = &self.k_wz * &coeff_z;
        let mut gb = -coeff_z.sum();

        let scores_x = self.k_wx.tr_mul(&a);
        let n = scores_x.len() as f64;
        let (_, ders_x) = sigma_values(self.sigma, &scores_x, b);
        ga -= &self.k_wx * (&ders_x / n);
        gb += ders_x.sum() / n;

        if self.pen.inv_u2 > 0.0 {
            ga -= (&self.k_ww * &a) * (2.0 * self.pen.inv_u2);
        }
        let mut out = ga.as_slice().to_vec();
        out.push(gb);
        out
    }
}

// ---------------------------------------------------------------------------
// Joint wrapper used by gradient checks
// ---------------------------------------------------------------------------

/// One of the family objectives, exposed as a deterministic function of the
/// joint parameter `[f-params; u-params; b]` for finite-difference checks.
pub struct JointObjective {
    inner: JointInner,
    dim_x: usize,
    dim_y: usize,
}

enum JointInner {
    Mean(MeanObjective),
    Cov(CovObjective),
    Repr(ReprObjective),
}

impl JointObjective {
    pub(crate) fn mean(obj: MeanObjective) -> Self {
        let d = obj.dim();
        JointObjective {
            dim_x: d,
            dim_y: d + 1,
            inner: JointInner::Mean(obj),
        }
    }

    pub(crate) fn cov(obj: CovObjective) -> Self {
        let d = obj.dim;
        JointObjective {
            dim_x: d * d,
            dim_y: d * d + 1,
            inner: JointInner::Cov(obj),
        }
    }

    pub(crate) fn repr(obj: ReprObjective) -> Self {
        let (nz, nw) = (obj.n_z(), obj.n_anchors());
        JointObjective {
            dim_x: nz,
            dim_y: nw + 1,
            inner: JointInner::Repr(obj),
        }
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn dim(&self) -> usize {
        self.dim_x + self.dim_y
    }

    /// Value and gradient in the joint parameter vector.
    pub fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.dim());
        let (x, y) = theta.split_at(self.dim_x);
        let (v, gx, gy) = match &self.inner {
            JointInner::Mean(o) => (o.value(x, y), o.grad_x(x, y), o.grad_y(x, y)),
            JointInner::Cov(o) => (o.value(x, y), o.grad_x(x, y), o.grad_y(x, y)),
            JointInner::Repr(o) => (o.value(x, y), o.grad_x(x, y), o.grad_y(x, y)),
        };
        let mut g = gx;
        g.extend_from_slice(&gy);
        (v, g)
    }
}

pub(crate) fn importance_draws(
    dim: usize,
    draws: usize,
    seed: u64,
) -> (Vec<Point>, DVector<f64>) {
    let mut stream = Stream::new(derive(seed, &[TAG_MODEL_DRAWS]));
    let z: Vec<Point> = (0..draws)
        .map(|_| DVector::from_vec(stream.standard_normal_vec(dim)))
        .collect();
    // Proposal equals the base measure, so its density w.r.t. mu is one.
    (z, DVector::zeros(draws))
}

pub(crate) fn build_repr_objective(
    kernel: &KernelSpec,
    data: &[Point],
    z: &[Point],
    log_q: &DVector<f64>,
    sigma: SigmaFunction,
    pen: Penalties,
    u_radius: f64,
) -> Result<ReprObjective> {
    if z.is_empty() {
        return Err(Error::InvalidInput(
            "representer family needs at least one proposal draw".into(),
        ));
    }
    let anchors: Vec<Point> = z.iter().chain(data.iter()).cloned().collect();
    Ok(ReprObjective {
        k_zz: kernel.gram(z)?,
        k_wz: kernel.cross_gram(&anchors, z)?,
        k_wx: kernel.cross_gram(&anchors, data)?,
        k_ww: kernel.gram(&anchors)?,
        log_q: log_q.clone(),
        sigma,
        pen,
        u_radius,
    })
}
