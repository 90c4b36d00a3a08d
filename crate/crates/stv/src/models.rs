//! Kernel exponential family `p_f = exp(f - A(f)) dmu`.
//!
//! Two submodels admit exact log-partitions, exact samplers, and closed-form
//! Gaussian parameters:
//!
//! * **mean model** — linear kernel over a standard normal base measure,
//!   `f(x) = v . x`, giving `N_d(v, I)` with `A(f) = |v|^2 / 2`;
//! * **covariance model** — quadratic kernel over the same base with
//!   `f(x) = -x' F x / 2` and `I + F` positive definite, giving
//!   `N_d(0, (I + F)^{-1})` with `A(f) = -log det(I + F) / 2`.
//!
//! Everything else goes through [`KernelExpFamilyModel::mc_log_partition`],
//! an importance-sampling estimate of `A(f)` from a proposal distribution.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::kernels::{KernelKind, Point, Representation, RkhsFunction};
use crate::rng::Stream;
use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453; // ln(2 pi)

type SamplerFn = dyn Fn(&mut Stream) -> Point + Send + Sync;
type LogDensityFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// Base measure `mu` of the exponential family.
#[derive(Clone)]
pub enum BaseMeasure {
    /// Standard normal probability measure on `R^d`.
    StdNormal { dim: usize },
    /// Uniform probability measure on a box.
    UniformBox {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// User-supplied measure: a sampler plus a log-density w.r.t. Lebesgue.
    /// `normalized` records whether the density integrates to one.
    Custom {
        dim: usize,
        sampler: Arc<SamplerFn>,
        log_density: Arc<LogDensityFn>,
        normalized: bool,
    },
}

impl fmt::Debug for BaseMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseMeasure::StdNormal { dim } => write!(f, "StdNormal {{ dim: {dim} }}"),
            BaseMeasure::UniformBox { lower, upper } => write!(
                f,
                "UniformBox {{ dim: {}, lower: {:?}, upper: {:?} }}",
                lower.len(),
                lower.as_slice(),
                upper.as_slice()
            ),
            BaseMeasure::Custom { dim, normalized, .. } => {
                write!(f, "Custom {{ dim: {dim}, normalized: {normalized} }}")
            }
        }
    }
}

impl BaseMeasure {
    pub fn std_normal(dim: usize) -> Self {
        BaseMeasure::StdNormal { dim }
    }

    pub fn uniform_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l >= u) {
            return Err(Error::InvalidInput("uniform box has empty sides".into()));
        }
        Ok(BaseMeasure::UniformBox { lower, upper })
    }

    pub fn custom(
        dim: usize,
        sampler: Arc<SamplerFn>,
        log_density: Arc<LogDensityFn>,
        normalized: bool,
    ) -> Self {
        BaseMeasure::Custom {
            dim,
            sampler,
            log_density,
            normalized,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseMeasure::StdNormal { dim } => *dim,
            BaseMeasure::UniformBox { lower, .. } => lower.len(),
            BaseMeasure::Custom { dim, .. } => *dim,
        }
    }

    /// Whether the measure is known to integrate to one.
    pub fn normalized(&self) -> bool {
        match self {
            BaseMeasure::StdNormal { .. } | BaseMeasure::UniformBox { .. } => true,
            BaseMeasure::Custom { normalized, .. } => *normalized,
        }
    }

    /// Log density w.r.t. Lebesgue measure.
    pub fn log_density_lebesgue(&self, x: &Point) -> f64 {
        match self {
            BaseMeasure::StdNormal { dim } => {
                -0.5 * x.norm_squared() - 0.5 * (*dim as f64) * LN_2PI
            }
            BaseMeasure::UniformBox { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .all(|(v, (l, u))| v >= l && v <= u);
                if inside {
                    -lower
                        .iter()
                        .zip(upper.iter())
                        .map(|(l, u)| (u - l).ln())
                        .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
            BaseMeasure::Custom { log_density, .. } => log_density(x),
        }
    }

    /// One draw from the measure.
    pub fn sample(&self, stream: &mut Stream) -> Point {
        match self {
            BaseMeasure::StdNormal { dim } => DVector::from_vec(stream.standard_normal_vec(*dim)),
            BaseMeasure::UniformBox { lower, upper } => DVector::from_fn(lower.len(), |i, _| {
                stream.uniform_in(lower[i], upper[i])
            }),
            BaseMeasure::Custom { sampler, .. } => sampler(stream),
        }
    }
}

/// Cached value of the log-partition `A(f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogPartition {
    Exact(f64),
    MonteCarlo { estimate: f64, stderr: f64 },
}

impl LogPartition {
    pub fn value(&self) -> f64 {
        match self {
            LogPartition::Exact(v) => *v,
            LogPartition::MonteCarlo { estimate, .. } => *estimate,
        }
    }
}

/// Gaussian submodels that admit exact computations.
#[derive(Debug, Clone)]
pub enum GaussianSubmodel {
    /// `N_d(v, I)` for `f(x) = v . x`.
    Mean { v: DVector<f64> },
    /// `N_d(0, (I + F)^{-1})` for `f(x) = -x' F x / 2`.
    Covariance { f_mat: DMatrix<f64> },
}

/// A density `p_f = exp(f - A(f)) dmu`. Immutable after construction; the
/// log-partition cache is filled at most once.
#[derive(Debug)]
pub struct KernelExpFamilyModel {
    base: BaseMeasure,
    f: RkhsFunction,
    log_z: OnceLock<LogPartition>,
}

impl Clone for KernelExpFamilyModel {
    fn clone(&self) -> Self {
        let log_z = OnceLock::new();
        if let Some(v) = self.log_z.get() {
            let _ = log_z.set(*v);
        }
        KernelExpFamilyModel {
            base: self.base.clone(),
            f: self.f.clone(),
            log_z,
        }
    }
}

impl KernelExpFamilyModel {
    pub fn new(base: BaseMeasure, f: RkhsFunction) -> Result<Self> {
        if base.dim() != f.kernel().dimension {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: f.kernel().dimension,
            });
        }
        Ok(KernelExpFamilyModel {
            base,
            f,
            log_z: OnceLock::new(),
        })
    }

    /// The Gaussian mean model `N_d(v, I)`.
    pub fn gaussian_mean(v: DVector<f64>) -> Self {
        let base = BaseMeasure::std_normal(v.len());
        let f = RkhsFunction::from_vector(v);
        KernelExpFamilyModel {
            base,
            f,
            log_z: OnceLock::new(),
        }
    }

    /// The Gaussian covariance model `N_d(0, (I + F)^{-1})`; stores the
    /// natural parameter `f(x) = -x' F x / 2`.
    pub fn gaussian_covariance(f_mat: DMatrix<f64>) -> Result<Self> {
        let d = f_mat.nrows();
        let natural = RkhsFunction::from_matrix(f_mat * (-0.5))?;
        Ok(KernelExpFamilyModel {
            base: BaseMeasure::std_normal(d),
            f: natural,
            log_z: OnceLock::new(),
        })
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    pub fn natural_parameter(&self) -> &RkhsFunction {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Detect whether this model is one of the exact Gaussian submodels.
    pub fn gaussian_submodel(&self) -> Option<GaussianSubmodel> {
        if !matches!(self.base, BaseMeasure::StdNormal { .. }) {
            return None;
        }
        match (self.f.kernel().kind, self.f.representation()) {
            (KernelKind::Linear, Representation::ExplicitVector(v)) => {
                Some(GaussianSubmodel::Mean { v: v.clone() })
            }
            (KernelKind::Quadratic, Representation::ExplicitMatrix(m)) => {
                // f(x) = x' M x = -x' F x / 2  =>  F = -2 M
                Some(GaussianSubmodel::Covariance { f_mat: m * -2.0 })
            }
            _ => None,
        }
    }

    /// Exact log-partition `A(f)` for the Gaussian submodels.
    ///
    /// Mean model: `|v|^2 / 2`. Covariance model: `-log det(I + F) / 2`,
    /// requiring `I + F` positive definite. Other models must use
    /// [`Self::mc_log_partition`].
    pub fn log_partition(&self) -> Result<f64> {
        if let Some(LogPartition::Exact(v)) = self.log_z.get() {
            return Ok(*v);
        }
        let value = match self.gaussian_submodel() {
            Some(GaussianSubmodel::Mean { v }) => v.norm_squared() / 2.0,
            Some(GaussianSubmodel::Covariance { f_mat }) => {
                let d = f_mat.nrows();
                let ipf = DMatrix::identity(d, d) + &f_mat;
                let chol = Cholesky::new(ipf).ok_or_else(|| {
                    Error::Domain("I + F is not positive definite".into())
                })?;
                -chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
            }
            None => {
                return Err(Error::Unsupported(
                    "no exact log-partition for this base/kernel combination; \
                     use mc_log_partition"
                        .into(),
                ))
            }
        };
        let _ = self.log_z.set(LogPartition::Exact(value));
        Ok(value)
    }

    /// Importance-sampling estimate of `A(f) = log int exp(f) dmu` from
    /// `ell` proposal draws, with a delta-method standard error.
    ///
    /// The estimator is `log( mean_j exp(f(Z_j)) * (dmu/dq)(Z_j) )` with
    /// `Z_j ~ q`.
    pub fn mc_log_partition(
        &self,
        proposal: &BaseMeasure,
        ell: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        if ell < 2 {
            return Err(Error::InvalidInput(format!(
                "mc_log_partition needs ell >= 2, got {ell}"
            )));
        }
        if proposal.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: proposal.dim(),
            });
        }
        let mut stream = Stream::new(seed);
        let mut log_w = Vec::with_capacity(ell);
        for j in 0..ell {
            let z = proposal.sample(&mut stream);
            let lw = self.f.eval(&z)? + self.base.log_density_lebesgue(&z)
                - proposal.log_density_lebesgue(&z);
            if !lw.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite importance weight at draw {j}: log w = {lw}, z = {:?}",
                    z.as_slice()
                )));
            }
            log_w.push(lw);
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / ell as f64;
        if mean <= 0.0 || !mean.is_finite() {
            return Err(Error::Numeric(
                "all importance weights vanished in mc_log_partition".into(),
            ));
        }
        let var = scaled.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (ell as f64 - 1.0);
        let estimate = max + mean.ln();
        let stderr = (var / ell as f64).sqrt() / mean;
        Ok((estimate, stderr))
    }

    /// Store a Monte-Carlo log-partition so that density evaluations work for
    /// models without an exact `A(f)`. No-op if a value is already cached.
    pub fn cache_mc_log_partition(&self, estimate: f64, stderr: f64) {
        let _ = self.log_z.set(LogPartition::MonteCarlo { estimate, stderr });
    }

    /// The cached log-partition, if any.
    pub fn cached_log_partition(&self) -> Option<LogPartition> {
        self.log_z.get().copied()
    }

    fn require_log_z(&self) -> Result<f64> {
        if let Ok(v) = self.log_partition() {
            return Ok(v);
        }
        match self.log_z.get() {
            Some(lp) => Ok(lp.value()),
            None => Err(Error::State(
                "log-partition unavailable: call mc_log_partition and cache the result first"
                    .into(),
            )),
        }
    }

    /// Log density w.r.t. the base measure: `f(x) - A(f)`.
    pub fn log_density(&self, x: &Point) -> Result<f64> {
        Ok(self.f.eval(x)? - self.require_log_z()?)
    }

    /// Log density w.r.t. Lebesgue measure.
    pub fn log_density_lebesgue(&self, x: &Point) -> Result<f64> {
        Ok(self.log_density(x)? + self.base.log_density_lebesgue(x))
    }

    /// Draw `n` exact samples. Only the Gaussian submodels admit exact
    /// sampling; everything else must go through importance sampling.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        let mut stream = Stream::new(seed);
        self.sample_with(n, &mut stream)
    }

    /// As [`Self::sample`] but drawing from a caller-owned stream.
    pub fn sample_with(&self, n: usize, stream: &mut Stream) -> Result<Vec<Point>> {
        match self.gaussian_submodel() {
            Some(GaussianSubmodel::Mean { v }) => Ok((0..n)
                .map(|_| {
                    let z = DVector::from_vec(stream.standard_normal_vec(v.len()));
                    &v + z
                })
                .collect()),
            Some(GaussianSubmodel::Covariance { f_mat }) => {
                let d = f_mat.nrows();
                let ipf = DMatrix::identity(d, d) + &f_mat;
                let chol = Cholesky::new(ipf).ok_or_else(|| {
                    Error::Domain("I + F is not positive definite".into())
                })?;
                let sigma = chol.inverse();
                let chol_sigma = Cholesky::new(sigma).ok_or_else(|| {
                    Error::Numeric("covariance lost positive definiteness".into())
                })?;
                let l = chol_sigma.l();
                Ok((0..n)
                    .map(|_| {
                        let z = DVector::from_vec(stream.standard_normal_vec(d));
                        &l * z
                    })
                    .collect())
            }
            None => Err(Error::Unsupported(
                "exact sampling is only available for Gaussian submodels".into(),
            )),
        }
    }

    /// Gaussian parameters `(mean, covariance)` of a Gaussian submodel.
    pub fn to_gaussian(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self.gaussian_submodel() {
            Some(GaussianSubmodel::Mean { v }) => {
                let d = v.len();
                Ok((v, DMatrix::identity(d, d)))
            }
            Some(GaussianSubmodel::Covariance { f_mat }) => {
                let d = f_mat.nrows();
                let ipf = DMatrix::identity(d, d) + &f_mat;
                let chol = Cholesky::new(ipf).ok_or_else(|| {
                    Error::Domain("I + F is not positive definite".into())
                })?;
                Ok((DVector::zeros(d), chol.inverse()))
            }
            None => Err(Error::Unsupported(
                "to_gaussian requires a Gaussian submodel".into(),
            )),
        }
    }
}
