//! Generators for Huber-contaminated datasets: `(1 - eps) P + eps Q`.
//!
//! The two benchmark scenarios are
//!
//! * [`scenario_mean`]: `0.9 N_d(0, I) + 0.1 N_d(5 e, I)`,
//! * [`scenario_cov`]: `0.8 N_d(0, S) + 0.2 N_d(6 e, S)` with
//!   `S_ij = 2^-|i - j|`,
//!
//! where `e` is the all-ones vector.
//!
//! Sampling draws the core point for every row from one sub-stream and the
//! mixture indicator / outlier points from separate sub-streams, so the core
//! draws for a fixed seed are identical across contamination rates. That is
//! what makes "increasing eps cannot shrink the error" checks well-posed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::kernels::Point;
use crate::rng::{derive, Stream};
use crate::{Error, Result};

/// Stream tags used when deriving sub-streams from a dataset seed.
const TAG_INDICATOR: u64 = 0x01;
const TAG_CORE: u64 = 0x02;
const TAG_OUTLIER: u64 = 0x03;

/// One mixture component.
#[derive(Debug, Clone)]
pub enum Component {
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    },
    PointMass { point: DVector<f64> },
}

impl Component {
    pub fn std_gaussian(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Component::Gaussian {
            mean,
            covariance: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Component::Gaussian { mean, .. } => mean.len(),
            Component::PointMass { point } => point.len(),
        }
    }
}

/// Prepared sampler for a component (covariance factored once).
enum ComponentSampler {
    Gaussian { mean: DVector<f64>, l: DMatrix<f64> },
    PointMass { point: DVector<f64> },
}

impl ComponentSampler {
    fn new(c: &Component) -> Result<Self> {
        Ok(match c {
            Component::Gaussian { mean, covariance } => {
                let chol = Cholesky::new(covariance.clone()).ok_or_else(|| {
                    Error::InvalidInput("component covariance is not positive definite".into())
                })?;
                ComponentSampler::Gaussian {
                    mean: mean.clone(),
                    l: chol.l(),
                }
            }
            Component::PointMass { point } => ComponentSampler::PointMass {
                point: point.clone(),
            },
        })
    }

    fn sample(&self, stream: &mut Stream) -> Point {
        match self {
            ComponentSampler::Gaussian { mean, l } => {
                let z = DVector::from_vec(stream.standard_normal_vec(mean.len()));
                mean + l * z
            }
            ComponentSampler::PointMass { point } => point.clone(),
        }
    }
}

/// How outlier rows are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// Each row is an outlier independently with probability `eps`.
    Bernoulli,
    /// Exactly `round(eps * n)` outlier rows at random positions.
    ExactCount,
}

#[derive(Debug, Clone)]
pub struct ContaminationSpec {
    pub eps: f64,
    pub core: Component,
    pub outlier: Component,
    pub mixing: Mixing,
}

impl ContaminationSpec {
    pub fn new(eps: f64, core: Component, outlier: Component, mixing: Mixing) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidInput(format!(
                "contamination rate must lie in [0, 1], got {eps}"
            )));
        }
        if core.dim() != outlier.dim() {
            return Err(Error::DimensionMismatch {
                expected: core.dim(),
                got: outlier.dim(),
            });
        }
        Ok(ContaminationSpec {
            eps,
            core,
            outlier,
            mixing,
        })
    }

    pub fn dim(&self) -> usize {
        self.core.dim()
    }

    /// Mean of the core component.
    pub fn core_mean(&self) -> DVector<f64> {
        match &self.core {
            Component::Gaussian { mean, .. } => mean.clone(),
            Component::PointMass { point } => point.clone(),
        }
    }

    /// Covariance of the core component (zero for a point mass).
    pub fn core_covariance(&self) -> DMatrix<f64> {
        match &self.core {
            Component::Gaussian { covariance, .. } => covariance.clone(),
            Component::PointMass { point } => DMatrix::zeros(point.len(), point.len()),
        }
    }

    /// Draw `n` rows; `labels[i]` marks outlier rows. Labels are diagnostics
    /// only — estimators never see them.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Vec<Point>, Vec<bool>)> {
        let core = ComponentSampler::new(&self.core)?;
        let outlier = ComponentSampler::new(&self.outlier)?;
        let mut indicator = Stream::new(derive(seed, &[TAG_INDICATOR]));
        let mut core_stream = Stream::new(derive(seed, &[TAG_CORE]));
        let mut outlier_stream = Stream::new(derive(seed, &[TAG_OUTLIER]));

        let labels: Vec<bool> = match self.mixing {
            Mixing::Bernoulli => (0..n).map(|_| indicator.uniform() < self.eps).collect(),
            Mixing::ExactCount => {
                let count = (self.eps * n as f64).round() as usize;
                let perm = indicator.permutation(n);
                let mut l = vec![false; n];
                for &i in perm.iter().take(count.min(n)) {
                    l[i] = true;
                }
                l
            }
        };

        let mut data = Vec::with_capacity(n);
        for &is_outlier in &labels {
            // Core draw always consumed so the core stream is identical
            // across contamination rates.
            let core_point = core.sample(&mut core_stream);
            if is_outlier {
                data.push(outlier.sample(&mut outlier_stream));
            } else {
                data.push(core_point);
            }
        }
        Ok((data, labels))
    }
}

/// Mean-shift benchmark scenario: `0.9 N_d(0, I) + 0.1 N_d(5 e, I)`.
pub fn scenario_mean(d: usize) -> ContaminationSpec {
    ContaminationSpec::new(
        0.1,
        Component::std_gaussian(DVector::zeros(d)),
        Component::std_gaussian(DVector::from_element(d, 5.0)),
        Mixing::Bernoulli,
    )
    .expect("static scenario is valid")
}

/// Covariance benchmark scenario: `0.8 N_d(0, S) + 0.2 N_d(6 e, S)` with
/// `S_ij = 2^-|i - j|`.
pub fn scenario_cov(d: usize) -> ContaminationSpec {
    let sigma = banded_covariance(d);
    ContaminationSpec::new(
        0.2,
        Component::Gaussian {
            mean: DVector::zeros(d),
            covariance: sigma.clone(),
        },
        Component::Gaussian {
            mean: DVector::from_element(d, 6.0),
            covariance: sigma,
        },
        Mixing::Bernoulli,
    )
    .expect("static scenario is valid")
}

/// `S_ij = 2^-|i - j|`.
pub fn banded_covariance(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// Clean-data scenario: `N_d(0, I)` with `eps = 0`.
pub fn scenario_clean(d: usize) -> ContaminationSpec {
    ContaminationSpec::new(
        0.0,
        Component::std_gaussian(DVector::zeros(d)),
        Component::std_gaussian(DVector::from_element(d, 5.0)),
        Mixing::Bernoulli,
    )
    .expect("static scenario is valid")
}
