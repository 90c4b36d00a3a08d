//! Kernel functions and RKHS vector arithmetic.
//!
//! Three kernels are supported on `R^d`:
//!
//! * `Linear`: `k(x, z) = x . z`, RKHS = linear functions `x -> v . x` with
//!   `<f, g> = v_f . v_g`;
//! * `Quadratic`: `k(x, z) = (x . z)^2`, RKHS = quadratic forms
//!   `x -> x' F x` with symmetric `F` and `<f, g> = tr(F' G)`;
//! * `Rbf`: `k(x, z) = exp(-|x - z|^2 / (2 bw^2))`, a universal kernel whose
//!   elements are kept in representer form `f = sum_j c_j k(a_j, .)`.
//!
//! Representer functions over the finite-dimensional kernels are collapsed
//! eagerly to their explicit form (`v = sum c_j a_j`, `F = sum c_j a_j a_j'`)
//! so that evaluation is O(d) instead of O(#anchors * d).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A sample point in `R^d`.
pub type Point = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    Linear,
    Quadratic,
    Rbf { bandwidth: f64 },
}

/// A kernel together with the ambient data dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dimension: usize,
}

impl KernelSpec {
    pub fn linear(dimension: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            dimension,
        }
    }

    pub fn quadratic(dimension: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Quadratic,
            dimension,
        }
    }

    /// Gaussian RBF kernel; `bandwidth` must be positive.
    pub fn rbf(dimension: usize, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidInput(format!(
                "rbf bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec {
            kind: KernelKind::Rbf { bandwidth },
            dimension,
        })
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluate `k(x, z)`.
    pub fn eval(&self, x: &Point, z: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(z)?;
        Ok(self.eval_unchecked(x, z))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &Point, z: &Point) -> f64 {
        match self.kind {
            KernelKind::Linear => x.dot(z),
            KernelKind::Quadratic => {
                let d = x.dot(z);
                d * d
            }
            KernelKind::Rbf { bandwidth } => {
                let mut sq = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - z[i];
                    sq += d * d;
                }
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Gram matrix `K[i, j] = k(points[i], points[j])`.
    pub fn gram(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        for p in points {
            self.check_point(p)?;
        }
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval_unchecked(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-Gram matrix `K[i, j] = k(rows[i], cols[j])`.
    pub fn cross_gram(&self, rows: &[Point], cols: &[Point]) -> Result<DMatrix<f64>> {
        for p in rows.iter().chain(cols.iter()) {
            self.check_point(p)?;
        }
        let mut k = DMatrix::zeros(rows.len(), cols.len());
        for i in 0..rows.len() {
            for j in 0..cols.len() {
                k[(i, j)] = self.eval_unchecked(&rows[i], &cols[j]);
            }
        }
        Ok(k)
    }
}

/// How an RKHS element is stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    /// Linear kernel: `f(x) = v . x`.
    ExplicitVector(DVector<f64>),
    /// Quadratic kernel: `f(x) = x' F x` with `F` symmetric.
    ExplicitMatrix(DMatrix<f64>),
    /// `f = sum_j coefficients[j] * k(anchors[j], .)`.
    Representer {
        anchors: Vec<Point>,
        coefficients: DVector<f64>,
    },
}

/// An element of the RKHS induced by a [`KernelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    repr: Representation,
    kernel: KernelSpec,
}

/// Relative symmetry tolerance accepted when constructing explicit matrices.
const SYMMETRY_RTOL: f64 = 1e-12;

impl RkhsFunction {
    /// Linear-kernel function `x -> v . x`.
    pub fn from_vector(v: DVector<f64>) -> Self {
        let kernel = KernelSpec::linear(v.len());
        RkhsFunction {
            repr: Representation::ExplicitVector(v),
            kernel,
        }
    }

    /// Quadratic-kernel function `x -> x' F x`; `F` must be symmetric.
    pub fn from_matrix(f: DMatrix<f64>) -> Result<Self> {
        if f.nrows() != f.ncols() {
            return Err(Error::InvalidInput(format!(
                "explicit matrix must be square, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        let scale = f.norm().max(1.0);
        for i in 0..f.nrows() {
            for j in (i + 1)..f.ncols() {
                if (f[(i, j)] - f[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "explicit matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let kernel = KernelSpec::quadratic(f.nrows());
        Ok(RkhsFunction {
            repr: Representation::ExplicitMatrix(f),
            kernel,
        })
    }

    /// Representer-form function over `anchors`. Collapses to explicit form
    /// for the Linear and Quadratic kernels.
    pub fn from_representer(
        kernel: KernelSpec,
        anchors: Vec<Point>,
        coefficients: DVector<f64>,
    ) -> Result<Self> {
        if anchors.len() != coefficients.len() {
            return Err(Error::InvalidInput(format!(
                "representer has {} anchors but {} coefficients",
                anchors.len(),
                coefficients.len()
            )));
        }
        for a in &anchors {
            if a.len() != kernel.dimension {
                return Err(Error::DimensionMismatch {
                    expected: kernel.dimension,
                    got: a.len(),
                });
            }
        }
        let d = kernel.dimension;
        match kernel.kind {
            KernelKind::Linear => {
                let mut v = DVector::zeros(d);
                for (a, &c) in anchors.iter().zip(coefficients.iter()) {
                    v.axpy(c, a, 1.0);
                }
                Ok(RkhsFunction {
                    repr: Representation::ExplicitVector(v),
                    kernel,
                })
            }
            KernelKind::Quadratic => {
                let mut f = DMatrix::zeros(d, d);
                for (a, &c) in anchors.iter().zip(coefficients.iter()) {
                    // F += c * a a'
                    f.ger(c, a, a, 1.0);
                }
                Ok(RkhsFunction {
                    repr: Representation::ExplicitMatrix(f),
                    kernel,
                })
            }
            KernelKind::Rbf { .. } => Ok(RkhsFunction {
                repr: Representation::Representer {
                    anchors,
                    coefficients,
                },
                kernel,
            }),
        }
    }

    /// The zero function of the given kernel.
    pub fn zero(kernel: KernelSpec) -> Self {
        match kernel.kind {
            KernelKind::Linear => RkhsFunction {
                repr: Representation::ExplicitVector(DVector::zeros(kernel.dimension)),
                kernel,
            },
            KernelKind::Quadratic => RkhsFunction {
                repr: Representation::ExplicitMatrix(DMatrix::zeros(
                    kernel.dimension,
                    kernel.dimension,
                )),
                kernel,
            },
            KernelKind::Rbf { .. } => RkhsFunction {
                repr: Representation::Representer {
                    anchors: Vec::new(),
                    coefficients: DVector::zeros(0),
                },
                kernel,
            },
        }
    }

    /// The kernel section `k(x, .)`, i.e. the representer of evaluation at `x`.
    pub fn section(kernel: KernelSpec, x: Point) -> Result<Self> {
        RkhsFunction::from_representer(kernel, vec![x], DVector::from_element(1, 1.0))
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    /// Evaluate `f(x)`.
    pub fn eval(&self, x: &Point) -> Result<f64> {
        self.kernel.check_point(x)?;
        Ok(match &self.repr {
            Representation::ExplicitVector(v) => v.dot(x),
            Representation::ExplicitMatrix(f) => quad_form(f, x),
            Representation::Representer {
                anchors,
                coefficients,
            } => anchors
                .iter()
                .zip(coefficients.iter())
                .map(|(a, &c)| c * self.kernel.eval_unchecked(a, x))
                .sum(),
        })
    }

    /// RKHS inner product. Both functions must share the same kernel spec.
    pub fn inner(&self, other: &RkhsFunction) -> Result<f64> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch(format!(
                "{:?} vs {:?}",
                self.kernel, other.kernel
            )));
        }
        match (&self.repr, &other.repr) {
            (Representation::ExplicitVector(a), Representation::ExplicitVector(b)) => {
                Ok(a.dot(b))
            }
            (Representation::ExplicitMatrix(a), Representation::ExplicitMatrix(b)) => {
                // tr(A' B)
                Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
            }
            (
                Representation::Representer {
                    anchors: aa,
                    coefficients: ca,
                },
                Representation::Representer {
                    anchors: ab,
                    coefficients: cb,
                },
            ) => {
                let mut acc = 0.0;
                for (ai, &ci) in aa.iter().zip(ca.iter()) {
                    for (bj, &cj) in ab.iter().zip(cb.iter()) {
                        acc += ci * cj * self.kernel.eval_unchecked(ai, bj);
                    }
                }
                Ok(acc)
            }
            // Eager collapse makes mixed forms impossible for Linear/Quadratic,
            // and Rbf functions are always representers.
            _ => Err(Error::KernelMismatch(
                "mixed explicit/representer forms".into(),
            )),
        }
    }

    /// RKHS norm `sqrt(<f, f>)`.
    pub fn norm(&self) -> f64 {
        self.inner(self).expect("inner(self, self) cannot mismatch").max(0.0).sqrt()
    }

    /// Project onto the ball `{ |f| <= radius }`: returns `f` unchanged when
    /// inside, otherwise scales it to the boundary.
    pub fn project_ball(&self, radius: f64) -> Result<RkhsFunction> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let n = self.norm();
        if n <= radius {
            return Ok(self.clone());
        }
        Ok(self.scaled(radius / n))
    }

    /// `c * f`.
    pub fn scaled(&self, c: f64) -> RkhsFunction {
        let repr = match &self.repr {
            Representation::ExplicitVector(v) => Representation::ExplicitVector(v * c),
            Representation::ExplicitMatrix(f) => Representation::ExplicitMatrix(f * c),
            Representation::Representer {
                anchors,
                coefficients,
            } => Representation::Representer {
                anchors: anchors.clone(),
                coefficients: coefficients * c,
            },
        };
        RkhsFunction {
            repr,
            kernel: self.kernel,
        }
    }

    /// `f - g` (same kernel spec required).
    pub fn sub(&self, other: &RkhsFunction) -> Result<RkhsFunction> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch(format!(
                "{:?} vs {:?}",
                self.kernel, other.kernel
            )));
        }
        let repr = match (&self.repr, &other.repr) {
            (Representation::ExplicitVector(a), Representation::ExplicitVector(b)) => {
                Representation::ExplicitVector(a - b)
            }
            (Representation::ExplicitMatrix(a), Representation::ExplicitMatrix(b)) => {
                Representation::ExplicitMatrix(a - b)
            }
            (
                Representation::Representer {
                    anchors: aa,
                    coefficients: ca,
                },
                Representation::Representer {
                    anchors: ab,
                    coefficients: cb,
                },
            ) => {
                let mut anchors = aa.clone();
                anchors.extend(ab.iter().cloned());
                let mut coeff = Vec::with_capacity(ca.len() + cb.len());
                coeff.extend(ca.iter().copied());
                coeff.extend(cb.iter().map(|c| -c));
                Representation::Representer {
                    anchors,
                    coefficients: DVector::from_vec(coeff),
                }
            }
            _ => {
                return Err(Error::KernelMismatch(
                    "mixed explicit/representer forms".into(),
                ))
            }
        };
        Ok(RkhsFunction {
            repr,
            kernel: self.kernel,
        })
    }
}

#[inline]
pub(crate) fn quad_form(f: &DMatrix<f64>, x: &Point) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for j in 0..d {
        let xj = x[j];
        let col = f.column(j);
        let mut s = 0.0;
        for i in 0..d {
            s += col[i] * x[i];
        }
        acc += s * xj;
    }
    acc
}
