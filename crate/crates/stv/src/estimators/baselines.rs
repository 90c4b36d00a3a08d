//! Classical estimators used as benchmark baselines.

use nalgebra::{DMatrix, DVector};

use crate::kernels::Point;
use crate::{Error, Result};

/// Median of a slice (average of the two middle order statistics for even
/// lengths). The slice is copied and sorted.
pub(crate) fn median(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation around the median (unscaled).
pub(crate) fn mad(xs: &[f64]) -> f64 {
    let m = median(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

fn check_rows(data: &[Point]) -> Result<usize> {
    let d = data
        .first()
        .ok_or_else(|| Error::InvalidInput("empty data".into()))?
        .len();
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    Ok(d)
}

/// Per-coordinate median.
pub fn componentwise_median(data: &[Point]) -> Result<DVector<f64>> {
    let d = check_rows(data)?;
    let mut out = DVector::zeros(d);
    let mut column = Vec::with_capacity(data.len());
    for j in 0..d {
        column.clear();
        column.extend(data.iter().map(|x| x[j]));
        out[j] = median(&column);
    }
    Ok(out)
}

/// Robust covariance from Kendall's rank correlation.
///
/// Pairwise tau by O(n^2) concordance counts (ties count as neither),
/// correlation `sin(pi tau / 2)`, scales `1.4826 * MAD` per coordinate,
/// assembled as `D R D` and symmetrized.
pub fn kendall_cov(data: &[Point]) -> Result<DMatrix<f64>> {
    let d = check_rows(data)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "kendall covariance needs n >= 2, got {n}"
        )));
    }

    let mut scales = DVector::zeros(d);
    let mut column = Vec::with_capacity(n);
    for j in 0..d {
        column.clear();
        column.extend(data.iter().map(|x| x[j]));
        let m = mad(&column);
        if m == 0.0 {
            return Err(Error::DegenerateScale { coordinate: j });
        }
        scales[j] = 1.4826 * m;
    }

    let pairs = (n * (n - 1) / 2) as f64;
    let mut corr = DMatrix::identity(d, d);
    for a in 0..d {
        for b in (a + 1)..d {
            let mut concordant = 0i64;
            let mut discordant = 0i64;
            for i in 0..n {
                for k in (i + 1)..n {
                    let dx = data[i][a] - data[k][a];
                    let dy = data[i][b] - data[k][b];
                    let s = dx * dy;
                    if s > 0.0 {
                        concordant += 1;
                    } else if s < 0.0 {
                        discordant += 1;
                    }
                }
            }
            let tau = (concordant - discordant) as f64 / pairs;
            let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
            corr[(a, b)] = rho;
            corr[(b, a)] = rho;
        }
    }

    let dmat = DMatrix::from_diagonal(&scales);
    let cov = &dmat * corr * &dmat;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Arithmetic mean and unbiased sample covariance (divisor `n - 1`).
pub fn sample_mean_cov(data: &[Point]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = check_rows(data)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sample covariance needs n >= 2, got {n}"
        )));
    }
    let mut mean = DVector::zeros(d);
    for x in data {
        mean += x;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        let c = x - &mean;
        cov.ger(1.0 / (n as f64 - 1.0), &c, &c, 1.0);
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contamination::scenario_mean;
    use crate::rng::Stream;

    fn rows(rs: &[&[f64]]) -> Vec<Point> {
        rs.iter().map(|r| DVector::from_row_slice(r)).collect()
    }

    #[test]
    fn median_examples() {
        let data = rows(&[&[1.0, 2.0], &[3.0, 4.0], &[100.0, 5.0]]);
        assert_eq!(
            componentwise_median(&data).unwrap(),
            DVector::from_row_slice(&[3.0, 4.0])
        );
        let even = rows(&[&[1.0], &[3.0]]);
        assert_eq!(componentwise_median(&even).unwrap()[0], 2.0);
        assert!(componentwise_median(&[]).is_err());
    }

    #[test]
    fn median_error_on_contaminated_scenario() {
        // d = 10, n = 1000 mean-shift scenario: error near 0.44.
        let spec = scenario_mean(10);
        let mut errs = Vec::new();
        for trial in 0..5 {
            let (data, _) = spec.sample(1000, 1000 + trial).unwrap();
            errs.push(componentwise_median(&data).unwrap().norm());
        }
        let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(
            (mean_err - 0.44).abs() < 0.15,
            "componentwise median error {mean_err}"
        );
    }

    #[test]
    fn kendall_perfect_monotone_pair() {
        // Coordinates (x, x^3) are perfectly concordant: tau = 1, rho = 1.
        let mut s = Stream::new(3);
        let data: Vec<Point> = (0..100)
            .map(|_| {
                let x = s.standard_normal();
                DVector::from_row_slice(&[x, x * x * x])
            })
            .collect();
        let cov = kendall_cov(&data).unwrap();
        let rho = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        assert!((rho - 1.0).abs() < 1e-12, "rho = {rho}");
    }

    #[test]
    fn kendall_independent_off_diagonals_small() {
        let mut s = Stream::new(5);
        let data: Vec<Point> = (0..10_000)
            .map(|_| DVector::from_vec(s.standard_normal_vec(2)))
            .collect();
        let cov = kendall_cov(&data).unwrap();
        let rho = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }

    #[test]
    fn kendall_degenerate_scale_detected() {
        let data = rows(&[&[1.0, 2.0], &[1.0, 3.0], &[1.0, 4.0]]);
        assert!(matches!(
            kendall_cov(&data),
            Err(Error::DegenerateScale { coordinate: 0 })
        ));
    }

    #[test]
    fn sample_mean_cov_examples() {
        let data = rows(&[&[0.0], &[2.0]]);
        let (mean, cov) = sample_mean_cov(&data).unwrap();
        assert_eq!(mean[0], 1.0);
        assert_eq!(cov[(0, 0)], 2.0);
        assert!(sample_mean_cov(&rows(&[&[1.0]])).is_err());
    }

    #[test]
    fn sample_mean_is_pulled_by_contamination() {
        // Mixture algebra: mean error approaches eps * 5 * sqrt(d).
        let spec = scenario_mean(10);
        let (data, _) = spec.sample(20_000, 9).unwrap();
        let (mean, _) = sample_mean_cov(&data).unwrap();
        let expected = 0.1 * 5.0 * (10.0f64).sqrt();
        assert!((mean.norm() - expected).abs() < 0.15, "err {}", mean.norm());
    }

    #[test]
    fn sample_cov_concentrates_when_clean() {
        let mut s = Stream::new(11);
        let data: Vec<Point> = (0..10_000)
            .map(|_| DVector::from_vec(s.standard_normal_vec(3)))
            .collect();
        let (_, cov) = sample_mean_cov(&data).unwrap();
        assert!((cov - DMatrix::identity(3, 3)).norm() < 0.1);
    }
}
