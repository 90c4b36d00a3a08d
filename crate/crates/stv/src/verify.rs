//! Numeric checks of the theory the estimators rely on.
//!
//! Each check returns a [`PropertyResult`]; the CLI `verify` subcommand
//! prints one PASS/FAIL line per property and exits nonzero on any failure.
//! The same functions back the acceptance suite, so thresholds live here.

use nalgebra::DVector;

use crate::divergences::{
    decay_rate_check, log_grid, stv_gaussian_mean_1d, stv_gaussian_mean_step_grid,
    tv_gaussian_mean, SigmaFunction,
};
use crate::estimators::{
    importance_objective, ModelExpectation, ModelFamily, StvLearnConfig, Variant,
};
use crate::kernels::KernelSpec;
use crate::optim::finite_diff_check;
use crate::rng::{derive, Stream};
use crate::Result;

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        PropertyResult { name, pass, detail }
    }
}

/// Decay-rate bound of the sigmoid: grid-maximized
/// `sup_{t >= 1} sigma(-c log t)(t - 1) <= 1/c` for `c in {1.5, 2, 5, 10, 100}`.
pub fn check_decay_rate() -> Result<PropertyResult> {
    let grid = log_grid(1e6, 20_000);
    let mut worst_margin = f64::INFINITY;
    let mut detail = String::new();
    let mut pass = true;
    for c in [1.5, 2.0, 5.0, 10.0, 100.0] {
        let (sup, bound) = decay_rate_check(&SigmaFunction::Sigmoid, c, &grid)?;
        let margin = bound - sup;
        worst_margin = worst_margin.min(margin);
        if sup > bound {
            pass = false;
        }
        detail.push_str(&format!("c={c}: sup={sup:.6} bound={bound:.6}; "));
    }
    detail.push_str(&format!("worst margin {worst_margin:.6}"));
    Ok(PropertyResult::new("decay-rate-bound", pass, detail))
}

/// STV below TV with the sigmoid bias gap: on random 1-D Gaussian mean
/// pairs and `U in {2, 5, 10, 50} * |f - g|`,
/// `0 <= TV - STV <= |f - g| / U + slack` must hold in at least 95% of the
/// cases. The STV side is the deterministic quadrature witness.
pub fn check_bias_bound_sweep(seed: u64, pairs: usize, slack: f64) -> Result<PropertyResult> {
    let mut stream = Stream::new(derive(seed, &[0x51]));
    let mut total = 0usize;
    let mut ok = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let m1 = 2.0 * stream.standard_normal();
        let mut m2 = 2.0 * stream.standard_normal();
        if (m1 - m2).abs() < 1e-3 {
            m2 = m1 + 0.5; // keep the pair separated so U multiples are sane
        }
        let delta = (m1 - m2).abs();
        let tv = tv_gaussian_mean(
            &DVector::from_element(1, m1),
            &DVector::from_element(1, m2),
        )?;
        for mult in [2.0, 5.0, 10.0, 50.0] {
            let u = mult * delta;
            let stv = stv_gaussian_mean_1d(m1, m2, u)?;
            let gap = tv - stv;
            total += 1;
            let bound = delta / u + slack;
            if gap >= -1e-9 && gap <= bound {
                ok += 1;
            }
            worst = worst.max(gap - delta / u);
        }
    }
    let frac = ok as f64 / total as f64;
    Ok(PropertyResult::new(
        "stv-tv-bias-bound",
        frac >= 0.95,
        format!("{ok}/{total} cases inside the band; worst excess {worst:.4}"),
    ))
}

/// STV never exceeds TV (quadrature witness, deterministic).
pub fn check_stv_below_tv(seed: u64, pairs: usize) -> Result<PropertyResult> {
    let mut stream = Stream::new(derive(seed, &[0x52]));
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for _ in 0..pairs {
        let m1 = 2.0 * stream.standard_normal();
        let m2 = 2.0 * stream.standard_normal();
        let tv = tv_gaussian_mean(
            &DVector::from_element(1, m1),
            &DVector::from_element(1, m2),
        )?;
        let u = 5.0 * ((m1 - m2).abs() + 0.1);
        let stv = stv_gaussian_mean_1d(m1, m2, u)?;
        worst = worst.max(stv - tv);
        if stv > tv + 1e-9 {
            pass = false;
        }
    }
    Ok(PropertyResult::new(
        "stv-below-tv",
        pass,
        format!("max STV - TV = {worst:.2e} over {pairs} pairs"),
    ))
}

/// Step-witness brute force over (sign, bias grid) recovers the exact TV of
/// a 1-D Gaussian mean pair within `tol`.
pub fn check_step_witness_recovers_tv(
    seed: u64,
    pairs: usize,
    grid: usize,
    tol: f64,
) -> Result<PropertyResult> {
    let mut stream = Stream::new(derive(seed, &[0x53]));
    let mut worst = 0.0f64;
    let mut pass = true;
    for _ in 0..pairs {
        let m1 = 2.0 * stream.standard_normal();
        let m2 = 2.0 * stream.standard_normal();
        let tv = tv_gaussian_mean(
            &DVector::from_element(1, m1),
            &DVector::from_element(1, m2),
        )?;
        let grid_value = stv_gaussian_mean_step_grid(m1, m2, grid)?;
        let err = (grid_value - tv).abs();
        worst = worst.max(err);
        if err > tol {
            pass = false;
        }
    }
    Ok(PropertyResult::new(
        "step-witness-recovers-tv",
        pass,
        format!("max |grid - tv| = {worst:.2e} over {pairs} pairs"),
    ))
}

/// Finite-difference check of the full learner objective (model side,
/// witness side, and the softmax-weight path) at random points.
pub fn check_gradients(seed: u64, points: usize, tol: f64) -> Result<PropertyResult> {
    let mut stream = Stream::new(derive(seed, &[0x54]));
    let spec = crate::contamination::scenario_mean(2);
    let (data, _) = spec.sample(60, derive(seed, &[0x55]))?;

    let mut worst = 0.0f64;
    let families = [
        ModelFamily::GaussianMean { dim: 2 },
        ModelFamily::GaussianCovariance { dim: 2 },
        ModelFamily::GeneralKernel {
            kernel: KernelSpec::rbf(2, 1.0)?,
        },
    ];
    let variants = [
        Variant::HardConstraint,
        Variant::AdditiveReg,
        Variant::FullReg,
    ];
    let mut checked = 0usize;
    'outer: for rep in 0.. {
        for family in &families {
            for variant in variants {
                if checked >= points {
                    break 'outer;
                }
                let cfg = StvLearnConfig {
                    variant,
                    r: 5.0,
                    u_radius: 8.0,
                    sigma: SigmaFunction::Sigmoid,
                    model_expectation: ModelExpectation::ImportanceSampling { draws: 50 },
                    optimizer: crate::optim::GdaConfig::default(),
                };
                let obj = importance_objective(&data, family, &cfg, 50, derive(seed, &[rep]))?;
                let theta: Vec<f64> = (0..obj.dim())
                    .map(|_| 0.4 * stream.standard_normal())
                    .collect();
                let err = finite_diff_check(&|t: &[f64]| obj.value_grad(t), &theta, 1e-5)?;
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    Ok(PropertyResult::new(
        "gradient-finite-difference",
        worst < tol,
        format!("max relative error {worst:.2e} over {checked} random points"),
    ))
}

/// The full verification suite in a deterministic order.
pub fn run_all(seed: u64) -> Result<Vec<PropertyResult>> {
    Ok(vec![
        check_decay_rate()?,
        check_stv_below_tv(seed, 20)?,
        check_bias_bound_sweep(seed, 20, 0.02)?,
        check_step_witness_recovers_tv(seed, 10, 2001, 1e-3)?,
        check_gradients(seed, 20, 1e-4)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_properties_pass_on_reference_seed() {
        let results = run_all(1).unwrap();
        for r in &results {
            assert!(r.pass, "{} failed: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 5);
    }
}
