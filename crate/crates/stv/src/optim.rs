//! Projected gradient descent-ascent for smooth min-max objectives.
//!
//! The solver alternates `inner_steps_per_outer` ascent steps on `y` with a
//! single descent step on `x`, projecting each block after every update.
//! The inner-first ordering matters: the outer gradient is only meaningful
//! against a near-best-response witness, and simultaneous updates oscillate
//! on bilinear structure.
//!
//! Runs are fully deterministic: the engine itself draws no randomness, and
//! stochastic objectives refresh their samples in
//! [`MinimaxObjective::begin_outer_step`] from their own seeded streams.
//! Restart fan-out is left to callers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decay {
    None,
    /// Constant for `warmup` steps, then `base * sqrt(warmup / t)`.
    InvSqrt { warmup: usize },
}

impl Decay {
    fn factor(&self, t: usize) -> f64 {
        match self {
            Decay::None => 1.0,
            Decay::InvSqrt { warmup } => {
                let w = (*warmup).max(1);
                if t <= w {
                    1.0
                } else {
                    (w as f64 / t as f64).sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdaConfig {
    pub outer_steps: usize,
    pub inner_steps_per_outer: usize,
    pub step_outer: f64,
    pub step_inner: f64,
    pub decay: Decay,
    pub restarts: usize,
    /// Early stop once both projected-step norms stay below `tol` for ten
    /// consecutive outer steps; `0.0` disables it.
    pub tol: f64,
    pub max_wall_ms: Option<u64>,
    /// Window length for the smoothed objective used to pick the returned
    /// checkpoint; `1` means raw values.
    pub checkpoint_window: usize,
    /// When positive, `x_final` is replaced by the average of the x-iterates
    /// over the trailing fraction of the run (ergodic averaging; saddle
    /// dynamics cycle, and the cycle mean is the equilibrium).
    pub tail_average: f64,
}

impl Default for GdaConfig {
    fn default() -> Self {
        GdaConfig {
            outer_steps: 2000,
            inner_steps_per_outer: 5,
            step_outer: 0.02,
            step_inner: 0.05,
            decay: Decay::InvSqrt { warmup: 200 },
            restarts: 4,
            tol: 0.0,
            max_wall_ms: None,
            checkpoint_window: 1,
            tail_average: 0.0,
        }
    }
}

impl GdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_steps == 0 {
            return Err(Error::InvalidInput("outer_steps must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidInput("restarts must be >= 1".into()));
        }
        if !(self.step_outer > 0.0) || !(self.step_inner > 0.0) {
            return Err(Error::InvalidInput("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A differentiable min-max objective `(x, y) -> value` with block gradients.
pub trait MinimaxObjective {
    fn value(&self, x: &[f64], y: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    /// Called once at the start of every outer step; stochastic objectives
    /// redraw their model samples here.
    fn begin_outer_step(&mut self, _step: usize, _x: &[f64]) {}

    /// Optional fresh witness proposals for the current `(x, y)`. The engine
    /// evaluates each candidate and replaces the warm-started witness only
    /// when a candidate scores strictly better; this lets the inner ascent
    /// escape a dead local basin without giving up warm starts.
    fn witness_candidates(&self, _step: usize, _x: &[f64], _y: &[f64]) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

/// In-place projection of one parameter block.
pub type Projection<'a> = &'a dyn Fn(&mut [f64]);
/// Feasibility test for candidate x-iterates (step-halving on rejection).
pub type Feasibility<'a> = &'a dyn Fn(&[f64]) -> bool;

#[derive(Debug, Clone)]
pub struct GdaOutcome {
    /// Iterate at the best (window-smoothed) recorded objective.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Final iterate. For stochastic min-max objectives the recorded value is
    /// only meaningful once the witness has caught up, so callers comparing
    /// restarts should prefer `final_smoothed` / `x_final`.
    pub x_final: Vec<f64>,
    pub y_final: Vec<f64>,
    /// Objective recorded after the inner ascent of every outer step.
    pub trace: Vec<f64>,
    /// Smoothed objective at the returned checkpoint.
    pub best_value: f64,
    /// Window-smoothed objective over the last recorded steps.
    pub final_smoothed: f64,
    /// True when the wall-clock budget cut the run short.
    pub truncated: bool,
    pub steps_run: usize,
}

fn check_finite(what: &str, step: usize, vals: &[f64]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite {what} at outer step {step}"
        )));
    }
    Ok(())
}

/// Run alternating projected GDA from `init`. Returns the iterate whose
/// (window-smoothed) recorded objective was smallest.
pub fn gda_minimax(
    obj: &mut dyn MinimaxObjective,
    project_x: Option<Projection>,
    project_y: Option<Projection>,
    x_feasible: Option<Feasibility>,
    init: (&[f64], &[f64]),
    cfg: &GdaConfig,
) -> Result<GdaOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let window = cfg.checkpoint_window.max(1);

    let mut x = init.0.to_vec();
    let mut y = init.1.to_vec();
    if let Some(p) = project_x {
        p(&mut x);
    }
    if let Some(p) = project_y {
        p(&mut y);
    }

    let v0 = obj.value(&x, &y);
    if !v0.is_finite() {
        return Err(Error::Numeric(format!(
            "objective not finite at the initial point (value {v0})"
        )));
    }

    let mut trace: Vec<f64> = Vec::with_capacity(cfg.outer_steps);
    let mut best_value = f64::INFINITY;
    let mut best_x = x.clone();
    let mut best_y = y.clone();
    let mut truncated = false;
    let mut quiet_steps = 0usize;
    let mut steps_run = 0;
    let tail_start = if cfg.tail_average > 0.0 {
        let frac = cfg.tail_average.clamp(0.0, 1.0);
        ((cfg.outer_steps as f64) * (1.0 - frac)).floor() as usize
    } else {
        usize::MAX
    };
    let mut tail_sum = vec![0.0; x.len()];
    let mut tail_count = 0usize;

    for t in 1..=cfg.outer_steps {
        if let Some(budget) = cfg.max_wall_ms {
            if started.elapsed().as_millis() as u64 > budget {
                truncated = true;
                break;
            }
        }
        steps_run = t;
        obj.begin_outer_step(t, &x);

        let candidates = obj.witness_candidates(t, &x, &y);
        if !candidates.is_empty() {
            let mut current = obj.value(&x, &y);
            for mut cand in candidates {
                if cand.len() != y.len() {
                    continue;
                }
                if let Some(p) = project_y {
                    p(&mut cand);
                }
                let v = obj.value(&x, &cand);
                if v > current {
                    y = cand;
                    current = v;
                }
            }
        }

        let eta_in = cfg.step_inner * cfg.decay.factor(t);
        let mut y_move = 0.0f64;
        for _ in 0..cfg.inner_steps_per_outer {
            let gy = obj.grad_y(&x, &y);
            check_finite("witness gradient", t, &gy)?;
            let prev = y.clone();
            for (yi, gi) in y.iter_mut().zip(gy.iter()) {
                *yi += eta_in * gi;
            }
            if let Some(p) = project_y {
                p(&mut y);
            }
            y_move = y
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / eta_in;
        }

        let value = obj.value(&x, &y);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "objective diverged at outer step {t} (value {value})"
            )));
        }
        trace.push(value);
        let smoothed = {
            let lo = trace.len().saturating_sub(window);
            let tail = &trace[lo..];
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        if smoothed < best_value {
            best_value = smoothed;
            best_x.copy_from_slice(&x);
            best_y.copy_from_slice(&y);
        }

        let gx = obj.grad_x(&x, &y);
        check_finite("model gradient", t, &gx)?;
        let mut eta_out = cfg.step_outer * cfg.decay.factor(t);
        // Stays zero when every halved candidate is infeasible (x unchanged).
        let mut x_move = 0.0f64;
        for _halving in 0..60 {
            let mut cand = x.clone();
            for (xi, gi) in cand.iter_mut().zip(gx.iter()) {
                *xi -= eta_out * gi;
            }
            if let Some(p) = project_x {
                p(&mut cand);
            }
            let ok = x_feasible.map_or(true, |f| f(&cand));
            if ok {
                x_move = cand
                    .iter()
                    .zip(x.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    / eta_out;
                x = cand;
                break;
            }
            eta_out *= 0.5;
        }

        if t > tail_start {
            for (s, xi) in tail_sum.iter_mut().zip(x.iter()) {
                *s += xi;
            }
            tail_count += 1;
        }

        if cfg.tol > 0.0 {
            if x_move < cfg.tol && y_move < cfg.tol {
                quiet_steps += 1;
                if quiet_steps >= 10 {
                    break;
                }
            } else {
                quiet_steps = 0;
            }
        }
    }

    let final_smoothed = if trace.is_empty() {
        v0
    } else {
        let lo = trace.len().saturating_sub(window);
        trace[lo..].iter().sum::<f64>() / (trace.len() - lo) as f64
    };
    let x_final = if tail_count > 0 {
        tail_sum.iter().map(|s| s / tail_count as f64).collect()
    } else {
        x
    };
    Ok(GdaOutcome {
        x: best_x,
        y: best_y,
        x_final,
        y_final: y,
        trace,
        best_value,
        final_smoothed,
        truncated,
        steps_run,
    })
}

/// Plain projected gradient ascent on a single block; used for the inner
/// maximization of sample-based STV values. Returns the best iterate by
/// recorded value.
pub fn projected_ascent(
    value_grad: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    project: Option<Projection>,
    y0: &[f64],
    steps: usize,
    step_size: f64,
    decay: Decay,
) -> Result<(Vec<f64>, f64)> {
    let mut y = y0.to_vec();
    if let Some(p) = project {
        p(&mut y);
    }
    let (mut best_value, mut g) = value_grad(&y);
    if !best_value.is_finite() {
        return Err(Error::Numeric(
            "ascent objective not finite at the initial point".into(),
        ));
    }
    let mut best_y = y.clone();
    for t in 1..=steps {
        let eta = step_size * decay.factor(t);
        for (yi, gi) in y.iter_mut().zip(g.iter()) {
            *yi += eta * gi;
        }
        if let Some(p) = project {
            p(&mut y);
        }
        let (value, grad) = value_grad(&y);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "ascent objective diverged at step {t}"
            )));
        }
        if value > best_value {
            best_value = value;
            best_y.copy_from_slice(&y);
        }
        g = grad;
    }
    Ok((best_y, best_value))
}

/// Compare an analytic gradient against central finite differences.
///
/// Returns `max_i |fd_i - g_i| / (1 + |g_i|)`.
pub fn finite_diff_check(
    value_grad: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    point: &[f64],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (_, grad) = value_grad(point);
    if grad.len() != point.len() {
        return Err(Error::DimensionMismatch {
            expected: point.len(),
            got: grad.len(),
        });
    }
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let (up, _) = value_grad(&probe);
        probe[i] = point[i] - step;
        let (down, _) = value_grad(&probe);
        probe[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        let err = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
