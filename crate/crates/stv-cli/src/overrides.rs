//! `--set key=value` overrides of the experiment configuration.
//!
//! Keys are flat; unknown keys are rejected with the full list of valid keys
//! so typos surface immediately.

use stv::bench::{EstimatorId, ExperimentConfig, Scenario};
use stv::divergences::SigmaFunction;
use stv::estimators::ModelExpectation;

use crate::{parse_decay, parse_variant};

const VALID_KEYS: &[&str] = &[
    "scenario",
    "d",
    "n",
    "trials",
    "eps",
    "master_seed",
    "estimators",
    "variant",
    "r",
    "u_radius",
    "sigma",
    "expectation",
    "draws",
    "outer_steps",
    "inner_steps_per_outer",
    "step_outer",
    "step_inner",
    "decay",
    "restarts",
    "tol",
    "max_wall_ms",
    "checkpoint_window",
    "tail_average",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> stv::Result<T> {
    value
        .parse::<T>()
        .map_err(|_| stv::Error::InvalidInput(format!("bad value '{value}' for key '{key}'")))
}

/// Apply one `key=value` override to the config.
pub fn apply_override(cfg: &mut ExperimentConfig, kv: &str) -> stv::Result<()> {
    let (key, value) = kv.split_once('=').ok_or_else(|| {
        stv::Error::InvalidInput(format!("override '{kv}' is not of the form key=value"))
    })?;
    match key {
        "scenario" => {
            cfg.scenario = match value {
                "mean-shift" => Scenario::MeanShift,
                "cov-shift" => Scenario::CovShift,
                "clean" => Scenario::Clean,
                _ => {
                    return Err(stv::Error::InvalidInput(format!(
                        "unknown scenario '{value}'; valid: mean-shift, cov-shift, clean"
                    )))
                }
            }
        }
        "d" => cfg.d = parse(key, value)?,
        "n" => cfg.n = parse(key, value)?,
        "trials" => cfg.trials = parse(key, value)?,
        "eps" => cfg.eps_override = Some(parse(key, value)?),
        "master_seed" => cfg.master_seed = parse(key, value)?,
        "estimators" => {
            cfg.estimators = value
                .split(',')
                .map(|s| EstimatorId::parse(s.trim()))
                .collect::<stv::Result<_>>()?;
        }
        "variant" => cfg.learn.variant = parse_variant(value)?,
        "r" => cfg.learn.r = parse(key, value)?,
        "u_radius" => cfg.learn.u_radius = parse(key, value)?,
        "sigma" => {
            cfg.learn.sigma = match value {
                "sigmoid" => SigmaFunction::Sigmoid,
                "step" => SigmaFunction::Step,
                "identity" => SigmaFunction::Identity,
                _ => {
                    return Err(stv::Error::InvalidInput(format!(
                        "unknown sigma '{value}'; valid: sigmoid, step, identity"
                    )))
                }
            }
        }
        "expectation" => {
            let draws = match cfg.learn.model_expectation {
                ModelExpectation::ExactSampling { draws }
                | ModelExpectation::ImportanceSampling { draws } => draws,
            };
            cfg.learn.model_expectation = match value {
                "exact" => ModelExpectation::ExactSampling { draws },
                "importance" => ModelExpectation::ImportanceSampling { draws },
                _ => {
                    return Err(stv::Error::InvalidInput(format!(
                        "unknown expectation '{value}'; valid: exact, importance"
                    )))
                }
            };
        }
        "draws" => {
            let draws = parse(key, value)?;
            cfg.learn.model_expectation = match cfg.learn.model_expectation {
                ModelExpectation::ExactSampling { .. } => {
                    ModelExpectation::ExactSampling { draws }
                }
                ModelExpectation::ImportanceSampling { .. } => {
                    ModelExpectation::ImportanceSampling { draws }
                }
            };
        }
        "outer_steps" => cfg.learn.optimizer.outer_steps = parse(key, value)?,
        "inner_steps_per_outer" => {
            cfg.learn.optimizer.inner_steps_per_outer = parse(key, value)?
        }
        "step_outer" => cfg.learn.optimizer.step_outer = parse(key, value)?,
        "step_inner" => cfg.learn.optimizer.step_inner = parse(key, value)?,
        "decay" => cfg.learn.optimizer.decay = parse_decay(value)?,
        "restarts" => cfg.learn.optimizer.restarts = parse(key, value)?,
        "tol" => cfg.learn.optimizer.tol = parse(key, value)?,
        "max_wall_ms" => cfg.learn.optimizer.max_wall_ms = Some(parse(key, value)?),
        "checkpoint_window" => cfg.learn.optimizer.checkpoint_window = parse(key, value)?,
        "tail_average" => cfg.learn.optimizer.tail_average = parse(key, value)?,
        _ => {
            return Err(stv::Error::InvalidInput(format!(
                "unknown override key '{key}'; valid keys: {}",
                VALID_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}
