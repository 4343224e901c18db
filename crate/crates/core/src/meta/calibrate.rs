use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{Mode, Space};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::perturb::gaussian_input_noise;

/// A verified noise setting for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub space: Space,
    pub mode: Mode,
    pub noise_std: f64,
    pub seed: u64,
    pub attempts: usize,
}

impl PerturbationPlan {
    /// The model and input the plan produces. Input plans leave the model
    /// untouched and model plans leave the input untouched.
    pub fn apply<'a>(&self, model: &'a ModelGraph, x: &'a Tensor) -> Result<(Cow<'a, ModelGraph>, Cow<'a, Tensor>)> {
        Ok(match self.space {
            Space::Input => (Cow::Borrowed(model), Cow::Owned(gaussian_input_noise(x, self.noise_std, self.seed)?)),
            Space::Model => (Cow::Owned(model.perturb_parameters(self.noise_std, self.seed)?), Cow::Borrowed(x)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub start_std: f64,
    pub max_attempts: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            start_std: 0.01,
            max_attempts: 20,
        }
    }
}

/// Searches a noise std whose effect on the predicted label set matches
/// `mode`: halving from `start_std` until labels survive (minor), or
/// doubling until they change (disruptive). The noise draw is fixed by
/// `seed`, so only its scale varies between attempts.
pub fn calibrate_perturbation(
    model: &ModelGraph,
    x: &Tensor,
    space: Space,
    mode: Mode,
    seed: u64,
    cfg: &CalibrationConfig,
) -> Result<PerturbationPlan> {
    if !(cfg.start_std > 0.0 && cfg.start_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("start std must be > 0, got {}", cfg.start_std)));
    }
    let labels = model.predict_multilabel(x)?.labels;
    let mut plan = PerturbationPlan {
        space,
        mode,
        noise_std: cfg.start_std,
        seed,
        attempts: 0,
    };
    for attempt in 1..=cfg.max_attempts {
        plan.attempts = attempt;
        let (m, xp) = plan.apply(model, x)?;
        let changed = m.predict_multilabel(&xp)?.labels != labels;
        match (mode, changed) {
            (Mode::Minor, false) | (Mode::Disruptive, true) => return Ok(plan),
            (Mode::Minor, true) => plan.noise_std /= 2.0,
            (Mode::Disruptive, false) => plan.noise_std *= 2.0,
        }
    }
    Err(Error::CalibrationFailed {
        attempts: cfg.max_attempts,
        // Undo the step taken after the final attempt.
        last_std: match mode {
            Mode::Minor => plan.noise_std * 2.0,
            Mode::Disruptive => plan.noise_std / 2.0,
        },
    })
}
