//! SGD with momentum and weight decay, and the two learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    /// `base · factor^(milestones passed)`.
    Multistep {
        base: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Triangle 0 → `max_lr` → 0 over the whole run, linear in the global step.
    Cyclic { max_lr: f64 },
}

impl LrSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        match self {
            LrSchedule::Multistep { base, milestones, factor } => {
                if !(*base > 0.0) || !base.is_finite() || !(*factor > 0.0) || !factor.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "multistep needs positive base and factor, got {base} and {factor}"
                    )));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "milestones must be strictly increasing: {milestones:?}"
                    )));
                }
                if let Some(&last) = milestones.last() {
                    if last >= epochs {
                        return Err(Error::InvalidArgument(format!(
                            "milestone {last} is not below the epoch count {epochs}"
                        )));
                    }
                }
            }
            LrSchedule::Cyclic { max_lr } => {
                if !(*max_lr > 0.0) || !max_lr.is_finite() {
                    return Err(Error::InvalidArgument(format!("cyclic max_lr must be > 0, got {max_lr}")));
                }
            }
        }
        Ok(())
    }

    /// Milestones at which the rate changes (empty for cyclic).
    pub fn milestones(&self) -> &[usize] {
        match self {
            LrSchedule::Multistep { milestones, .. } => milestones,
            LrSchedule::Cyclic { .. } => &[],
        }
    }
}

/// Learning rate at `step` of `epoch`. `total_steps` is the number of
/// optimizer steps in the whole run and `steps_per_epoch` the count per epoch.
pub fn lr_at(schedule: &LrSchedule, epoch: usize, step_within_epoch: usize, steps_per_epoch: usize, total_steps: usize) -> f64 {
    match schedule {
        LrSchedule::Multistep { base, milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            base * factor.powi(passed as i32)
        }
        LrSchedule::Cyclic { max_lr } => {
            if total_steps == 0 {
                return 0.0;
            }
            let t = (epoch * steps_per_epoch + step_within_epoch) as f64;
            let half = total_steps as f64 / 2.0;
            let frac = if t <= half { t / half } else { (total_steps as f64 - t) / half };
            max_lr * frac.clamp(0.0, 1.0)
        }
    }
}

/// `v ← m·v + (g + wd·p)`, `p ← p − lr·v`.
pub fn sgd_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    velocity: &mut ModelParams<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    params.ensure_same_spec(grads)?;
    params.ensure_same_spec(velocity)?;
    if let Some(i) = grads.values().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite gradient at flat parameter index {i}"
        )));
    }
    let (lr, m, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for ((p, &g), v) in params.values_mut().zip(grads.values()).zip(velocity.values_mut()) {
        *v = m * *v + (g + wd * *p);
        *p = *p - lr * *v;
    }
    Ok(())
}
