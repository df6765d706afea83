//! Weight averaging: vanilla EMA and the quality-gated Auto-EMA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Real;

pub const DEFAULT_TAU: f64 = 0.999;
pub const DEFAULT_THRESHOLD: f64 = 0.82;

/// Which side of the threshold opens the Auto-EMA gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDirection {
    /// Update when Δ ≤ T: the attack is effective on this batch.
    #[default]
    AtMost,
    /// Update when Δ > T.
    Above,
}

impl GateDirection {
    pub fn is_open(self, delta_ratio: f64, threshold: f64) -> bool {
        match self {
            GateDirection::AtMost => delta_ratio <= threshold,
            GateDirection::Above => delta_ratio > threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmaState<T: Real = f64> {
    pub theta_avg: ModelParams<T>,
    pub tau: f64,
    pub threshold: f64,
    pub gate: GateDirection,
    pub updates_applied: u64,
    pub updates_skipped: u64,
}

impl<T: Real> EmaState<T> {
    /// Starts the average at `theta`.
    pub fn new(theta: &ModelParams<T>, tau: f64, threshold: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1], got {threshold}"
            )));
        }
        Ok(Self {
            theta_avg: theta.clone(),
            tau,
            threshold,
            gate: GateDirection::AtMost,
            updates_applied: 0,
            updates_skipped: 0,
        })
    }

    pub fn with_gate(mut self, gate: GateDirection) -> Self {
        self.gate = gate;
        self
    }

    pub fn opportunities(&self) -> u64 {
        self.updates_applied + self.updates_skipped
    }
}

/// Per-batch counts behind the quality ratio Δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualitySnapshot {
    pub clean_correct: usize,
    pub robust_correct: usize,
    pub batch_size: usize,
    pub delta_ratio: f64,
}

impl QualitySnapshot {
    pub fn new(clean_correct: usize, robust_correct: usize, batch_size: usize) -> Result<Self> {
        Ok(Self {
            clean_correct,
            robust_correct,
            batch_size,
            delta_ratio: quality_ratio(clean_correct, robust_correct, batch_size)?,
        })
    }
}

/// Δ = robust accuracy / clean accuracy on one batch. Defined as 1 when no
/// clean prediction is correct.
pub fn quality_ratio(clean_correct: usize, robust_correct: usize, batch_size: usize) -> Result<f64> {
    if clean_correct > batch_size || robust_correct > batch_size {
        return Err(Error::InvalidArgument(format!(
            "counts clean={clean_correct} robust={robust_correct} exceed batch size {batch_size}"
        )));
    }
    if clean_correct == 0 {
        return Ok(1.0);
    }
    // The batch size cancels; dividing the counts directly keeps 41/50 exact.
    Ok(robust_correct as f64 / clean_correct as f64)
}

/// θ̃ ← τ·θ̃ + (1−τ)·θ.
pub fn ema_update<T: Real>(state: &mut EmaState<T>, theta: &ModelParams<T>) -> Result<()> {
    let tau = T::from_f64_lossy(state.tau);
    let one_minus = T::from_f64_lossy(1.0 - state.tau);
    state.theta_avg.combine(tau, theta, one_minus)?;
    state.updates_applied += 1;
    Ok(())
}

/// Applies [`ema_update`] only when the gate is open for `snapshot`; a closed
/// gate leaves θ̃ untouched. Returns whether the update was applied.
pub fn auto_ema_update<T: Real>(
    state: &mut EmaState<T>,
    theta: &ModelParams<T>,
    snapshot: &QualitySnapshot,
) -> Result<bool> {
    state.theta_avg.ensure_same_spec(theta)?;
    if state.gate.is_open(snapshot.delta_ratio, state.threshold) {
        ema_update(state, theta)?;
        Ok(true)
    } else {
        state.updates_skipped += 1;
        Ok(false)
    }
}
