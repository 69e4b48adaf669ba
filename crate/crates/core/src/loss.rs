//! Mean-squared trajectory loss and its per-observation adjoint jumps.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint loss `w_x·MSE(states) + w_s·MSE(sensitivities)`, with optional
/// per-channel weights applied inside both means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub state: f64,
    #[serde(default = "one")]
    pub sensitivity: f64,
    /// Empty means all ones.
    #[serde(default)]
    pub channels: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            state: 1.0,
            sensitivity: 1.0,
            channels: Vec::new(),
        }
    }
}

impl LossWeights {
    pub fn states_only() -> Self {
        LossWeights {
            sensitivity: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v >= 0.0);
        if bad(self.state) {
            return Err(Error::Config(format!(
                "state loss weight must be >= 0, got {}",
                self.state
            )));
        }
        if bad(self.sensitivity) {
            return Err(Error::Config(format!(
                "sensitivity loss weight must be >= 0, got {}",
                self.sensitivity
            )));
        }
        if !self.channels.is_empty() {
            Error::check_dim("channel weights", state_dim, self.channels.len())?;
            if self.channels.iter().any(|&w| bad(w)) {
                return Err(Error::Config("channel weights must be >= 0".into()));
            }
        }
        Ok(())
    }

    fn channel(&self, c: usize) -> f64 {
        self.channels.get(c).copied().unwrap_or(1.0)
    }
}

/// Weighted mean squared error over the rows with `mask[i]` set, and the
/// derivative of `scale·MSE` with respect to each predicted entry.
pub(crate) fn mse_with_jumps(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
    mask: Option<&[bool]>,
    weights: &LossWeights,
    scale: f64,
) -> (f64, Array2<f64>) {
    let (rows, cols) = pred.dim();
    let mut jumps = Array2::zeros((rows, cols));
    let used = (0..rows).filter(|&i| mask.is_none_or(|m| m[i])).count();
    if used == 0 || scale == 0.0 {
        return (0.0, jumps);
    }
    let denom = (used * cols) as f64;
    let mut sum = 0.0;
    for i in 0..rows {
        if !mask.is_none_or(|m| m[i]) {
            continue;
        }
        for c in 0..cols {
            let w = weights.channel(c);
            let r = pred[[i, c]] - truth[[i, c]];
            sum += w * r * r;
            jumps[[i, c]] = scale * 2.0 * w * r / denom;
        }
    }
    (scale * sum / denom, jumps)
}
