use serde::{Deserialize, Serialize};

use crate::derivatives::gradient;
use crate::error::{Error, Result};
use crate::model::{self, DatasetPair, WeightStack};

/// Loss beyond which a run is declared divergent.
const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step: f64,
    pub max_iters: usize,
    pub stop_grad_norm: f64,
    /// Record every n-th iterate; the first and last are always recorded.
    pub record_every: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { step: 0.05, max_iters: 100_000, stop_grad_norm: 1e-8, record_every: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GdStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct GdOutcome {
    pub weights: WeightStack,
    pub trajectory: Vec<GdRecord>,
    pub status: GdStatus,
    /// Gradient steps taken.
    pub iterations: usize,
}

impl GdOutcome {
    pub fn last(&self) -> GdRecord {
        *self.trajectory.last().expect("trajectory holds the initial point")
    }
}

/// Fixed-step gradient descent from `w0`.
pub fn train_gd(w0: &WeightStack, data: &DatasetPair, cfg: &GdConfig) -> Result<GdOutcome> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive and finite, got {}", cfg.step)));
    }
    if cfg.stop_grad_norm.is_nan() || cfg.stop_grad_norm < 0.0 {
        return Err(Error::InvalidParameter("stop_grad_norm must be non-negative".into()));
    }
    data.check_shape(w0.shape())?;
    let every = cfg.record_every.max(1);
    let mut w = w0.clone();
    let mut trajectory = Vec::new();
    let mut iter = 0;
    loop {
        let loss = model::loss(&w, data)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            trajectory.push(GdRecord { iter, loss, grad_norm: f64::NAN });
            return Ok(GdOutcome { weights: w, trajectory, status: GdStatus::Diverged, iterations: iter });
        }
        let g = gradient(&w, data)?;
        let record = GdRecord { iter, loss, grad_norm: g.stacked_norm };
        let status = if g.stacked_norm <= cfg.stop_grad_norm {
            Some(GdStatus::Converged)
        } else if iter >= cfg.max_iters {
            Some(GdStatus::MaxIters)
        } else {
            None
        };
        if let Some(status) = status {
            trajectory.push(record);
            return Ok(GdOutcome { weights: w, trajectory, status, iterations: iter });
        }
        if iter % every == 0 {
            trajectory.push(record);
        }
        let layers = w
            .layers()
            .iter()
            .zip(&g.blocks)
            .map(|(l, d)| l - d * cfg.step)
            .collect();
        w = WeightStack::new(w.shape().clone(), layers)?;
        iter += 1;
    }
}
