//! Provision for the predicted peak traffic under a fixed worst-case
//! condition.

use serde::{Deserialize, Serialize};

use crate::network_model::{QoSModel, WORST_CASE_CONDITION};
use crate::traffic::TrafficDistribution;

/// Smallest grid fraction whose QoS at `peak` traffic, `worst_case` standard
/// deviations below the mean, is above `q_thresh`; the largest fraction if
/// none is.
pub fn pred_alloc_decide(peak: f64, model: &QoSModel, grid: &[f64], q_thresh: f64, worst_case: f64) -> f64 {
    grid.iter()
        .copied()
        .find(|&r| model.deterministic_qos(peak, r, -worst_case) > q_thresh)
        .unwrap_or_else(|| *grid.last().expect("non-empty action grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredAllocPolicy {
    pub model: QoSModel,
    pub action_grid: Vec<f64>,
    pub q_thresh: f64,
    pub worst_case: f64,
}

impl PredAllocPolicy {
    pub fn new(model: QoSModel, action_grid: Vec<f64>, q_thresh: f64) -> Self {
        PredAllocPolicy {
            model,
            action_grid,
            q_thresh,
            worst_case: -WORST_CASE_CONDITION,
        }
    }

    pub fn decide(&self, predicted: &TrafficDistribution) -> f64 {
        pred_alloc_decide(
            predicted.peak(),
            &self.model,
            &self.action_grid,
            self.q_thresh,
            self.worst_case,
        )
    }

    /// Raw action in [-1, 1] that quantises to `fraction`.
    pub fn raw_action(&self, fraction: f64) -> f64 {
        let lo = self.action_grid[0];
        let hi = *self.action_grid.last().expect("non-empty action grid");
        if hi == lo {
            return 1.0;
        }
        (2.0 * (fraction - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }
}
