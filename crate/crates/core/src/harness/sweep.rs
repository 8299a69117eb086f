//! Robustness sweeps over network condition and prediction noise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, EvalSpec, MetricsRecord};
use super::par::Execution;
use crate::agents::PolicyCheckpoint;
use crate::env::ConditionMode;
use crate::error::Result;
use crate::network_model::QoSModel;
use crate::traffic::PredictorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `d` or `noise_sigma`.
    pub parameter: String,
    pub values: Vec<f64>,
    pub records: Vec<MetricsRecord>,
    pub reference_label: String,
    pub reference: MetricsRecord,
}

/// Evaluate under deterministic condition `d` for each value, plus the
/// stochastic-condition reference.
pub fn sweep_conditions(
    checkpoint: &PolicyCheckpoint,
    model: Arc<QoSModel>,
    base: &EvalSpec,
    d_values: &[f64],
    exec: Execution,
) -> Result<SweepResult> {
    let records = d_values
        .iter()
        .map(|&d| evaluate(checkpoint, model.clone(), &base.with_condition(ConditionMode::Deterministic(d)), exec))
        .collect::<Result<Vec<_>>>()?;
    let reference = evaluate(checkpoint, model, &base.with_condition(ConditionMode::Stochastic), exec)?;
    Ok(SweepResult {
        parameter: "d".into(),
        values: d_values.to_vec(),
        records,
        reference_label: "stochastic".into(),
        reference,
    })
}

/// Evaluate with a noisy predictor for each noise level, plus the
/// fully-random-predictor reference.
pub fn sweep_noise(
    checkpoint: &PolicyCheckpoint,
    model: Arc<QoSModel>,
    base: &EvalSpec,
    sigmas: &[f64],
    exec: Execution,
) -> Result<SweepResult> {
    let records = sigmas
        .iter()
        .map(|&s| evaluate(checkpoint, model.clone(), &base.with_predictor(PredictorConfig::noisy(s)), exec))
        .collect::<Result<Vec<_>>>()?;
    let reference = evaluate(checkpoint, model, &base.with_predictor(PredictorConfig::random()), exec)?;
    Ok(SweepResult {
        parameter: "noise_sigma".into(),
        values: sigmas.to_vec(),
        records,
        reference_label: "random-predictor".into(),
        reference,
    })
}
