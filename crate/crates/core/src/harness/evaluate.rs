//! Deterministic-policy evaluation over many seeded episodes.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{hash_json, TrafficSpec};
use super::par::{par_map, Execution};
use crate::agents::PolicyCheckpoint;
use crate::env::{Action, ConditionMode, EpisodeConfig, SliceEnv};
use crate::error::{Error, Result};
use crate::network_model::QoSModel;
use crate::traffic::PredictorConfig;

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Mean applied bandwidth fraction over the episode's steps.
    pub mean_bandwidth: f64,
    pub final_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mean_bandwidth_pct: f64,
    pub mean_qos_degradation_pct: f64,
    pub min_bandwidth_pct: f64,
    pub max_bandwidth_pct: f64,
    pub min_qos_degradation_pct: f64,
    pub max_qos_degradation_pct: f64,
    pub episodes: usize,
    pub config_hash: String,
}

impl MetricsRecord {
    /// Aggregate equal-length episodes; bandwidth is averaged over all steps.
    pub fn from_episodes(episodes: &[EpisodeSummary], config_hash: String) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Input("no episodes to aggregate".into()));
        }
        let n = episodes.len() as f64;
        let bw: Vec<f64> = episodes.iter().map(|e| 100.0 * e.mean_bandwidth).collect();
        let beta: Vec<f64> = episodes.iter().map(|e| 100.0 * e.final_beta).collect();
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Clamp so rounding in the mean never escapes [min, max].
        let mean = |v: &[f64]| (v.iter().sum::<f64>() / n).clamp(min(v), max(v));
        Ok(MetricsRecord {
            mean_bandwidth_pct: mean(&bw),
            mean_qos_degradation_pct: mean(&beta),
            min_bandwidth_pct: min(&bw),
            max_bandwidth_pct: max(&bw),
            min_qos_degradation_pct: min(&beta),
            max_qos_degradation_pct: max(&beta),
            episodes: episodes.len(),
            config_hash,
        })
    }
}

/// What to evaluate a checkpoint on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub episode: EpisodeConfig,
    pub traffic: TrafficSpec,
    pub predictor: PredictorConfig,
    pub condition: ConditionMode,
    pub episodes: usize,
    pub seed: u64,
}

impl EvalSpec {
    pub fn with_condition(&self, condition: ConditionMode) -> Self {
        EvalSpec {
            condition,
            ..self.clone()
        }
    }

    pub fn with_predictor(&self, predictor: PredictorConfig) -> Self {
        EvalSpec {
            predictor,
            ..self.clone()
        }
    }

    pub fn with_traffic(&self, traffic: TrafficSpec) -> Self {
        EvalSpec {
            traffic,
            ..self.clone()
        }
    }
}

/// RNG of episode `index` under `seed`: one ChaCha stream per episode.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Run one episode with the checkpoint's deterministic policy.
pub fn run_episode(env: &mut SliceEnv, checkpoint: &PolicyCheckpoint, rng: &mut ChaCha8Rng) -> Result<EpisodeSummary> {
    let mut obs = env.reset(rng)?;
    let mut bw_sum = 0.0;
    let mut steps = 0usize;
    loop {
        let raw = checkpoint.act(&obs.features(), true, rng);
        let out = env.step(Action::Raw(raw))?;
        bw_sum += out.info.bandwidth;
        steps += 1;
        if out.done {
            return Ok(EpisodeSummary {
                mean_bandwidth: bw_sum / steps as f64,
                final_beta: out.next_observation.beta_so_far,
            });
        }
        obs = out.next_observation;
    }
}

/// Per-episode results in episode order.
pub fn evaluate_episodes(
    checkpoint: &PolicyCheckpoint,
    model: Arc<QoSModel>,
    spec: &EvalSpec,
    exec: Execution,
) -> Result<Vec<EpisodeSummary>> {
    if spec.episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let episode = EpisodeConfig {
        condition: spec.condition,
        ..spec.episode.clone()
    };
    let source = spec.traffic.build(&episode)?;
    let proto = SliceEnv::new(model, episode, source, spec.predictor)?;
    let indices: Vec<u64> = (0..spec.episodes as u64).collect();
    par_map(&indices, exec, |&i| {
        let mut env = proto.clone();
        run_episode(&mut env, checkpoint, &mut episode_rng(spec.seed, i))
    })
    .into_iter()
    .collect()
}

pub fn evaluate(
    checkpoint: &PolicyCheckpoint,
    model: Arc<QoSModel>,
    spec: &EvalSpec,
    exec: Execution,
) -> Result<MetricsRecord> {
    let episodes = evaluate_episodes(checkpoint, model, spec, exec)?;
    let hash = hash_json(&serde_json::json!({
        "checkpoint": checkpoint.config,
        "epoch": checkpoint.epoch,
        "eval": spec,
    }));
    MetricsRecord::from_episodes(&episodes, hash)
}
