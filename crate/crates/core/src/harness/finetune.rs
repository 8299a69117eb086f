//! Continue training a WCSAC checkpoint under a fixed condition.

use std::sync::Arc;

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, EvalSpec, MetricsRecord};
use super::par::Execution;
use super::train::{run_training, Learner, TrainOutcome, TrainSetup};
use crate::agents::{AgentKind, AgentParams, PolicyCheckpoint, WcsacAgent, WcsacConfig};
use crate::env::EpisodeConfig;
use crate::error::{Error, Result};
use crate::network_model::QoSModel;

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: PolicyCheckpoint,
    pub pre: MetricsRecord,
    pub post: MetricsRecord,
    pub training: TrainOutcome,
}

/// Agent configuration for fine-tuning: the checkpoint's architecture with
/// the fine-tuning risk level and scaled learning rates. No random warm-up.
fn finetune_agent_config(checkpoint: &PolicyCheckpoint, cfg: &ExperimentConfig) -> WcsacConfig {
    let base: WcsacConfig = serde_json::from_value::<ExperimentConfig>(checkpoint.config.clone())
        .map(|c| c.wcsac)
        .unwrap_or_else(|_| cfg.wcsac.clone());
    let s = cfg.finetune.lr_scale;
    WcsacConfig {
        risk_level: cfg.finetune.risk_level,
        horizon: cfg.episode.dti_count,
        lr_actor: base.lr_actor * s,
        lr_critic: base.lr_critic * s,
        lr_entropy: base.lr_entropy * s,
        lr_safety: base.lr_safety * s,
        warmup_steps: 0,
        ..base
    }
}

pub fn finetune(
    checkpoint: &PolicyCheckpoint,
    cfg: &ExperimentConfig,
    model: Arc<QoSModel>,
    exec: Execution,
) -> Result<FinetuneOutcome> {
    let params = match (&checkpoint.kind, &checkpoint.params) {
        (AgentKind::Wcsac, AgentParams::Wcsac(p)) => p.clone(),
        (kind, _) => {
            return Err(Error::UnsupportedAgent(format!(
                "fine-tuning needs a wcsac checkpoint, got {kind}"
            )))
        }
    };
    let ft = &cfg.finetune;
    let traffic = ft.traffic.clone().unwrap_or_else(|| cfg.traffic.clone());
    let episode = EpisodeConfig {
        condition: ft.condition,
        ..cfg.episode.clone()
    };
    let spec = EvalSpec {
        episode: episode.clone(),
        traffic: traffic.clone(),
        predictor: cfg.predictor,
        condition: ft.condition,
        episodes: cfg.eval_episodes,
        seed: cfg.seed,
    };
    let pre = evaluate(checkpoint, model.clone(), &spec, exec)?;

    let agent_cfg = finetune_agent_config(checkpoint, cfg);
    agent_cfg.validate()?;
    let agent = WcsacAgent::from_params(agent_cfg, params, checkpoint.rng.clone());
    let mut learner = Learner::wcsac(agent);
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.agent = AgentKind::Wcsac;
    snapshot_cfg.traffic = traffic.clone();
    snapshot_cfg.episode = episode.clone();
    snapshot_cfg.wcsac = finetune_agent_config(checkpoint, cfg);
    let setup = TrainSetup {
        kind: AgentKind::Wcsac,
        model: model.clone(),
        episode,
        traffic,
        predictor: cfg.predictor,
        seed: cfg.seed,
        episodes_per_epoch: cfg.episodes_per_epoch,
        validation_episodes: cfg.validation_episodes,
        selection_risk: cfg.finetune.risk_level,
        config_snapshot: serde_json::to_value(&snapshot_cfg)?,
    };
    let training = run_training(&mut learner, &setup, ft.epochs)?;
    let tuned = match training.best_epoch {
        Some(_) => training.best.clone(),
        None => checkpoint.clone(),
    };
    let post = evaluate(&tuned, model, &spec, exec)?;
    Ok(FinetuneOutcome {
        checkpoint: tuned,
        pre,
        post,
        training,
    })
}
