//! Training loops with per-epoch learning curves and best-checkpoint
//! selection.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrafficSpec};
use super::evaluate::{episode_rng, evaluate_episodes, EpisodeSummary, EvalSpec, MetricsRecord};
use super::par::Execution;
use crate::agents::onpolicy::{collect_trajectory, Trajectory};
use crate::agents::replay::{ReplayBuffer, Transition};
use crate::agents::wcsac::{UpdateMode, UpdateStats};
use crate::agents::{
    AgentKind, AgentParams, CpoAgent, PolicyCheckpoint, PpoAgent, PredAllocPolicy, WcsacAgent, WcsacConfig,
};
use crate::env::{Action, EpisodeConfig, SliceEnv};
use crate::error::{Error, Result};
use crate::network_model::QoSModel;
use crate::traffic::PredictorConfig;

/// Stream of the training environment RNG; episode streams of evaluation
/// use small indices.
const TRAIN_STREAM: u64 = 1 << 40;
/// Offsets the validation seed away from the evaluation seed.
const VALIDATION_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_bandwidth_pct: f64,
    pub mean_qos_degradation_pct: f64,
    pub min_bandwidth_pct: f64,
    pub max_bandwidth_pct: f64,
    pub min_qos_degradation_pct: f64,
    pub max_qos_degradation_pct: f64,
    pub validation_bandwidth_pct: f64,
    pub validation_qos_degradation_pct: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: PolicyCheckpoint,
    pub last: PolicyCheckpoint,
    /// Epoch of `best`; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub curve: Vec<EpochRecord>,
    /// One JSON object per epoch with averaged update diagnostics.
    pub diagnostics: Vec<serde_json::Value>,
    pub warnings: Vec<String>,
}

/// The agent being trained plus its learning state.
pub enum Learner {
    Wcsac {
        agent: Box<WcsacAgent>,
        buffer: ReplayBuffer,
        steps: usize,
    },
    Ppo(Box<PpoAgent>),
    Cpo(Box<CpoAgent>),
}

impl Learner {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let ep = &cfg.episode;
        Ok(match cfg.agent {
            AgentKind::Wcsac => {
                let wc = WcsacConfig {
                    horizon: ep.dti_count,
                    ..cfg.wcsac.clone()
                };
                Learner::wcsac(WcsacAgent::new(wc, cfg.seed)?)
            }
            AgentKind::Ppo => Learner::Ppo(Box::new(PpoAgent::new(cfg.ppo.clone(), cfg.seed))),
            AgentKind::Cpo | AgentKind::WcCpo => {
                let mut c = cfg.cpo.clone();
                c.beta_thresh = ep.beta_thresh;
                if cfg.agent == AgentKind::Cpo {
                    c.shaping_coef = 0.0;
                }
                Learner::Cpo(Box::new(CpoAgent::new(c, cfg.seed)))
            }
            AgentKind::PredAlloc => {
                return Err(Error::UnsupportedAgent("pred-alloc has no training loop".into()));
            }
        })
    }

    pub fn wcsac(agent: WcsacAgent) -> Self {
        let buffer = ReplayBuffer::new(agent.config().replay_capacity);
        Learner::Wcsac {
            agent: Box::new(agent),
            buffer,
            steps: 0,
        }
    }

    pub fn params(&self) -> AgentParams {
        match self {
            Learner::Wcsac { agent, .. } => AgentParams::Wcsac(agent.params.clone()),
            Learner::Ppo(a) => AgentParams::Ppo((**a).clone()),
            Learner::Cpo(a) => AgentParams::Cpo((**a).clone()),
        }
    }

    fn rng_state(&mut self) -> ChaCha8Rng {
        match self {
            Learner::Wcsac { agent, .. } => agent.rng().clone(),
            Learner::Ppo(a) => a.rng_mut().clone(),
            Learner::Cpo(a) => a.rng_mut().clone(),
        }
    }

    /// Run `episodes` training episodes and the updates they trigger.
    pub fn run_epoch(
        &mut self,
        env: &mut SliceEnv,
        rng: &mut ChaCha8Rng,
        episodes: usize,
    ) -> Result<(Vec<EpisodeSummary>, serde_json::Value)> {
        match self {
            Learner::Wcsac { agent, buffer, steps } => {
                let mut summaries = Vec::with_capacity(episodes);
                let mut acc = StatsMean::default();
                for _ in 0..episodes {
                    let mut obs = env.reset(rng)?.features();
                    let mut bw = 0.0;
                    let mut n = 0;
                    loop {
                        let a = if *steps < agent.config().warmup_steps {
                            agent.random_action()
                        } else {
                            agent.act(&obs, false)
                        };
                        let out = env.step(Action::Raw(a))?;
                        let next = out.next_observation.features();
                        buffer.push(Transition {
                            obs,
                            action: a,
                            reward: out.reward,
                            cost: out.cost,
                            next_obs: next,
                            done: out.done,
                        });
                        *steps += 1;
                        bw += out.info.bandwidth;
                        n += 1;
                        if *steps >= agent.config().warmup_steps && buffer.len() >= agent.config().batch_size {
                            for _ in 0..agent.config().updates_per_step {
                                acc.add(&agent.update(buffer, UpdateMode::Constrained)?);
                            }
                        }
                        obs = next;
                        if out.done {
                            summaries.push(EpisodeSummary {
                                mean_bandwidth: bw / n as f64,
                                final_beta: out.next_observation.beta_so_far,
                            });
                            break;
                        }
                    }
                }
                Ok((summaries, serde_json::to_value(acc.mean())?))
            }
            Learner::Ppo(agent) => {
                let trajs = collect(env, &agent.policy, rng, episodes)?;
                let stats = agent.update(&trajs)?;
                Ok((summarize(&trajs), serde_json::to_value(stats)?))
            }
            Learner::Cpo(agent) => {
                let trajs = collect(env, &agent.policy, rng, episodes)?;
                let stats = agent.update(&trajs)?;
                Ok((summarize(&trajs), serde_json::to_value(stats)?))
            }
        }
    }
}

fn collect(
    env: &mut SliceEnv,
    policy: &crate::agents::policy::GaussianPolicy,
    rng: &mut ChaCha8Rng,
    episodes: usize,
) -> Result<Vec<Trajectory>> {
    (0..episodes).map(|_| collect_trajectory(env, policy, rng)).collect()
}

fn summarize(trajs: &[Trajectory]) -> Vec<EpisodeSummary> {
    trajs
        .iter()
        .map(|t| EpisodeSummary {
            mean_bandwidth: t.mean_bandwidth(),
            final_beta: t.final_beta,
        })
        .collect()
}

#[derive(Default)]
struct StatsMean {
    sum: UpdateStats,
    n: usize,
}

impl StatsMean {
    fn add(&mut self, s: &UpdateStats) {
        let t = &mut self.sum;
        t.reward_critic_loss += s.reward_critic_loss;
        t.cost_critic_loss += s.cost_critic_loss;
        t.variance_critic_loss += s.variance_critic_loss;
        t.actor_loss += s.actor_loss;
        t.mean_cvar += s.mean_cvar;
        t.mean_log_prob += s.mean_log_prob;
        // Multipliers are reported at their latest value.
        t.entropy_coef = s.entropy_coef;
        t.safety_coef = s.safety_coef;
        self.n += 1;
    }

    fn mean(&self) -> UpdateStats {
        let n = self.n.max(1) as f64;
        UpdateStats {
            reward_critic_loss: self.sum.reward_critic_loss / n,
            cost_critic_loss: self.sum.cost_critic_loss / n,
            variance_critic_loss: self.sum.variance_critic_loss / n,
            actor_loss: self.sum.actor_loss / n,
            mean_cvar: self.sum.mean_cvar / n,
            mean_log_prob: self.sum.mean_log_prob / n,
            ..self.sum
        }
    }
}

/// Everything a training run needs besides the learner.
pub struct TrainSetup {
    pub kind: AgentKind,
    pub model: Arc<QoSModel>,
    pub episode: EpisodeConfig,
    pub traffic: TrafficSpec,
    pub predictor: PredictorConfig,
    pub seed: u64,
    pub episodes_per_epoch: usize,
    pub validation_episodes: usize,
    /// Tail fraction of validation episodes whose mean degradation must stay
    /// within the threshold for an epoch to count as feasible; 1 uses the mean.
    pub selection_risk: f64,
    pub config_snapshot: serde_json::Value,
}

impl TrainSetup {
    pub fn from_config(cfg: &ExperimentConfig, model: Arc<QoSModel>) -> Result<Self> {
        Ok(TrainSetup {
            kind: cfg.agent,
            model,
            episode: cfg.episode.clone(),
            traffic: cfg.traffic.clone(),
            predictor: cfg.predictor,
            seed: cfg.seed,
            episodes_per_epoch: cfg.episodes_per_epoch,
            validation_episodes: cfg.validation_episodes,
            selection_risk: selection_risk(cfg.agent, cfg.wcsac.risk_level),
            config_snapshot: serde_json::to_value(cfg)?,
        })
    }

    fn validation_spec(&self) -> EvalSpec {
        EvalSpec {
            episode: self.episode.clone(),
            traffic: self.traffic.clone(),
            predictor: self.predictor,
            condition: self.episode.condition,
            episodes: self.validation_episodes,
            seed: self.seed ^ VALIDATION_SEED_SALT,
        }
    }
}

/// WCSAC is selected on its own risk measure, the average-cost agents on
/// the mean.
pub fn selection_risk(kind: AgentKind, wcsac_risk: f64) -> f64 {
    match kind {
        AgentKind::Wcsac => wcsac_risk,
        _ => 1.0,
    }
}

/// Mean of the worst `ceil(alpha * n)` episode degradations, in percent.
pub fn tail_degradation_pct(episodes: &[EpisodeSummary], alpha: f64) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let mut betas: Vec<f64> = episodes.iter().map(|e| e.final_beta).collect();
    betas.sort_by(|a, b| b.total_cmp(a));
    let k = ((alpha * betas.len() as f64).ceil() as usize).clamp(1, betas.len());
    100.0 * betas[..k].iter().sum::<f64>() / k as f64
}

fn record(epoch: usize, train: &[EpisodeSummary], val: Option<&MetricsRecord>) -> Result<EpochRecord> {
    let m = MetricsRecord::from_episodes(train, String::new())?;
    Ok(EpochRecord {
        epoch,
        mean_bandwidth_pct: m.mean_bandwidth_pct,
        mean_qos_degradation_pct: m.mean_qos_degradation_pct,
        min_bandwidth_pct: m.min_bandwidth_pct,
        max_bandwidth_pct: m.max_bandwidth_pct,
        min_qos_degradation_pct: m.min_qos_degradation_pct,
        max_qos_degradation_pct: m.max_qos_degradation_pct,
        validation_bandwidth_pct: val.map_or(m.mean_bandwidth_pct, |v| v.mean_bandwidth_pct),
        validation_qos_degradation_pct: val.map_or(m.mean_qos_degradation_pct, |v| v.mean_qos_degradation_pct),
    })
}

/// Train `learner` for `epochs`, keeping the epoch with the lowest
/// validation bandwidth among those whose validation tail degradation (see
/// [`TrainSetup::selection_risk`]) is within the threshold, or the lowest
/// tail degradation if none is.
pub fn run_training(learner: &mut Learner, setup: &TrainSetup, epochs: usize) -> Result<TrainOutcome> {
    let source = setup.traffic.build(&setup.episode)?;
    let mut env = SliceEnv::new(setup.model.clone(), setup.episode.clone(), source, setup.predictor)?;
    let mut rng = episode_rng(setup.seed, TRAIN_STREAM);
    let snapshot = |learner: &mut Learner, epoch: usize| {
        PolicyCheckpoint::new(
            setup.kind,
            learner.params(),
            setup.config_snapshot.clone(),
            epoch,
            learner.rng_state(),
        )
    };
    let mut best = snapshot(learner, 0);
    let mut best_epoch = None;
    let mut best_key: Option<(bool, f64)> = None;
    let mut curve = Vec::with_capacity(epochs);
    let mut diagnostics = Vec::with_capacity(epochs);
    let limit_pct = 100.0 * setup.episode.beta_thresh;
    let val_spec = setup.validation_spec();

    for epoch in 1..=epochs {
        let (episodes, diag) = learner.run_epoch(&mut env, &mut rng, setup.episodes_per_epoch)?;
        let current = snapshot(learner, epoch);
        let val_eps = if setup.validation_episodes > 0 {
            evaluate_episodes(&current, setup.model.clone(), &val_spec, Execution::Parallel)?
        } else {
            episodes.clone()
        };
        let val = MetricsRecord::from_episodes(&val_eps, String::new())?;
        let rec = record(epoch, &episodes, Some(&val))?;
        let tail = tail_degradation_pct(&val_eps, setup.selection_risk);
        let feasible = tail <= limit_pct;
        let score = if feasible { rec.validation_bandwidth_pct } else { tail };
        let better = match best_key {
            None => true,
            Some((bf, bs)) => (feasible && !bf) || (feasible == bf && score < bs),
        };
        if better {
            best_key = Some((feasible, score));
            best = current;
            best_epoch = Some(epoch);
        }
        log::debug!(
            "epoch {epoch}: bw {:.1}% beta {:.2}% (val bw {:.1}% beta {:.2}% tail {tail:.2}%)",
            rec.mean_bandwidth_pct,
            rec.mean_qos_degradation_pct,
            rec.validation_bandwidth_pct,
            rec.validation_qos_degradation_pct
        );
        let mut diag = diag;
        if let Some(obj) = diag.as_object_mut() {
            obj.insert("epoch".into(), epoch.into());
        }
        diagnostics.push(diag);
        curve.push(rec);
    }
    let mut warnings = Vec::new();
    if matches!(best_key, Some((false, _))) {
        warnings.push(format!(
            "no epoch kept validation degradation within {limit_pct}%; selected the lowest-degradation epoch"
        ));
    }
    let last = snapshot(learner, epochs);
    Ok(TrainOutcome {
        best,
        last,
        best_epoch,
        curve,
        diagnostics,
        warnings,
    })
}

/// The Pred-Alloc heuristic as a checkpoint.
pub fn pred_alloc_checkpoint(cfg: &ExperimentConfig, model: &QoSModel) -> Result<PolicyCheckpoint> {
    let policy = PredAllocPolicy::new(model.clone(), cfg.episode.action_grid.clone(), cfg.episode.q_thresh);
    Ok(PolicyCheckpoint::new(
        AgentKind::PredAlloc,
        AgentParams::PredAlloc(policy),
        serde_json::to_value(cfg)?,
        0,
        episode_rng(cfg.seed, 0),
    ))
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let model = cfg.load_model()?;
    train_with_model(cfg, model)
}

pub fn train_with_model(cfg: &ExperimentConfig, model: Arc<QoSModel>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.agent == AgentKind::PredAlloc {
        let ck = pred_alloc_checkpoint(cfg, &model)?;
        return Ok(TrainOutcome {
            best: ck.clone(),
            last: ck,
            best_epoch: None,
            curve: Vec::new(),
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let mut learner = Learner::new(cfg)?;
    let setup = TrainSetup::from_config(cfg, model)?;
    run_training(&mut learner, &setup, cfg.epochs)
}
