//! PPO on a fixed weighted sum of resource reward and degradation cost.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{all_finite, clip_grad_norm, Adam};
use super::onpolicy::{batch_advantages, normalize, Trajectory, ValueFunction};
use super::policy::GaussianPolicy;
use crate::env::OBS_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub reward_weight: f64,
    pub cost_weight: f64,
    pub clip_ratio: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_epochs: usize,
    pub grad_clip: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            reward_weight: 1.0,
            cost_weight: 100.0,
            clip_ratio: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            epochs: 10,
            minibatch: 64,
            value_epochs: 10,
            grad_clip: 1.0,
        }
    }
}

/// `w_re * r - w_qos * c`.
pub fn scalarize(reward: f64, cost: f64, reward_weight: f64, cost_weight: f64) -> f64 {
    reward_weight * reward - cost_weight * cost
}

/// One policy-gradient sample: observation, pre-squash action, behaviour
/// log-probability and advantage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSample {
    pub obs: [f64; OBS_DIM],
    pub u: f64,
    pub log_prob_old: f64,
    pub advantage: f64,
}

/// Negative clipped surrogate `-mean(min(rho A, clip(rho) A))` and its
/// gradient with respect to the flat policy parameters.
pub fn clipped_loss(policy: &GaussianPolicy, samples: &[SurrogateSample], clip: f64) -> (f64, Vec<f64>) {
    let b = samples.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut loss = 0.0;
    for s in samples {
        let ratio = (policy.log_prob(&s.obs, s.u) - s.log_prob_old).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
        if unclipped <= clipped {
            loss -= unclipped / b;
            if s.advantage != 0.0 {
                policy.accumulate_log_prob_grad(&s.obs, s.u, -s.advantage * ratio / b, &mut grad);
            }
        } else {
            loss -= clipped / b;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub log_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
    opt: Adam,
    rng: ChaCha8Rng,
}

impl PpoAgent {
    pub fn new(config: PpoConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(OBS_DIM, &config.hidden, config.init_log_std, &mut rng);
        let value = ValueFunction::new(&config.hidden, config.lr_value, &mut rng);
        let opt = Adam::new(policy.num_params(), config.lr_policy);
        PpoAgent {
            config,
            policy,
            value,
            opt,
            rng,
        }
    }

    /// Clipped-surrogate epochs over fixed samples.
    pub fn update_policy(&mut self, samples: &[SurrogateSample]) -> f64 {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        let mut last = 0.0;
        for _ in 0..self.config.epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(self.config.minibatch.max(1)) {
                let mb: Vec<_> = chunk.iter().map(|&i| samples[i]).collect();
                let (loss, mut g) = clipped_loss(&self.policy, &mb, self.config.clip_ratio);
                clip_grad_norm(&mut g, self.config.grad_clip);
                let mut p = self.policy.flat_params();
                self.opt.step(&mut p, &g);
                self.policy.set_flat_params(&p);
                last = loss;
            }
        }
        last
    }

    pub fn update(&mut self, trajectories: &[Trajectory]) -> Result<PpoStats> {
        if trajectories.iter().all(|t| t.steps.is_empty()) {
            return Err(Error::Input("PPO update needs at least one step".into()));
        }
        let cfg = self.config.clone();
        let signal = |e: usize, t: usize| {
            let s = &trajectories[e].steps[t];
            scalarize(s.reward, s.cost, cfg.reward_weight, cfg.cost_weight)
        };
        let (mut adv, ret) = batch_advantages(trajectories, signal, &self.value, cfg.discount, cfg.gae_lambda);
        if !all_finite(&adv) {
            return Err(Error::Divergence("non-finite advantages in PPO batch".into()));
        }
        normalize(&mut adv);
        let steps: Vec<_> = trajectories.iter().flat_map(|t| t.steps.iter()).collect();
        let samples: Vec<SurrogateSample> = steps
            .iter()
            .zip(&adv)
            .map(|(s, &a)| SurrogateSample {
                obs: s.obs,
                u: s.u,
                log_prob_old: s.log_prob,
                advantage: a,
            })
            .collect();
        let policy_loss = self.update_policy(&samples);
        let obs: Vec<_> = steps.iter().map(|s| s.obs).collect();
        let value_loss = self
            .value
            .fit(&obs, &ret, cfg.value_epochs, cfg.minibatch, &mut self.rng);
        if !all_finite(&self.policy.flat_params()) || !policy_loss.is_finite() || !value_loss.is_finite() {
            return Err(Error::Divergence("PPO produced non-finite values".into()));
        }
        Ok(PpoStats {
            policy_loss,
            value_loss,
            log_std: self.policy.log_std,
        })
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
