//! Worst-case soft actor-critic: SAC with a Gaussian safety critic whose
//! CVaR at level `risk_level` is kept under a per-visit cost limit through a
//! projected-ascent multiplier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cvar::cvar_std_factor;
use super::nn::{all_finite, clip_grad_norm, Adam, Cache, Mlp};
use super::policy::{
    bounded_log_std, gaussian_log_prob, sigmoid, softplus, squash_log_det, squash_log_det_grad, std_normal,
};
use super::replay::{ReplayBuffer, Transition};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};

const CRITIC_IN: usize = OBS_DIM + 1;
/// Floor of the variance target and jitter under the square root.
pub const VAR_EPS: f64 = 1e-8;
const INIT_COST_VARIANCE: f64 = 1e-4;

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WcsacConfig {
    /// Tail fraction `alpha` of the CVaR; 1 recovers the mean cost.
    pub risk_level: f64,
    /// Episode-level degradation limit.
    pub cost_limit: f64,
    /// Steps per episode, used to turn `cost_limit` into a per-visit limit.
    pub horizon: usize,
    pub discount: f64,
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_entropy: f64,
    pub lr_safety: f64,
    pub init_entropy_coef: f64,
    pub init_safety_coef: f64,
    pub target_entropy: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps with uniformly random actions before learning.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub grad_clip: f64,
}

impl Default for WcsacConfig {
    fn default() -> Self {
        WcsacConfig {
            risk_level: 0.1,
            cost_limit: 0.1,
            horizon: 10,
            discount: 0.99,
            hidden: vec![64, 64],
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            lr_entropy: 3e-4,
            lr_safety: 2.0,
            init_entropy_coef: 0.2,
            init_safety_coef: 0.0,
            target_entropy: -1.0,
            tau: 0.005,
            batch_size: 128,
            replay_capacity: 100_000,
            warmup_steps: 1000,
            updates_per_step: 1,
            grad_clip: 10.0,
        }
    }
}

impl WcsacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.risk_level > 0.0 && self.risk_level <= 1.0) {
            return Err(Error::Config(format!("risk_level {} not in (0, 1]", self.risk_level)));
        }
        if !(0.0..1.0).contains(&self.discount) || self.horizon == 0 || self.batch_size == 0 {
            return Err(Error::Config("invalid discount, horizon or batch size".into()));
        }
        if self.init_entropy_coef <= 0.0 || self.init_safety_coef < 0.0 {
            return Err(Error::Config("multipliers must start positive / non-negative".into()));
        }
        Ok(())
    }

    /// Value of the discounted remaining cost, averaged over the steps of an
    /// episode, when cost accrues at the uniform rate that exactly meets
    /// `cost_limit`.
    pub fn per_visit_cost_limit(&self) -> f64 {
        let t = self.horizon;
        let rate = self.cost_limit / t as f64;
        let remaining: f64 = (0..t)
            .map(|s| (0..t - s).map(|j| self.discount.powi(j as i32)).sum::<f64>())
            .sum();
        rate * remaining / t as f64
    }
}

/// Every learnable quantity of the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcsacParams {
    /// Outputs `[mean, raw log std]` of the pre-squash Gaussian.
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    /// Mean of the discounted remaining cost.
    pub qc: Mlp,
    /// Variance of the discounted remaining cost, through a softplus.
    pub vc: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub qc_target: Mlp,
    pub vc_target: Mlp,
    pub log_entropy_coef: f64,
    pub safety_coef: f64,
}

impl WcsacParams {
    pub fn new<R: Rng + ?Sized>(cfg: &WcsacConfig, rng: &mut R) -> Self {
        let sizes = |input: usize, out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(&cfg.hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new(&sizes(OBS_DIM, 2), 0.01, rng);
        let q1 = Mlp::new(&sizes(CRITIC_IN, 1), 1.0, rng);
        let q2 = Mlp::new(&sizes(CRITIC_IN, 1), 1.0, rng);
        // Per-step costs are small fractions of episode traffic, so the cost
        // heads start near zero instead of at O(1).
        let qc = Mlp::new(&sizes(CRITIC_IN, 1), 0.01, rng);
        let mut vc = Mlp::new(&sizes(CRITIC_IN, 1), 0.01, rng);
        let n = vc.num_params();
        vc.params_mut()[n - 1] = inverse_softplus(INIT_COST_VARIANCE);
        WcsacParams {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            qc_target: qc.clone(),
            vc_target: vc.clone(),
            actor,
            q1,
            q2,
            qc,
            vc,
            log_entropy_coef: cfg.init_entropy_coef.ln(),
            safety_coef: cfg.init_safety_coef,
        }
    }

    pub fn entropy_coef(&self) -> f64 {
        self.log_entropy_coef.exp()
    }

    /// Squashed action in [-1, 1]; the mode when `noise` is `None`.
    pub fn action(&self, obs: &[f64], noise: Option<f64>) -> f64 {
        let s = sample_actor(&self.actor, obs, noise.unwrap_or(0.0));
        s.a
    }

    fn all_finite(&self) -> bool {
        [&self.actor, &self.q1, &self.q2, &self.qc, &self.vc]
            .iter()
            .all(|n| all_finite(n.params()))
            && self.log_entropy_coef.is_finite()
            && self.safety_coef.is_finite()
    }
}

/// One reparameterised actor draw with everything needed to backpropagate.
pub struct ActorSample {
    cache: Cache,
    sigma: f64,
    dlog_std_draw: f64,
    pub a: f64,
    pub log_prob: f64,
}

pub fn sample_actor(actor: &Mlp, obs: &[f64], eps: f64) -> ActorSample {
    let cache = actor.forward(obs);
    let (mean, raw) = (cache.output()[0], cache.output()[1]);
    let (log_std, dlog_std_draw) = bounded_log_std(raw);
    let sigma = log_std.exp();
    let u = mean + sigma * eps;
    let a = u.tanh();
    let log_prob = gaussian_log_prob(u, mean, log_std) - squash_log_det(a);
    ActorSample {
        cache,
        sigma,
        dlog_std_draw,
        a,
        log_prob,
    }
}

pub fn critic_input(obs: &[f64], action: f64) -> [f64; CRITIC_IN] {
    let mut x = [0.0; CRITIC_IN];
    x[..OBS_DIM].copy_from_slice(obs);
    x[OBS_DIM] = action;
    x
}

/// `0.5 * mean((out - y)^2)` and its parameter gradient, where `out` is the
/// network output or its softplus.
pub fn regression_loss(net: &Mlp, inputs: &[[f64; CRITIC_IN]], targets: &[f64], softplus_out: bool) -> (f64, Vec<f64>) {
    let b = inputs.len() as f64;
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let cache = net.forward(x);
        let raw = cache.output()[0];
        let (out, dout) = if softplus_out {
            (softplus(raw), sigmoid(raw))
        } else {
            (raw, 1.0)
        };
        let err = out - y;
        loss += 0.5 * err * err / b;
        net.backward(&cache, &[err * dout / b], Some(&mut grad));
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticTargets {
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Bellman targets for the reward critics, the cost mean and the cost
/// variance. Cost targets are empty when `with_cost` is false.
pub fn critic_targets(
    p: &WcsacParams,
    batch: &[Transition],
    noise_next: &[f64],
    discount: f64,
    with_cost: bool,
) -> CriticTargets {
    let alpha = p.entropy_coef();
    let mut t = CriticTargets {
        reward: Vec::with_capacity(batch.len()),
        cost: Vec::new(),
        variance: Vec::new(),
    };
    for (tr, &eps) in batch.iter().zip(noise_next) {
        let live = if tr.done { 0.0 } else { 1.0 };
        let next = sample_actor(&p.actor, &tr.next_obs, eps);
        let xn = critic_input(&tr.next_obs, next.a);
        let q = p.q1_target.predict(&xn)[0].min(p.q2_target.predict(&xn)[0]);
        t.reward
            .push(tr.reward + discount * live * (q - alpha * next.log_prob));
        if with_cost {
            let qc_next = p.qc_target.predict(&xn)[0];
            let vc_next = softplus(p.vc_target.predict(&xn)[0]);
            let qc_now = p.qc.predict(&critic_input(&tr.obs, tr.action))[0];
            let c = tr.cost;
            t.cost.push(c + discount * live * qc_next);
            let var = c * c + 2.0 * discount * live * c * qc_next
                + discount * discount * live * (vc_next + qc_next * qc_next)
                - qc_now * qc_now;
            t.variance.push(var.max(VAR_EPS));
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_log_prob: f64,
    /// Batch mean of the cost CVaR at the sampled actions (0 without a
    /// safety term).
    pub mean_cvar: f64,
}

/// `mean(alpha * log pi - min Q + k * CVaR)` with reparameterised actions.
/// `safety` is `(k, std_factor)`; `None` gives the plain SAC objective.
pub fn actor_loss(
    p: &WcsacParams,
    obs: &[[f64; OBS_DIM]],
    noise: &[f64],
    safety: Option<(f64, f64)>,
) -> ActorLoss {
    let alpha = p.entropy_coef();
    let b = obs.len() as f64;
    let mut grad = vec![0.0; p.actor.num_params()];
    let (mut loss, mut sum_logp, mut sum_cvar) = (0.0, 0.0, 0.0);
    for (o, &eps) in obs.iter().zip(noise) {
        let s = sample_actor(&p.actor, o, eps);
        let x = critic_input(o, s.a);
        let c1 = p.q1.forward(&x);
        let c2 = p.q2.forward(&x);
        let (q, dq_da) = if c1.output()[0] <= c2.output()[0] {
            (c1.output()[0], p.q1.backward(&c1, &[1.0], None)[OBS_DIM])
        } else {
            (c2.output()[0], p.q2.backward(&c2, &[1.0], None)[OBS_DIM])
        };
        let mut l = alpha * s.log_prob - q;
        let mut dl_da = -dq_da;
        if let Some((k, factor)) = safety {
            let cc = p.qc.forward(&x);
            let cv = p.vc.forward(&x);
            let raw = cv.output()[0];
            let sd = (softplus(raw) + VAR_EPS).sqrt();
            let cvar = cc.output()[0] + factor * sd;
            sum_cvar += cvar;
            l += k * cvar;
            if k != 0.0 {
                let dqc = p.qc.backward(&cc, &[1.0], None)[OBS_DIM];
                let dvc = p.vc.backward(&cv, &[1.0], None)[OBS_DIM];
                dl_da += k * (dqc + factor * 0.5 / sd * sigmoid(raw) * dvc);
            }
        }
        loss += l / b;
        sum_logp += s.log_prob;
        let dl_du = alpha * squash_log_det_grad(s.a) + dl_da * (1.0 - s.a * s.a);
        let dl_draw = (dl_du * s.sigma * eps - alpha) * s.dlog_std_draw;
        p.actor
            .backward(&s.cache, &[dl_du / b, dl_draw / b], Some(&mut grad));
    }
    ActorLoss {
        loss,
        grad,
        mean_log_prob: sum_logp / b,
        mean_cvar: sum_cvar / b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    /// Full worst-case update.
    Constrained,
    /// Plain SAC: cost critics and the safety multiplier are left untouched.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub reward_critic_loss: f64,
    pub cost_critic_loss: f64,
    pub variance_critic_loss: f64,
    pub actor_loss: f64,
    pub entropy_coef: f64,
    pub safety_coef: f64,
    pub mean_cvar: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Optimizers {
    actor: Adam,
    q1: Adam,
    q2: Adam,
    qc: Adam,
    vc: Adam,
    entropy: Adam,
}

impl Optimizers {
    fn new(p: &WcsacParams, cfg: &WcsacConfig) -> Self {
        Optimizers {
            actor: Adam::new(p.actor.num_params(), cfg.lr_actor),
            q1: Adam::new(p.q1.num_params(), cfg.lr_critic),
            q2: Adam::new(p.q2.num_params(), cfg.lr_critic),
            qc: Adam::new(p.qc.num_params(), cfg.lr_critic),
            vc: Adam::new(p.vc.num_params(), cfg.lr_critic),
            entropy: Adam::new(1, cfg.lr_entropy),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WcsacAgent {
    config: WcsacConfig,
    pub params: WcsacParams,
    opt: Optimizers,
    rng: ChaCha8Rng,
    updates: u64,
}

impl WcsacAgent {
    pub fn new(config: WcsacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = WcsacParams::new(&config, &mut rng);
        Ok(Self::from_params(config, params, rng))
    }

    /// Resume from existing parameters with fresh optimiser state.
    pub fn from_params(config: WcsacConfig, params: WcsacParams, rng: ChaCha8Rng) -> Self {
        let opt = Optimizers::new(&params, &config);
        WcsacAgent {
            config,
            params,
            opt,
            rng,
            updates: 0,
        }
    }

    pub fn config(&self) -> &WcsacConfig {
        &self.config
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Squashed action; stochastic draws use the agent's own stream.
    pub fn act(&mut self, obs: &[f64], deterministic: bool) -> f64 {
        let noise = if deterministic {
            None
        } else {
            Some(std_normal(&mut self.rng))
        };
        self.params.action(obs, noise)
    }

    pub fn random_action(&mut self) -> f64 {
        self.rng.random_range(-1.0..=1.0)
    }

    pub fn update(&mut self, buffer: &ReplayBuffer, mode: UpdateMode) -> Result<UpdateStats> {
        if buffer.is_empty() {
            return Err(Error::Input("replay buffer is empty".into()));
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng);
        let noise_next: Vec<f64> = (0..batch.len()).map(|_| std_normal(&mut self.rng)).collect();
        let noise_pi: Vec<f64> = (0..batch.len()).map(|_| std_normal(&mut self.rng)).collect();
        self.update_on_batch(&batch, &noise_next, &noise_pi, mode)
    }

    /// One gradient step of every component on a fixed batch and fixed
    /// reparameterisation noise.
    pub fn update_on_batch(
        &mut self,
        batch: &[Transition],
        noise_next: &[f64],
        noise_pi: &[f64],
        mode: UpdateMode,
    ) -> Result<UpdateStats> {
        if batch.is_empty() || noise_next.len() != batch.len() || noise_pi.len() != batch.len() {
            return Err(Error::Input("update needs a non-empty batch with matching noise".into()));
        }
        let cfg = &self.config;
        let factor = cvar_std_factor(cfg.risk_level)?;
        let constrained = mode == UpdateMode::Constrained;
        let targets = critic_targets(&self.params, batch, noise_next, cfg.discount, constrained);
        let inputs: Vec<[f64; CRITIC_IN]> = batch.iter().map(|t| critic_input(&t.obs, t.action)).collect();
        let mut stats = UpdateStats::default();

        let p = &mut self.params;
        let (l1, mut g1) = regression_loss(&p.q1, &inputs, &targets.reward, false);
        let (l2, mut g2) = regression_loss(&p.q2, &inputs, &targets.reward, false);
        clip_grad_norm(&mut g1, cfg.grad_clip);
        clip_grad_norm(&mut g2, cfg.grad_clip);
        self.opt.q1.step(p.q1.params_mut(), &g1);
        self.opt.q2.step(p.q2.params_mut(), &g2);
        stats.reward_critic_loss = 0.5 * (l1 + l2);
        if constrained {
            let (lc, mut gc) = regression_loss(&p.qc, &inputs, &targets.cost, false);
            let (lv, mut gv) = regression_loss(&p.vc, &inputs, &targets.variance, true);
            clip_grad_norm(&mut gc, cfg.grad_clip);
            clip_grad_norm(&mut gv, cfg.grad_clip);
            self.opt.qc.step(p.qc.params_mut(), &gc);
            self.opt.vc.step(p.vc.params_mut(), &gv);
            stats.cost_critic_loss = lc;
            stats.variance_critic_loss = lv;
        }

        let obs: Vec<[f64; OBS_DIM]> = batch.iter().map(|t| t.obs).collect();
        let safety = constrained.then_some((p.safety_coef, factor));
        let mut al = actor_loss(p, &obs, noise_pi, safety);
        clip_grad_norm(&mut al.grad, cfg.grad_clip);
        self.opt.actor.step(p.actor.params_mut(), &al.grad);
        stats.actor_loss = al.loss;
        stats.mean_log_prob = al.mean_log_prob;
        stats.mean_cvar = al.mean_cvar;

        let ent_grad = -(al.mean_log_prob + cfg.target_entropy);
        let mut log_ent = [p.log_entropy_coef];
        self.opt.entropy.step(&mut log_ent, &[ent_grad]);
        p.log_entropy_coef = log_ent[0];

        if constrained {
            let violation = al.mean_cvar - cfg.per_visit_cost_limit();
            p.safety_coef = (p.safety_coef + cfg.lr_safety * violation).max(0.0);
        }

        p.q1_target.soft_update_from(&p.q1, cfg.tau);
        p.q2_target.soft_update_from(&p.q2, cfg.tau);
        if constrained {
            p.qc_target.soft_update_from(&p.qc, cfg.tau);
            p.vc_target.soft_update_from(&p.vc, cfg.tau);
        }
        stats.entropy_coef = p.entropy_coef();
        stats.safety_coef = p.safety_coef;
        self.updates += 1;

        let losses = [
            stats.reward_critic_loss,
            stats.cost_critic_loss,
            stats.variance_critic_loss,
            stats.actor_loss,
        ];
        if !losses.iter().all(|l| l.is_finite()) || !p.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss or parameters after update {}",
                self.updates
            )));
        }
        Ok(stats)
    }
}
