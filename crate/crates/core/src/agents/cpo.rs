//! Constrained policy optimisation with a trust region, optionally with a
//! terminal penalty on the episode's excess degradation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{all_finite, dot};
use super::onpolicy::{batch_advantages, normalize, Trajectory, ValueFunction};
use super::policy::{gaussian_kl, GaussianPolicy};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};

const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpoConfig {
    /// Trust-region radius on the mean KL divergence.
    pub max_kl: f64,
    /// Limit on the expected episode cost.
    pub cost_limit: f64,
    /// Weight of the terminal excess-degradation penalty; 0 disables it.
    /// The average-cost agent always runs with 0.
    pub shaping_coef: f64,
    /// Degradation level above which the terminal penalty grows.
    pub beta_thresh: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub lr_value: f64,
    pub value_epochs: usize,
    pub minibatch: usize,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coef: f64,
    pub backtrack_iters: usize,
}

impl Default for CpoConfig {
    fn default() -> Self {
        CpoConfig {
            max_kl: 0.01,
            cost_limit: 0.1,
            shaping_coef: 10.0,
            beta_thresh: 0.1,
            discount: 0.99,
            gae_lambda: 0.95,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            lr_value: 1e-3,
            value_epochs: 10,
            minibatch: 64,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coef: 0.8,
            backtrack_iters: 10,
        }
    }
}

/// `shaping * (exp(max(0, beta - beta_thresh)) - 1)`.
pub fn terminal_cost(final_beta: f64, beta_thresh: f64, shaping: f64) -> f64 {
    shaping * ((final_beta - beta_thresh).max(0.0).exp() - 1.0)
}

/// Per-step costs of an episode including the terminal penalty.
pub fn shaped_costs(tr: &Trajectory, beta_thresh: f64, shaping: f64) -> Vec<f64> {
    let mut c: Vec<f64> = tr.steps.iter().map(|s| s.cost).collect();
    if let Some(last) = c.last_mut() {
        *last += terminal_cost(tr.final_beta, beta_thresh, shaping);
    }
    c
}

/// Solve `A x = b` for symmetric positive-definite `A` given as a product.
pub fn conjugate_gradient(avp: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], iters: usize, tol: f64) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr <= tol {
            break;
        }
        let ap = avp(&p);
        let alpha = rr / (dot(&p, &ap) + EPS * EPS);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

/// Which branch of the trust-region dual produced the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepCase {
    /// No step within the trust region can satisfy the constraint; move
    /// purely to reduce cost.
    Infeasible,
    /// Constraint currently violated but recoverable inside the region.
    ViolatedRecoverable,
    /// Constraint satisfied and the boundary cuts the region.
    SatisfiedIntersecting,
    /// The whole trust region satisfies the constraint.
    SatisfiedInactive,
    /// Cost gradient vanishes and the constraint holds.
    NoCostGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpoDirection {
    pub direction: Vec<f64>,
    pub case: StepCase,
    pub lambda: f64,
    pub nu: f64,
}

/// Maximise `g.d` subject to `c + b.d <= 0` and `0.5 d'Hd <= max_kl`, with
/// `hinv` applying `H^-1`. `g` and `b` are the reward and cost surrogate
/// gradients (ascent directions).
pub fn cpo_direction(g: &[f64], b: &[f64], c: f64, max_kl: f64, hinv: impl Fn(&[f64]) -> Vec<f64>) -> CpoDirection {
    let x = hinv(g);
    let q = dot(g, &x).max(0.0);
    let trust_step = |x: &[f64]| -> Vec<f64> {
        let scale = if q > EPS * EPS { (2.0 * max_kl / q).sqrt() } else { 0.0 };
        x.iter().map(|v| v * scale).collect()
    };
    if dot(b, b) <= EPS && c < 0.0 {
        return CpoDirection {
            direction: trust_step(&x),
            case: StepCase::NoCostGradient,
            lambda: (q / (2.0 * max_kl)).sqrt(),
            nu: 0.0,
        };
    }
    let w = hinv(b);
    let r = dot(g, &w);
    let s = dot(b, &w).max(EPS);
    let a_coef = q - r * r / s;
    let b_coef = 2.0 * max_kl - c * c / s;
    let case = if c < 0.0 && b_coef < 0.0 {
        StepCase::SatisfiedInactive
    } else if c < 0.0 {
        StepCase::SatisfiedIntersecting
    } else if b_coef >= 0.0 {
        StepCase::ViolatedRecoverable
    } else {
        StepCase::Infeasible
    };
    let (lambda, nu) = match case {
        StepCase::SatisfiedInactive | StepCase::NoCostGradient => ((q / (2.0 * max_kl)).sqrt(), 0.0),
        StepCase::SatisfiedIntersecting | StepCase::ViolatedRecoverable => {
            // The cost multiplier is (lambda c + r) / s; split lambda into the
            // range where it is positive (a) and where it clips to 0 (b).
            let ratio = -r / c;
            let (la, lb) = if c < 0.0 {
                ((0.0, ratio), (ratio, f64::INFINITY))
            } else {
                ((ratio, f64::INFINITY), (0.0, ratio))
            };
            let proj = |v: f64, l: (f64, f64)| v.min(l.1).max(l.0);
            let lam_a = proj((a_coef / (b_coef + EPS)).max(0.0).sqrt(), la);
            let lam_b = proj((q / (2.0 * max_kl)).sqrt(), lb);
            let f_a = -0.5 * (a_coef / (lam_a + EPS) + b_coef * lam_a) + r * c / s;
            let f_b = -0.5 * (q / (lam_b + EPS) + 2.0 * max_kl * lam_b);
            let lam = if f_a >= f_b { lam_a } else { lam_b };
            (lam, (lam * c + r).max(0.0) / s)
        }
        StepCase::Infeasible => (0.0, (2.0 * max_kl / s).sqrt()),
    };
    let direction = if case == StepCase::Infeasible {
        w.iter().map(|v| -nu * v).collect()
    } else if case == StepCase::SatisfiedInactive {
        trust_step(&x)
    } else {
        x.iter().zip(&w).map(|(xi, wi)| (xi - nu * wi) / (lambda + EPS)).collect()
    };
    CpoDirection {
        direction,
        case,
        lambda,
        nu,
    }
}

/// Samples of one update with everything frozen at the behaviour policy.
#[derive(Debug, Clone)]
pub struct CpoBatch {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub u: Vec<f64>,
    pub log_prob_old: Vec<f64>,
    pub mean_old: Vec<f64>,
    pub log_std_old: f64,
    pub reward_adv: Vec<f64>,
    pub cost_adv: Vec<f64>,
    /// Scales per-sample cost advantages to episode-cost changes.
    pub horizon: f64,
}

impl CpoBatch {
    pub fn new(policy: &GaussianPolicy, obs: Vec<[f64; OBS_DIM]>, u: Vec<f64>, reward_adv: Vec<f64>, cost_adv: Vec<f64>, horizon: f64) -> Self {
        let mean_old: Vec<f64> = obs.iter().map(|o| policy.mean(o)).collect();
        let log_prob_old = obs.iter().zip(&u).map(|(o, &u)| policy.log_prob(o, u)).collect();
        CpoBatch {
            obs,
            u,
            log_prob_old,
            mean_old,
            log_std_old: policy.log_std,
            reward_adv,
            cost_adv,
            horizon,
        }
    }

    fn ratios(&self, policy: &GaussianPolicy) -> Vec<f64> {
        self.obs
            .iter()
            .zip(&self.u)
            .zip(&self.log_prob_old)
            .map(|((o, &u), lp)| (policy.log_prob(o, u) - lp).exp())
            .collect()
    }

    /// `(mean(rho A_r), horizon * mean(rho A_c))`.
    pub fn surrogates(&self, policy: &GaussianPolicy) -> (f64, f64) {
        let n = self.obs.len() as f64;
        let rho = self.ratios(policy);
        let r = dot(&rho, &self.reward_adv) / n;
        let c = self.horizon * dot(&rho, &self.cost_adv) / n;
        (r, c)
    }

    /// Gradients of both surrogates.
    pub fn surrogate_grads(&self, policy: &GaussianPolicy) -> (Vec<f64>, Vec<f64>) {
        let n = self.obs.len() as f64;
        let mut g = vec![0.0; policy.num_params()];
        let mut b = vec![0.0; policy.num_params()];
        for (i, rho) in self.ratios(policy).into_iter().enumerate() {
            let (o, u) = (&self.obs[i], self.u[i]);
            policy.accumulate_log_prob_grad(o, u, rho * self.reward_adv[i] / n, &mut g);
            policy.accumulate_log_prob_grad(o, u, self.horizon * rho * self.cost_adv[i] / n, &mut b);
        }
        (g, b)
    }

    /// Mean KL(old || policy) and its gradient.
    pub fn kl_and_grad(&self, policy: &GaussianPolicy) -> (f64, Vec<f64>) {
        let n = self.obs.len() as f64;
        let k = policy.mean_net.num_params();
        let mut grad = vec![0.0; policy.num_params()];
        let mut kl = 0.0;
        let var_new = (2.0 * policy.log_std).exp();
        let var_old = (2.0 * self.log_std_old).exp();
        for (o, &mu_old) in self.obs.iter().zip(&self.mean_old) {
            let cache = policy.mean_net.forward(o);
            let mu = cache.output()[0];
            kl += gaussian_kl(mu_old, self.log_std_old, mu, policy.log_std) / n;
            policy
                .mean_net
                .backward(&cache, &[(mu - mu_old) / var_new / n], Some(&mut grad[..k]));
            grad[k] += (1.0 - (var_old + (mu - mu_old).powi(2)) / var_new) / n;
        }
        (kl, grad)
    }

    pub fn mean_kl(&self, policy: &GaussianPolicy) -> f64 {
        let n = self.obs.len() as f64;
        self.obs
            .iter()
            .zip(&self.mean_old)
            .map(|(o, &m)| gaussian_kl(m, self.log_std_old, policy.mean(o), policy.log_std))
            .sum::<f64>()
            / n
    }

    /// Fisher-vector product at the behaviour policy plus damping.
    pub fn fisher_vector_product(&self, policy: &GaussianPolicy, v: &[f64], damping: f64) -> Vec<f64> {
        let n = self.obs.len() as f64;
        let k = policy.mean_net.num_params();
        let inv_var = (-2.0 * policy.log_std).exp();
        let mut out = vec![0.0; v.len()];
        for o in &self.obs {
            let jv = policy.mean_net.jvp(o, &v[..k])[0];
            let cache = policy.mean_net.forward(o);
            policy
                .mean_net
                .backward(&cache, &[jv * inv_var / n], Some(&mut out[..k]));
        }
        out[k] = 2.0 * v[k];
        for (o, vi) in out.iter_mut().zip(v) {
            *o += damping * vi;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoStats {
    pub case: StepCase,
    /// Backtracking index of the accepted step, if any.
    pub accepted_at: Option<usize>,
    pub kl: f64,
    pub episode_cost: f64,
    pub reward_value_loss: f64,
    pub cost_value_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoAgent {
    pub config: CpoConfig,
    pub policy: GaussianPolicy,
    pub reward_value: ValueFunction,
    pub cost_value: ValueFunction,
    rng: ChaCha8Rng,
}

impl CpoAgent {
    pub fn new(config: CpoConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(OBS_DIM, &config.hidden, config.init_log_std, &mut rng);
        let reward_value = ValueFunction::new(&config.hidden, config.lr_value, &mut rng);
        let cost_value = ValueFunction::new(&config.hidden, config.lr_value, &mut rng);
        CpoAgent {
            config,
            policy,
            reward_value,
            cost_value,
            rng,
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Build the frozen batch of an update from raw episodes.
    pub fn prepare(&self, trajectories: &[Trajectory]) -> (CpoBatch, f64, Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let costs: Vec<Vec<f64>> = trajectories
            .iter()
            .map(|t| shaped_costs(t, cfg.beta_thresh, cfg.shaping_coef))
            .collect();
        let (mut radv, rret) = batch_advantages(
            trajectories,
            |e, t| trajectories[e].steps[t].reward,
            &self.reward_value,
            cfg.discount,
            cfg.gae_lambda,
        );
        let (mut cadv, cret) = batch_advantages(trajectories, |e, t| costs[e][t], &self.cost_value, cfg.discount, cfg.gae_lambda);
        normalize(&mut radv);
        let cmean = cadv.iter().sum::<f64>() / cadv.len().max(1) as f64;
        cadv.iter_mut().for_each(|a| *a -= cmean);
        let episodes = trajectories.len().max(1) as f64;
        let episode_cost = costs.iter().map(|c| c.iter().sum::<f64>()).sum::<f64>() / episodes;
        let horizon = trajectories.iter().map(|t| t.steps.len()).sum::<usize>() as f64 / episodes;
        let steps: Vec<_> = trajectories.iter().flat_map(|t| t.steps.iter()).collect();
        let batch = CpoBatch::new(
            &self.policy,
            steps.iter().map(|s| s.obs).collect(),
            steps.iter().map(|s| s.u).collect(),
            radv,
            cadv,
            horizon,
        );
        (batch, episode_cost, rret, cret)
    }

    /// Trust-region direction for a prepared batch.
    pub fn direction(&self, batch: &CpoBatch, episode_cost: f64) -> CpoDirection {
        let (g, b) = batch.surrogate_grads(&self.policy);
        let c = episode_cost - self.config.cost_limit;
        let hinv = |v: &[f64]| {
            conjugate_gradient(
                |p| batch.fisher_vector_product(&self.policy, p, self.config.cg_damping),
                v,
                self.config.cg_iters,
                1e-20,
            )
        };
        cpo_direction(&g, &b, c, self.config.max_kl, hinv)
    }

    pub fn update(&mut self, trajectories: &[Trajectory]) -> Result<CpoStats> {
        if trajectories.iter().all(|t| t.steps.is_empty()) {
            return Err(Error::Input("CPO update needs at least one step".into()));
        }
        let (batch, episode_cost, rret, cret) = self.prepare(trajectories);
        if !all_finite(&batch.reward_adv) || !all_finite(&batch.cost_adv) || !episode_cost.is_finite() {
            return Err(Error::Divergence("non-finite advantages in CPO batch".into()));
        }
        let dir = self.direction(&batch, episode_cost);
        let c = episode_cost - self.config.cost_limit;
        let (r_old, c_old) = batch.surrogates(&self.policy);
        let theta = self.policy.flat_params();
        let mut accepted_at = None;
        let mut kl = 0.0;
        for j in 0..self.config.backtrack_iters {
            let step = self.config.backtrack_coef.powi(j as i32);
            let cand: Vec<f64> = theta.iter().zip(&dir.direction).map(|(t, d)| t + step * d).collect();
            let mut trial = self.policy.clone();
            trial.set_flat_params(&cand);
            let k = batch.mean_kl(&trial);
            let (r_new, c_new) = batch.surrogates(&trial);
            let reward_ok = match dir.case {
                StepCase::Infeasible | StepCase::ViolatedRecoverable => true,
                _ => r_new >= r_old,
            };
            if k <= self.config.max_kl && reward_ok && c_new - c_old <= (-c).max(0.0) {
                self.policy = trial;
                accepted_at = Some(j);
                kl = k;
                break;
            }
        }
        let obs = batch.obs.clone();
        let cfg = &self.config;
        let rl = self
            .reward_value
            .fit(&obs, &rret, cfg.value_epochs, cfg.minibatch, &mut self.rng);
        let cl = self
            .cost_value
            .fit(&obs, &cret, cfg.value_epochs, cfg.minibatch, &mut self.rng);
        if !all_finite(&self.policy.flat_params()) || !rl.is_finite() || !cl.is_finite() {
            return Err(Error::Divergence("CPO produced non-finite values".into()));
        }
        Ok(CpoStats {
            case: dir.case,
            accepted_at,
            kl,
            episode_cost,
            reward_value_loss: rl,
            cost_value_loss: cl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::gradcheck::{assert_grad_close, finite_difference};
    use rand::Rng;

    fn identity(v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    #[test]
    fn toy_trust_region_cases() {
        let g = [1.0, 0.0];
        let b = [0.0, 1.0];
        let delta: f64 = 0.01;
        let r = (2.0 * delta).sqrt();

        let far = cpo_direction(&g, &b, -1.0, delta, identity);
        assert_eq!(far.case, StepCase::SatisfiedInactive);
        assert!((far.direction[0] - r).abs() < 1e-12 && far.direction[1].abs() < 1e-12);

        // Boundary cuts the ball: best point has d2 = -c and d1 = sqrt(2 delta - c^2).
        let cut = cpo_direction(&g, &b, 0.05, delta, identity);
        assert_eq!(cut.case, StepCase::ViolatedRecoverable);
        assert!((cut.direction[1] + 0.05).abs() < 1e-6, "{:?}", cut.direction);
        assert!((cut.direction[0] - (2.0 * delta - 0.0025f64).sqrt()).abs() < 1e-6);

        let bad = cpo_direction(&g, &b, 0.5, delta, identity);
        assert_eq!(bad.case, StepCase::Infeasible);
        assert!(bad.direction[0].abs() < 1e-12 && (bad.direction[1] + r).abs() < 1e-12);

        // Satisfied with the boundary crossing the ball: the plain step
        // would violate, so the result sits on the boundary.
        let g2 = [1.0, 1.0];
        let near = cpo_direction(&g2, &b, -0.05, delta, identity);
        assert_eq!(near.case, StepCase::SatisfiedIntersecting);
        assert!((near.direction[1] - 0.05).abs() < 1e-6, "{:?}", near.direction);
        assert!((near.direction[0] - (2.0 * delta - 0.0025f64).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn conjugate_gradient_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let avp = |v: &[f64]| (0..3).map(|i| dot(&a[i], v)).collect::<Vec<_>>();
        let b = [1.0, 2.0, 3.0];
        let x = conjugate_gradient(avp, &b, 10, 1e-30);
        let back = avp(&x);
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn terminal_penalty_only_above_threshold() {
        assert_eq!(terminal_cost(0.05, 0.1, 10.0), 0.0);
        assert!((terminal_cost(0.3, 0.1, 10.0) - 10.0 * (0.2f64.exp() - 1.0)).abs() < 1e-12);
    }

    fn random_batch(seed: u64) -> (GaussianPolicy, CpoBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = GaussianPolicy::new(OBS_DIM, &[8, 8], -0.4, &mut rng);
        for p in policy.mean_net.params_mut() {
            *p *= 20.0;
        }
        let obs: Vec<[f64; OBS_DIM]> = (0..32)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let u = obs.iter().map(|o| policy.sample(o, &mut rng).0).collect();
        let ra = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ca = (0..32).map(|_| rng.random_range(-0.1..0.1)).collect();
        let batch = CpoBatch::new(&policy, obs, u, ra, ca, 10.0);
        (policy, batch)
    }

    #[test]
    fn surrogate_gradients_match_finite_differences() {
        let (policy, batch) = random_batch(1);
        // Evaluate away from the behaviour policy so ratios differ from 1.
        let mut moved = policy.clone();
        let mut p = moved.flat_params();
        p.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * ((i % 7) as f64 - 3.0));
        moved.set_flat_params(&p);
        let (g, b) = batch.surrogate_grads(&moved);
        let set = |w: &[f64]| {
            let mut q = moved.clone();
            q.set_flat_params(w);
            batch.surrogates(&q)
        };
        assert_grad_close(&g, &finite_difference(|w| set(w).0, &p), 1e-4);
        assert_grad_close(&b, &finite_difference(|w| set(w).1, &p), 1e-4);
    }

    #[test]
    fn kl_gradient_and_fisher_product_match_finite_differences() {
        let (policy, batch) = random_batch(2);
        let theta = policy.flat_params();
        let mut moved = policy.clone();
        let shifted: Vec<f64> = theta.iter().map(|v| v + 0.02).collect();
        moved.set_flat_params(&shifted);
        let (_, grad) = batch.kl_and_grad(&moved);
        let kl_at = |w: &[f64]| {
            let mut q = policy.clone();
            q.set_flat_params(w);
            batch.mean_kl(&q)
        };
        assert_grad_close(&grad, &finite_difference(kl_at, &shifted), 1e-4);

        // Hessian of the KL at the behaviour policy along v.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fvp = batch.fisher_vector_product(&policy, &v, 0.0);
        let h = 1e-5;
        let grad_at = |s: f64| {
            let mut q = policy.clone();
            let w: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + s * vi).collect();
            q.set_flat_params(&w);
            batch.kl_and_grad(&q).1
        };
        let (gp, gm) = (grad_at(h), grad_at(-h));
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert_grad_close(&fvp, &fd, 1e-4);
    }

    #[test]
    fn zero_costs_give_the_unconstrained_trust_region_step() {
        let (policy, mut batch) = random_batch(4);
        batch.cost_adv.iter_mut().for_each(|a| *a = 0.0);
        let n = policy.num_params();
        let agent = CpoAgent {
            config: CpoConfig {
                hidden: vec![8, 8],
                cg_iters: 4 * n,
                ..CpoConfig::default()
            },
            policy: policy.clone(),
            reward_value: ValueFunction::new(&[8], 1e-3, &mut ChaCha8Rng::seed_from_u64(0)),
            cost_value: ValueFunction::new(&[8], 1e-3, &mut ChaCha8Rng::seed_from_u64(0)),
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let dir = agent.direction(&batch, 0.0);
        assert_eq!(dir.case, StepCase::NoCostGradient);

        // Dense oracle: build F + damping I column by column and solve it
        // by Gaussian elimination.
        let damping = agent.config.cg_damping;
        let m: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                batch.fisher_vector_product(&policy, &e, damping)
            })
            .collect();
        let (g, _) = batch.surrogate_grads(&policy);
        // m holds columns; transpose into an augmented row system.
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| m[j][i]).collect();
                row.push(g[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            let pivot = aug[col].clone();
            for (r, row) in aug.iter_mut().enumerate() {
                if r != col {
                    let f = row[col] / pivot[col];
                    for (a, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                        *a -= f * p;
                    }
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| aug[i][n] / aug[i][i]).collect();
        let scale = (2.0 * agent.config.max_kl / dot(&g, &x)).sqrt();
        for (d, xi) in dir.direction.iter().zip(&x) {
            assert!((d - scale * xi).abs() < 1e-6, "{d} vs {}", scale * xi);
        }
    }
}
