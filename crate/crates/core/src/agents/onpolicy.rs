//! Rollouts, advantage estimation and value regression for the on-policy
//! agents.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, Mlp};
use super::policy::GaussianPolicy;
use crate::env::{Action, SliceEnv, OBS_DIM};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub obs: [f64; OBS_DIM],
    /// Pre-squash action.
    pub u: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub cost: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepSample>,
    pub final_beta: f64,
}

impl Trajectory {
    pub fn mean_bandwidth(&self) -> f64 {
        self.steps.iter().map(|s| s.bandwidth).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

/// Run one episode with a stochastic Gaussian policy.
pub fn collect_trajectory<R: Rng + ?Sized>(
    env: &mut SliceEnv,
    policy: &GaussianPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut obs = env.reset(rng)?.features();
    let mut steps = Vec::with_capacity(env.config().dti_count);
    loop {
        let (u, log_prob) = policy.sample(&obs, rng);
        let out = env.step(Action::Raw(u.tanh()))?;
        steps.push(StepSample {
            obs,
            u,
            log_prob,
            reward: out.reward,
            cost: out.cost,
            bandwidth: out.info.bandwidth,
        });
        obs = out.next_observation.features();
        if out.done {
            return Ok(Trajectory {
                steps,
                final_beta: out.next_observation.beta_so_far,
            });
        }
    }
}

/// Generalised advantage estimates and discounted return targets for one
/// episode ending in a terminal state.
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + discount * next - values[t];
        acc = delta + discount * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

pub fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// `0.5 * mean((V(o) - y)^2)` and its parameter gradient.
pub fn value_loss(net: &Mlp, obs: &[[f64; OBS_DIM]], targets: &[f64]) -> (f64, Vec<f64>) {
    let b = obs.len() as f64;
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    for (o, y) in obs.iter().zip(targets) {
        let cache = net.forward(o);
        let err = cache.output()[0] - y;
        loss += 0.5 * err * err / b;
        net.backward(&cache, &[err / b], Some(&mut grad));
    }
    (loss, grad)
}

/// State-value baseline trained by minibatch regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub net: Mlp,
    opt: Adam,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::new(&sizes, 1.0, rng);
        let opt = Adam::new(net.num_params(), lr);
        ValueFunction { net, opt }
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.net.predict(obs)[0]
    }

    /// Returns the loss before fitting.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        obs: &[[f64; OBS_DIM]],
        targets: &[f64],
        epochs: usize,
        minibatch: usize,
        rng: &mut R,
    ) -> f64 {
        let initial = value_loss(&self.net, obs, targets).0;
        let mut idx: Vec<usize> = (0..obs.len()).collect();
        for _ in 0..epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(minibatch.max(1)) {
                let o: Vec<_> = chunk.iter().map(|&i| obs[i]).collect();
                let y: Vec<_> = chunk.iter().map(|&i| targets[i]).collect();
                let (_, g) = value_loss(&self.net, &o, &y);
                self.opt.step(self.net.params_mut(), &g);
            }
        }
        initial
    }
}

/// Advantages and return targets of several episodes, concatenated.
/// `signal(episode, step)` gives the per-step quantity being estimated.
pub fn batch_advantages(
    trajectories: &[Trajectory],
    signal: impl Fn(usize, usize) -> f64,
    value: &ValueFunction,
    discount: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::new();
    let mut ret = Vec::new();
    for (e, tr) in trajectories.iter().enumerate() {
        let r: Vec<f64> = (0..tr.steps.len()).map(|t| signal(e, t)).collect();
        let v: Vec<f64> = tr.steps.iter().map(|s| value.value(&s.obs)).collect();
        let (a, g) = gae(&r, &v, discount, lambda);
        adv.extend(a);
        ret.extend(g);
    }
    (adv, ret)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::gradcheck::{assert_grad_close, finite_difference};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_with_lambda_one_is_return_minus_value() {
        let r = [1.0, 0.5, 2.0];
        let v = [0.3, -0.2, 0.7];
        let g = 0.9;
        let (adv, ret) = gae(&r, &v, g, 1.0);
        let mc = [1.0 + g * 0.5 + g * g * 2.0, 0.5 + g * 2.0, 2.0];
        for t in 0..3 {
            assert!((ret[t] - mc[t]).abs() < 1e-12);
            assert!((adv[t] - (mc[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_lambda_zero_is_td_error() {
        let r = [1.0, 0.5];
        let v = [0.3, -0.2];
        let (adv, _) = gae(&r, &v, 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * -0.2 - 0.3)).abs() < 1e-12);
        assert!((adv[1] - (0.5 - -0.2)).abs() < 1e-12);
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vf = ValueFunction::new(&[8, 8], 1e-3, &mut rng);
        let obs: Vec<[f64; OBS_DIM]> = (0..32)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let y: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = value_loss(&vf.net, &obs, &y);
        let f = |p: &[f64]| {
            let mut n = vf.net.clone();
            n.set_params(p);
            value_loss(&n, &obs, &y).0
        };
        assert_grad_close(&g, &finite_difference(f, vf.net.params()), 1e-4);
    }
}
