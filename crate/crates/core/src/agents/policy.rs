//! Tanh-squashed Gaussian action distributions shared by the gradient agents.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::Mlp;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps the squashing correction finite when `|tanh(u)| -> 1`.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Map an unconstrained value smoothly into `[LOG_STD_MIN, LOG_STD_MAX]`.
/// Returns the log std and its derivative.
pub fn bounded_log_std(raw: f64) -> (f64, f64) {
    let t = raw.tanh();
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    (LOG_STD_MIN + half * (t + 1.0), half * (1.0 - t * t))
}

pub fn gaussian_log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

/// `log(1 - tanh(u)^2 + eps)`, the change-of-variables term of the squash.
pub fn squash_log_det(a: f64) -> f64 {
    (1.0 - a * a + SQUASH_EPS).ln()
}

/// d/du of `-squash_log_det(tanh(u))`.
pub fn squash_log_det_grad(a: f64) -> f64 {
    2.0 * a * (1.0 - a * a) / (1.0 - a * a + SQUASH_EPS)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gaussian policy over the pre-squash action with a state-independent log
/// std; the action is `tanh(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        GaussianPolicy {
            mean_net: Mlp::new(&sizes, 0.01, rng),
            log_std: init_log_std,
        }
    }

    pub fn mean(&self, obs: &[f64]) -> f64 {
        self.mean_net.predict(obs)[0]
    }

    pub fn log_prob(&self, obs: &[f64], u: f64) -> f64 {
        gaussian_log_prob(u, self.mean(obs), self.log_std)
    }

    /// Sample the pre-squash action; returns `(u, log_prob(u))`.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (f64, f64) {
        let mean = self.mean(obs);
        let u = mean + self.log_std.exp() * std_normal(rng);
        (u, gaussian_log_prob(u, mean, self.log_std))
    }

    /// Squashed mode of the policy.
    pub fn mode(&self, obs: &[f64]) -> f64 {
        self.mean(obs).tanh()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + 1
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params().to_vec();
        p.push(self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.mean_net.num_params();
        self.mean_net.set_params(&p[..n]);
        self.log_std = p[n].clamp(LOG_STD_MIN, LOG_STD_MAX);
    }

    /// Accumulate `weight * d log_prob(u | obs) / d params` into `grad`.
    pub fn accumulate_log_prob_grad(&self, obs: &[f64], u: f64, weight: f64, grad: &mut [f64]) {
        let cache = self.mean_net.forward(obs);
        let mean = cache.output()[0];
        let inv_var = (-2.0 * self.log_std).exp();
        let d_mean = (u - mean) * inv_var;
        let d_log_std = (u - mean) * (u - mean) * inv_var - 1.0;
        let n = self.mean_net.num_params();
        self.mean_net.backward(&cache, &[weight * d_mean], Some(&mut grad[..n]));
        grad[n] += weight * d_log_std;
    }
}

/// KL(old || new) between two univariate Gaussians.
pub fn gaussian_kl(mean_old: f64, log_std_old: f64, mean_new: f64, log_std_new: f64) -> f64 {
    let var_old = (2.0 * log_std_old).exp();
    let var_new = (2.0 * log_std_new).exp();
    log_std_new - log_std_old + (var_old + (mean_old - mean_new).powi(2)) / (2.0 * var_new) - 0.5
}
