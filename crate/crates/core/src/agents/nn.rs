//! Small dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector so that optimisers, Polyak averaging
//! and trust-region steps all operate on plain slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with `tanh` hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has an output")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l + 1 == layers { output_scale } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                params.push(scale * rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    pub fn forward(&self, input: &[f64]) -> Cache {
        debug_assert_eq!(input.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        for (l, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let x = &acts[l];
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o]
                })
                .collect();
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Cache { acts }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).acts.pop().expect("output layer")
    }

    /// Backpropagate `grad_output` (dL/d output) through the pass recorded in
    /// `cache`, accumulating dL/d params into `grad_params` when given.
    /// Returns dL/d input.
    pub fn backward(&self, cache: &Cache, grad_output: &[f64], mut grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let layers: Vec<_> = self.layers().collect();
        let n = layers.len();
        let mut delta = grad_output.to_vec();
        for l in (0..n).rev() {
            let (offset, fan_in, fan_out) = layers[l];
            if l + 1 < n {
                // Output of this layer went through tanh.
                let a = &cache.acts[l + 1];
                for (d, y) in delta.iter_mut().zip(a) {
                    *d *= 1.0 - y * y;
                }
            }
            let x = &cache.acts[l];
            if let Some(g) = grad_params.as_deref_mut() {
                let (gw, gb) = g[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (gwi, xi) in row.iter_mut().zip(x) {
                        *gwi += d * xi;
                    }
                    gb[o] += d;
                }
            }
            let w = &self.params[offset..offset + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Directional derivative of the output with respect to the parameters
    /// along `tangent` (forward-mode), at `input`.
    pub fn jvp(&self, input: &[f64], tangent: &[f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut x = input.to_vec();
        let mut dx = vec![0.0; input.len()];
        for (l, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let dw = &tangent[offset..offset + fan_in * fan_out];
            let db = &tangent[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z = vec![0.0; fan_out];
            let mut dz = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let drow = &dw[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                let mut dacc = db[o];
                for i in 0..fan_in {
                    acc += row[i] * x[i];
                    dacc += drow[i] * x[i] + row[i] * dx[i];
                }
                z[o] = acc;
                dz[o] = dacc;
            }
            if l + 1 < layers {
                for o in 0..fan_out {
                    let y = z[o].tanh();
                    dz[o] *= 1.0 - y * y;
                    z[o] = y;
                }
            }
            x = z;
            dx = dz;
        }
        dx
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

/// Adam optimiser over a flat parameter slice (minimisation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Rescale `grad` in place so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
