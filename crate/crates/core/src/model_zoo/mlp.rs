//! One-hidden-layer tanh perceptron trained by full-batch gradient descent.
//!
//! Classification uses a softmax head with mean cross-entropy. Regression
//! uses a linear head with mean `½(ŷ − y)²` on a standardised target, so
//! the learning rate behaves the same whatever the target's units.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linear::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_std: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams { hidden: 32, learning_rate: 0.05, epochs: 300, init_std: 0.1 }
    }
}

/// Network weights. `w1` is `hidden × inputs`, `w2` is `outputs × hidden`,
/// both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Regression only: the head predicts `(y − y_mean) / y_scale`.
    pub y_mean: f64,
    pub y_scale: f64,
}

#[derive(Clone, Copy)]
pub enum MlpTarget<'a> {
    Classes(&'a [usize]),
    /// Already standardised.
    Real(&'a [f64]),
}

impl Mlp {
    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn init(inputs: usize, hidden: usize, outputs: usize, std: f64, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>();
        let w1 = draw(hidden * inputs);
        let w2 = draw(outputs * hidden);
        Mlp {
            inputs,
            hidden,
            outputs,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; outputs],
            y_mean: 0.0,
            y_scale: 1.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn hidden_layer(&self, x: &[f64], h: &mut [f64]) {
        for (k, hk) in h.iter_mut().enumerate() {
            let w = &self.w1[k * self.inputs..(k + 1) * self.inputs];
            *hk = (self.b1[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
    }

    /// Raw head outputs (logits or standardised mean).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        self.hidden_layer(x, &mut h);
        (0..self.outputs)
            .map(|o| {
                let w = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn class_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.forward(x);
        softmax(&mut z);
        z
    }

    pub fn regress(&self, x: &[f64]) -> f64 {
        self.forward(x)[0] * self.y_scale + self.y_mean
    }

    /// Mean training loss and its gradient in `flat()` order.
    pub fn loss_and_gradient(&self, data: &[f64], n_rows: usize, target: MlpTarget) -> (f64, Vec<f64>) {
        let (d, hn, on) = (self.inputs, self.hidden, self.outputs);
        let mut g_w1 = vec![0.0; self.w1.len()];
        let mut g_b1 = vec![0.0; hn];
        let mut g_w2 = vec![0.0; self.w2.len()];
        let mut g_b2 = vec![0.0; on];
        let mut h = vec![0.0; hn];
        let mut delta_h = vec![0.0; hn];
        let mut loss = 0.0;
        for i in 0..n_rows {
            let x = &data[i * d..(i + 1) * d];
            self.hidden_layer(x, &mut h);
            let mut out: Vec<f64> = (0..on)
                .map(|o| {
                    let w = &self.w2[o * hn..(o + 1) * hn];
                    self.b2[o] + w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            // d loss / d output
            match target {
                MlpTarget::Classes(labels) => {
                    softmax(&mut out);
                    loss -= out[labels[i]].max(f64::MIN_POSITIVE).ln();
                    out[labels[i]] -= 1.0;
                }
                MlpTarget::Real(y) => {
                    let r = out[0] - y[i];
                    loss += 0.5 * r * r;
                    out[0] = r;
                }
            }
            delta_h.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in out.iter().enumerate() {
                g_b2[o] += g;
                for k in 0..hn {
                    g_w2[o * hn + k] += g * h[k];
                    delta_h[k] += g * self.w2[o * hn + k];
                }
            }
            for k in 0..hn {
                let gk = delta_h[k] * (1.0 - h[k] * h[k]);
                g_b1[k] += gk;
                let row = &mut g_w1[k * d..(k + 1) * d];
                for (gw, xv) in row.iter_mut().zip(x) {
                    *gw += gk * xv;
                }
            }
        }
        let inv = 1.0 / n_rows as f64;
        let mut grad = [g_w1, g_b1, g_w2, g_b2].concat();
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, grad)
    }

    /// Trains a classifier with `n_classes` softmax outputs.
    pub fn fit_classifier(
        data: &[f64],
        n_rows: usize,
        d: usize,
        labels: &[usize],
        n_classes: usize,
        params: MlpParams,
        seed: u64,
    ) -> Mlp {
        let mut m = Mlp::init(d, params.hidden, n_classes, params.init_std, seed);
        m.descend(data, n_rows, MlpTarget::Classes(labels), params);
        m
    }

    /// Trains a regressor; the target is standardised internally.
    pub fn fit_regressor(data: &[f64], n_rows: usize, d: usize, y: &[f64], params: MlpParams, seed: u64) -> Mlp {
        let n = n_rows as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let z: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
        let mut m = Mlp::init(d, params.hidden, 1, params.init_std, seed);
        m.descend(data, n_rows, MlpTarget::Real(&z), params);
        m.y_mean = mean;
        m.y_scale = scale;
        m
    }

    fn descend(&mut self, data: &[f64], n_rows: usize, target: MlpTarget, params: MlpParams) {
        let mut p = self.flat();
        for _ in 0..params.epochs {
            let (_, g) = self.loss_and_gradient(data, n_rows, target);
            for (w, gw) in p.iter_mut().zip(&g) {
                *w -= params.learning_rate * gw;
            }
            self.set_flat(&p);
        }
    }
}
