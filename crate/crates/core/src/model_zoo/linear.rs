//! Multiclass logistic regression (full-batch gradient descent) and
//! ridge-stabilised least squares.

use serde::{Deserialize, Serialize};

use crate::linalg::solve_with_ridge;

/// Softmax regression weights, one row of `n_inputs + 1` per class with the
/// bias in the last slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub n_inputs: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
}

/// Numerically stable in-place softmax.
pub fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Logistic {
    pub fn zeros(n_inputs: usize, n_classes: usize) -> Logistic {
        Logistic { n_inputs, n_classes, weights: vec![0.0; n_classes * (n_inputs + 1)] }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_inputs;
        let mut z: Vec<f64> = (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * (d + 1)..(c + 1) * (d + 1)];
                w[d] + w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        softmax(&mut z);
        z
    }

    /// Minimises mean cross-entropy plus `l2/2 · ‖W‖²` (bias excluded).
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        data: &[f64],
        n_rows: usize,
        n_inputs: usize,
        labels: &[usize],
        n_classes: usize,
        lr: f64,
        epochs: usize,
        l2: f64,
    ) -> Logistic {
        let d = n_inputs;
        let mut model = Logistic::zeros(d, n_classes);
        let mut grad = vec![0.0; model.weights.len()];
        let inv_n = 1.0 / n_rows as f64;
        for _ in 0..epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n_rows {
                let x = &data[i * d..(i + 1) * d];
                let p = model.probs(x);
                for c in 0..n_classes {
                    let err = p[c] - if labels[i] == c { 1.0 } else { 0.0 };
                    let g = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                    for j in 0..d {
                        g[j] += err * x[j];
                    }
                    g[d] += err;
                }
            }
            for c in 0..n_classes {
                for j in 0..=d {
                    let k = c * (d + 1) + j;
                    let reg = if j < d { l2 * model.weights[k] } else { 0.0 };
                    model.weights[k] -= lr * (grad[k] * inv_n + reg);
                }
            }
        }
        model
    }
}

/// `y ≈ coef·x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegression {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearRegression {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Solves `(XᵀX + ridge·I) β = Xᵀy` on the bias-augmented design, the
    /// intercept left unpenalised.
    pub fn fit(data: &[f64], n_rows: usize, n_inputs: usize, y: &[f64], ridge: f64) -> LinearRegression {
        let p = n_inputs + 1;
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut row = vec![1.0; p];
        for i in 0..n_rows {
            row[..n_inputs].copy_from_slice(&data[i * n_inputs..(i + 1) * n_inputs]);
            for a in 0..p {
                xty[a] += row[a] * y[i];
                for b in 0..p {
                    xtx[a * p + b] += row[a] * row[b];
                }
            }
        }
        for j in 0..n_inputs {
            xtx[j * p + j] += ridge;
        }
        let (beta, escalated) = solve_with_ridge(&xtx, &xty, p, ridge);
        if escalated {
            tracing::debug!("normal equations needed extra regularisation");
        }
        LinearRegression { coef: beta[..n_inputs].to_vec(), intercept: beta[n_inputs] }
    }
}
