//! L2-regularised binary logistic regression.
//!
//! Objective: mean log-loss plus `l2/2 · ‖w‖²` (bias unpenalised), minimised
//! by full-batch gradient descent with an Armijo backtracking line search.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl LogisticModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    l2: f64,
}

impl Problem<'_> {
    /// Parameters packed as `[w_0 .. w_{d-1}, b]`.
    fn loss(&self, theta: &[f64]) -> f64 {
        let d = theta.len() - 1;
        let n = self.x.len() as f64;
        let mut loss = 0.0;
        for (xi, &yi) in self.x.iter().zip(self.y) {
            let z = theta[d] + xi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            loss += softplus(z) - yi * z;
        }
        loss / n + 0.5 * self.l2 * theta[..d].iter().map(|w| w * w).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = theta.len() - 1;
        let n = self.x.len() as f64;
        let mut g = vec![0.0; d + 1];
        for (xi, &yi) in self.x.iter().zip(self.y) {
            let z = theta[d] + xi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            let r = sigmoid(z) - yi;
            for (gj, xj) in g.iter_mut().zip(xi) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < d {
                *gj += self.l2 * theta[j];
            }
        }
        g
    }
}

/// Regularised log-loss of `model` on a labelled set (the quantity minimised).
pub fn logistic_loss(model: &LogisticModel, features: &[Vec<f64>], labels: &[u8], l2: f64) -> f64 {
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut theta = model.weights.clone();
    theta.push(model.bias);
    Problem { x: features, y: &y, l2 }.loss(&theta)
}

pub fn logistic_fit(features: &[Vec<f64>], labels: &[u8], cfg: &LogisticConfig) -> Result<LogisticModel> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::DegenerateClassification("need at least two samples"));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged feature matrix".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateClassification("labels contain a single class"));
    }

    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let prob = Problem {
        x: features,
        y: &y,
        l2: cfg.l2,
    };
    let mut theta = vec![0.0; d + 1];
    let mut loss = prob.loss(&theta);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut g = prob.gradient(&theta);
    let mut gnorm = norm(&g);
    while gnorm >= cfg.tol && iterations < cfg.max_iter {
        iterations += 1;
        // Armijo backtracking, starting from a slightly enlarged last step.
        step *= 2.0;
        let g2 = gnorm * gnorm;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let cl = prob.loss(&cand);
            if cl <= loss - 0.5 * step * g2 {
                theta = cand;
                loss = cl;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        g = prob.gradient(&theta);
        gnorm = norm(&g);
    }
    let bias = theta.pop().unwrap_or(0.0);
    Ok(LogisticModel {
        weights: theta,
        bias,
        iterations,
        grad_norm: gnorm,
        converged: gnorm < cfg.tol,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
