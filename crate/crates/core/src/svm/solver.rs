//! L2-regularized hinge-loss linear SVM trained by dual coordinate descent.
//!
//! The bias is folded into the weight vector by appending a constant 1 to
//! every example, so the problem solved is
//!
//! ```text
//! min_{w,b}  1/2 (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! and its dual `max_{0 <= a <= C} sum_i a_i - 1/2 |sum_i a_i y_i (x_i, 1)|^2`.
//! Each coordinate step is the closed-form minimizer along one `a_i`,
//! clipped to the box.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hinge penalty.
    pub c: f64,
    /// Stop once the largest projected-gradient violation in an epoch is
    /// at most this.
    pub tol: f64,
    /// Maximum number of epochs.
    pub max_iter: usize,
    /// Seeds the per-epoch visiting order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// `score(x) = weights . x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    /// A model that ignores its input and always scores `bias`.
    pub fn constant(dim: usize, bias: f64) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub epochs: usize,
    pub converged: bool,
    /// Largest projected-gradient magnitude seen in the final epoch.
    pub max_violation: f64,
    /// Primal objective of the returned estimate after each epoch.
    pub primal: Vec<f64>,
    /// Primal objective of the raw dual iterate `w(alpha)` after each epoch.
    pub iterate_primal: Vec<f64>,
    /// Dual objective after each epoch.
    pub dual: Vec<f64>,
    /// Final dual variables.
    pub alpha: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `1/2 (|w|^2 + b^2) + C sum hinge`.
pub fn primal_objective<R: AsRef<[f64]>>(model: &LinearModel, x: &[R], y: &[f64], c: f64) -> f64 {
    let reg = 0.5 * (dot(&model.weights, &model.weights) + model.bias * model.bias);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * model.score(xi.as_ref())).max(0.0))
        .sum();
    reg + c * loss
}

/// `sum a - 1/2 |sum a_i y_i (x_i, 1)|^2`.
pub fn dual_objective<R: AsRef<[f64]>>(alpha: &[f64], x: &[R], y: &[f64]) -> f64 {
    let dim = x.first().map_or(0, |r| r.as_ref().len());
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for ((xi, &yi), &ai) in x.iter().zip(y).zip(alpha) {
        axpy(ai * yi, xi.as_ref(), &mut w);
        b += ai * yi;
    }
    alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b)
}

fn check_problem<R: AsRef<[f64]>>(x: &[R], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let dim = x[0].as_ref().len();
    if dim == 0 {
        return Err(Error::Data("examples have zero features".into()));
    }
    for row in x {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("training example has a non-finite value".into()));
        }
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Data(format!("labels must be -1 or +1, got {bad}")));
    }
    let positives = y.iter().filter(|&&v| v > 0.0).count();
    if x.len() < 2 || positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(dim)
}

/// Trains a binary model; labels must be -1 or +1 with both present.
pub fn train_binary<R: AsRef<[f64]>>(x: &[R], y: &[f64], cfg: &TrainConfig) -> Result<LinearModel> {
    solve(x, y, cfg, false).map(|(m, _)| m)
}

/// As [`train_binary`], also recording primal and dual objectives per epoch.
///
/// Dual coordinate descent raises the dual monotonically but the primal
/// value of `w(alpha)` may wiggle, so the solver returns the best primal
/// point seen at an epoch boundary. `trace.primal` tracks that point.
pub fn train_binary_traced<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainTrace)> {
    solve(x, y, cfg, true)
}

fn solve<R: AsRef<[f64]>>(
    x: &[R],
    y: &[f64],
    cfg: &TrainConfig,
    trace: bool,
) -> Result<(LinearModel, TrainTrace)> {
    cfg.validate()?;
    let dim = check_problem(x, y)?;
    let n = x.len();
    let upper = cfg.c;

    // diagonal of Q for the bias-augmented rows
    let qd: Vec<f64> = x.iter().map(|r| dot(r.as_ref(), r.as_ref()) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = TrainTrace::default();
    let mut best = LinearModel::constant(dim, 0.0);
    let mut best_primal = primal_objective(&best, x, y, upper);

    for epoch in 1..=cfg.max_iter {
        order.shuffle(&mut rng);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let xi = x[i].as_ref();
            let g = y[i] * (dot(&w, xi) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    axpy(delta, xi, &mut w);
                    b += delta;
                }
            }
        }
        out.epochs = epoch;
        out.max_violation = max_violation;
        let current = LinearModel {
            weights: w.clone(),
            bias: b,
        };
        let primal = primal_objective(&current, x, y, upper);
        if primal <= best_primal {
            best_primal = primal;
            best = current;
        }
        if trace {
            out.iterate_primal.push(primal);
            out.primal.push(best_primal);
            out.dual.push(dual_objective(&alpha, x, y));
        }
        if max_violation <= cfg.tol {
            out.converged = true;
            break;
        }
    }
    out.alpha = alpha;
    Ok((best, out))
}
