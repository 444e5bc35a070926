//! Logistic curve evaluation and one-vs-all logistic regression trained by
//! full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineError, BinaryScorer, OvaModel};

/// General logistic curve with maximum `l`, steepness `k`, and midpoint `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCurve {
    pub l: f64,
    pub k: f64,
    pub x0: f64,
}

/// L / (1 + e^(−k(x−x0))), saturating to the exact limit once the exponent
/// argument passes ±500 so extreme inputs cannot overflow.
pub fn logistic_eval(curve: &LogisticCurve, x: f64) -> f64 {
    let arg = -curve.k * (x - curve.x0);
    if arg >= 500.0 {
        0.0
    } else if arg <= -500.0 {
        curve.l
    } else {
        curve.l / (1.0 + arg.exp())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One binary class-vs-rest scorer: probability sigmoid(w·x + b). The curve
/// maximum is 1 and the steepness is absorbed into the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryScorer for LogisticScorer {
    fn score(&self, x: &[f64]) -> Result<f64, BaselineError> {
        if x.len() != self.weights.len() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        let z = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        Ok(sigmoid(z))
    }
}

/// Fits one scorer per class on regularized log-loss with full-batch mean
/// gradients from zero initialization. Deterministic by construction; the
/// seed parameter is accepted for interface symmetry with the stochastic
/// trainers but nothing here consumes randomness.
pub fn train_ova_logistic(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    lr: f64,
    epochs: usize,
    l2: f64,
    _seed: u64,
) -> Result<OvaModel<LogisticScorer>, BaselineError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(BaselineError::EmptyInput);
    }
    let dim = x[0].len();
    for v in x {
        if v.len() != dim {
            return Err(BaselineError::DimensionMismatch { expected: dim, found: v.len() });
        }
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(BaselineError::ClassOutOfRange { class: bad, n_classes });
    }

    let n = x.len() as f64;
    let mut scorers = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..epochs {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let target = f64::from(yi == class);
                let z = w.iter().zip(xi).map(|(wj, v)| wj * v).sum::<f64>() + b;
                let err = sigmoid(z) - target;
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g += err * v;
                }
                gb += err;
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= lr * (g / n + l2 * *wj);
            }
            b -= lr * gb / n;
        }
        scorers.push(LogisticScorer { weights: w, bias: b });
    }
    Ok(OvaModel { scorers })
}
