//! Linear SVM: Pegasos-style primal training, with the decision function
//! stored in the dual form Σ αᵢ·yᵢ·⟨xᵢ, x⟩ + b so the collapse identity
//! w = Σ αᵢ·yᵢ·xᵢ stays checkable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineError, BinaryScorer, OvaModel};

/// Support-vector expansion of a linear decision function. The trainer emits
/// the collapsed form (one stored vector with α = 1, y = +1), but evaluation
/// accepts any expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDecisionFunction {
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub bias: f64,
}

/// Σᵢ αᵢ·yᵢ·⟨xᵢ, x⟩ + b with the linear kernel.
pub fn svm_decision(f: &SvmDecisionFunction, x: &[f64]) -> Result<f64, BaselineError> {
    let mut sum = f.bias;
    for ((alpha, label), xi) in f.alphas.iter().zip(&f.labels).zip(&f.vectors) {
        if xi.len() != x.len() {
            return Err(BaselineError::DimensionMismatch { expected: xi.len(), found: x.len() });
        }
        let dot = xi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        sum += alpha * label * dot;
    }
    Ok(sum)
}

/// Folds the expansion into a single weight vector: w = Σ αᵢ·yᵢ·xᵢ.
pub fn collapse(f: &SvmDecisionFunction) -> (Vec<f64>, f64) {
    let dim = f.vectors.first().map_or(0, Vec::len);
    let mut w = vec![0.0; dim];
    for ((alpha, label), xi) in f.alphas.iter().zip(&f.labels).zip(&f.vectors) {
        for (wj, v) in w.iter_mut().zip(xi) {
            *wj += alpha * label * v;
        }
    }
    (w, f.bias)
}

impl BinaryScorer for SvmDecisionFunction {
    fn score(&self, x: &[f64]) -> Result<f64, BaselineError> {
        svm_decision(self, x)
    }
}

/// Pegasos: `epochs·N` single-sample steps with learning rate 1/(λt). The
/// hinge subgradient updates w and b on margin violations; only w is
/// L2-regularized. Labels must be ±1 with both signs present. The result is
/// stored collapsed (α = [1], y = [+1], vectors = [w]).
pub fn train_linear_svm(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<SvmDecisionFunction, BaselineError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(BaselineError::EmptyInput);
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(BaselineError::SingleClass);
    }
    let dim = x[0].len();
    for v in x {
        if v.len() != dim {
            return Err(BaselineError::DimensionMismatch { expected: dim, found: v.len() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let steps = epochs * x.len();
    for t in 1..=steps {
        let i = rng.random_range(0..x.len());
        let eta = 1.0 / (lambda * t as f64);
        let margin = y[i] * (w.iter().zip(&x[i]).map(|(a, c)| a * c).sum::<f64>() + b);
        let shrink = 1.0 - eta * lambda;
        for wj in &mut w {
            *wj *= shrink;
        }
        if margin < 1.0 {
            for (wj, v) in w.iter_mut().zip(&x[i]) {
                *wj += eta * y[i] * v;
            }
            b += eta * y[i];
        }
    }
    Ok(SvmDecisionFunction {
        alphas: vec![1.0],
        labels: vec![1.0],
        vectors: vec![w],
        bias: b,
    })
}

/// One-vs-all wrapper: class c trains on labels +1 for c, −1 for the rest,
/// with per-scorer seed `seed + c`. Every class must appear in `y`.
pub fn train_ova_svm(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<OvaModel<SvmDecisionFunction>, BaselineError> {
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(BaselineError::ClassOutOfRange { class: bad, n_classes });
    }
    let mut scorers = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let binary: Vec<f64> = y.iter().map(|&c| if c == class { 1.0 } else { -1.0 }).collect();
        scorers.push(train_linear_svm(
            x,
            &binary,
            lambda,
            epochs,
            seed.wrapping_add(class as u64),
        )?);
    }
    Ok(OvaModel { scorers })
}
