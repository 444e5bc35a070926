//! k-nearest-neighbor classification on TF-IDF vectors, plus an optional
//! condensation pass that replaces the stored set with class-pure
//! neighborhood representatives.

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineError;

/// One condensed prototype: the chosen point, its class, and the Euclidean
/// radius of the class-pure neighborhood it stood in for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub vector: Vec<f64>,
    pub class: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub vectors: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub k: usize,
    pub representatives: Option<Vec<Representative>>,
}

impl KnnModel {
    pub fn new(vectors: Vec<Vec<f64>>, classes: Vec<usize>, k: usize) -> Result<Self, BaselineError> {
        if vectors.is_empty() || vectors.len() != classes.len() {
            return Err(BaselineError::EmptyInput);
        }
        let dim = vectors[0].len();
        for v in &vectors {
            if v.len() != dim {
                return Err(BaselineError::DimensionMismatch { expected: dim, found: v.len() });
            }
        }
        if k < 1 || k > vectors.len() {
            return Err(BaselineError::KOutOfRange { k, stored: vectors.len() });
        }
        Ok(KnnModel { vectors, classes, k, representatives: None })
    }

    /// Switches the model to condensed prediction.
    pub fn condense(&mut self) {
        self.representatives = Some(knn_condense(&self.vectors, &self.classes));
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the k nearest stored points (Euclidean). Distance
/// ties prefer the lower stored index; vote ties prefer the smallest class.
/// A condensed model ignores k and answers with the nearest representative.
pub fn knn_predict(model: &KnnModel, x: &[f64], k: usize) -> Result<usize, BaselineError> {
    if let Some(reps) = &model.representatives {
        if reps.is_empty() {
            return Err(BaselineError::EmptyInput);
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, rep) in reps.iter().enumerate() {
            if rep.vector.len() != x.len() {
                return Err(BaselineError::DimensionMismatch {
                    expected: rep.vector.len(),
                    found: x.len(),
                });
            }
            let d = dist2(&rep.vector, x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        return Ok(reps[best].class);
    }

    if model.vectors.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    if k < 1 || k > model.vectors.len() {
        return Err(BaselineError::KOutOfRange { k, stored: model.vectors.len() });
    }
    let dim = model.vectors[0].len();
    if x.len() != dim {
        return Err(BaselineError::DimensionMismatch { expected: dim, found: x.len() });
    }
    let mut order: Vec<(f64, usize)> =
        model.vectors.iter().enumerate().map(|(i, v)| (dist2(v, x), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut votes: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &(_, i) in order.iter().take(k) {
        *votes.entry(model.classes[i]).or_insert(0) += 1;
    }
    // BTreeMap iterates classes ascending, so a strict > keeps the smallest
    // class on vote ties.
    let mut winner = (usize::MAX, 0usize);
    for (&class, &count) in &votes {
        if count > winner.1 {
            winner = (class, count);
        }
    }
    Ok(winner.0)
}

/// Greedy cover by class-pure neighborhoods: each uncovered point grows the
/// largest ball around itself that stays inside its own class (strictly
/// closer than the nearest other-class point); the ball covering the most
/// still-uncovered points wins (ties to the lowest index) and its center
/// becomes a representative with the ball's radius.
pub fn knn_condense(vectors: &[Vec<f64>], classes: &[usize]) -> Vec<Representative> {
    assert_eq!(vectors.len(), classes.len());
    let n = vectors.len();
    let mut covered = vec![false; n];
    let mut reps = Vec::new();
    while covered.iter().any(|c| !c) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if covered[i] {
                continue;
            }
            let mut enemy = f64::INFINITY;
            for j in 0..n {
                if classes[j] != classes[i] {
                    enemy = enemy.min(dist2(&vectors[i], &vectors[j]));
                }
            }
            let mut gain = 0usize;
            let mut radius2 = 0.0f64;
            for j in 0..n {
                let d = dist2(&vectors[i], &vectors[j]);
                if d < enemy || j == i {
                    if !covered[j] {
                        gain += 1;
                    }
                    radius2 = radius2.max(d);
                }
            }
            if best.is_none_or(|(_, g, _)| gain > g) {
                best = Some((i, gain, radius2));
            }
        }
        let (center, _, radius2) = best.expect("an uncovered point always remains");
        let enemy = {
            let mut e = f64::INFINITY;
            for j in 0..n {
                if classes[j] != classes[center] {
                    e = e.min(dist2(&vectors[center], &vectors[j]));
                }
            }
            e
        };
        for j in 0..n {
            let d = dist2(&vectors[center], &vectors[j]);
            if d < enemy || j == center {
                covered[j] = true;
            }
        }
        reps.push(Representative {
            vector: vectors[center].clone(),
            class: classes[center],
            radius: radius2.sqrt(),
        });
    }
    reps
}
