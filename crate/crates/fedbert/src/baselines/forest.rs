//! Random forest: bagged Gini decision trees with per-node feature
//! subsampling. Trees live in flat node arenas (child links are indices), so
//! deep trees cannot blow the stack during building, dropping, or JSON
//! serialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// The feature subset drawn for this node, kept so the sampling
        /// contract stays auditable after training.
        sampled: Vec<usize>,
        left: usize,
        right: usize,
    },
    Leaf {
        histogram: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Arena with the root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict_class(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right, .. } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { histogram } => {
                    let mut best = 0;
                    for (c, &count) in histogram.iter().enumerate() {
                        if count > histogram[best] {
                            best = c;
                        }
                    }
                    return best;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub n_features: usize,
    pub m_try: usize,
    pub seed: u64,
}

impl Forest {
    /// Majority vote over per-tree predictions; ties go to the smallest
    /// class index.
    pub fn predict_one(&self, x: &[f64]) -> Result<usize, BaselineError> {
        if x.len() != self.n_features {
            return Err(BaselineError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let mut votes = vec![0usize; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict_class(x)] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>, BaselineError> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }
}

fn gini(hist: &[u64], n: f64) -> f64 {
    let mut sum = 0.0;
    for &c in hist {
        let p = c as f64 / n;
        sum += p * p;
    }
    1.0 - sum
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_features: usize,
    m_try: usize,
    max_depth: Option<usize>,
}

impl TreeBuilder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<u64> {
        let mut hist = vec![0u64; self.n_classes];
        for &i in idx {
            hist[self.y[i]] += 1;
        }
        hist
    }

    /// Best (feature, threshold, Gini decrease) over the drawn feature subset.
    /// Thresholds are midpoints between consecutive distinct sorted values;
    /// midpoints that round onto a neighbor are skipped. Strict improvement
    /// comparisons make the first best candidate win ties, which pins the
    /// result for a given rng stream.
    fn best_split(&self, idx: &[usize], sampled: &[usize]) -> Option<(usize, f64)> {
        let hist = self.histogram(idx);
        let n = idx.len() as f64;
        let parent = gini(&hist, n);
        let mut best: Option<(usize, f64)> = None;
        let mut best_decrease = 0.0f64;
        for &feature in sampled {
            let mut vals: Vec<(f64, usize)> =
                idx.iter().map(|&i| (self.x[i][feature], self.y[i])).collect();
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0u64; self.n_classes];
            let mut left_n = 0u64;
            for p in 0..vals.len() - 1 {
                left[vals[p].1] += 1;
                left_n += 1;
                let (v1, v2) = (vals[p].0, vals[p + 1].0);
                if v1 == v2 {
                    continue;
                }
                let threshold = (v1 + v2) / 2.0;
                if threshold <= v1 || threshold >= v2 {
                    continue;
                }
                let right_n = n - left_n as f64;
                let mut right_gini_sum = 0.0;
                let mut left_gini_sum = 0.0;
                for (c, &total) in hist.iter().enumerate() {
                    let l = left[c] as f64 / left_n as f64;
                    left_gini_sum += l * l;
                    let r = (total - left[c]) as f64 / right_n;
                    right_gini_sum += r * r;
                }
                let decrease = parent
                    - (left_n as f64 / n) * (1.0 - left_gini_sum)
                    - (right_n / n) * (1.0 - right_gini_sum);
                if decrease > best_decrease {
                    best_decrease = decrease;
                    best = Some((feature, threshold));
                }
            }
        }
        best
    }

    fn build(&self, sample: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes = vec![Node::Leaf { histogram: Vec::new() }];
        let mut stack = vec![(0usize, sample, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let hist = self.histogram(&idx);
            let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
            if pure || idx.len() < 2 || depth_capped {
                nodes[slot] = Node::Leaf { histogram: hist };
                continue;
            }
            let sampled =
                rand::seq::index::sample(rng, self.n_features, self.m_try).into_vec();
            let Some((feature, threshold)) = self.best_split(&idx, &sampled) else {
                nodes[slot] = Node::Leaf { histogram: hist };
                continue;
            };
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { histogram: Vec::new() });
            let right = nodes.len();
            nodes.push(Node::Leaf { histogram: Vec::new() });
            nodes[slot] = Node::Split { feature, threshold, sampled, left, right };
            stack.push((right, right_idx, depth + 1));
            stack.push((left, left_idx, depth + 1));
        }
        Tree { nodes }
    }
}

/// Grows `n_trees` Gini trees, each from its own rng seeded `seed + tree
/// index`, over a bootstrap resample (or the full set when `bootstrap` is
/// off). `m_try = None` defaults to ⌈√d⌉ features per node.
#[allow(clippy::too_many_arguments)]
pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    n_trees: usize,
    max_depth: Option<usize>,
    m_try: Option<usize>,
    bootstrap: bool,
    seed: u64,
) -> Result<Forest, BaselineError> {
    if x.is_empty() || x.len() != y.len() || n_trees == 0 {
        return Err(BaselineError::EmptyInput);
    }
    let n_features = x[0].len();
    for v in x {
        if v.len() != n_features {
            return Err(BaselineError::DimensionMismatch {
                expected: n_features,
                found: v.len(),
            });
        }
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(BaselineError::ClassOutOfRange { class: bad, n_classes });
    }
    let m_try = match m_try {
        Some(m) if m == 0 || m > n_features => {
            return Err(BaselineError::BadFeatureSample { m_try: m, features: n_features })
        }
        Some(m) => m,
        None => ((n_features as f64).sqrt().ceil() as usize).max(1),
    };

    let builder = TreeBuilder { x, y, n_classes, n_features, m_try, max_depth };
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let sample: Vec<usize> = if bootstrap {
            (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
        } else {
            (0..x.len()).collect()
        };
        trees.push(builder.build(sample, &mut rng));
    }
    Ok(Forest { trees, n_classes, n_features, m_try, seed })
}
