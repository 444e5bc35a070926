//! Conventional comparison stack: TF-IDF vectorization plus four from-scratch
//! classifiers (one-vs-all logistic regression, one-vs-all linear SVM, kNN
//! with optional condensation, random forest).
//!
//! The classifiers hide behind [`BaselineStrategy`], a registry of named
//! trainers, so callers pick a model by string (`rf`, `svm`, `lr`, `knn`) and
//! get back a [`ModelFile`] that predicts and serializes uniformly.

mod forest;
mod knn;
mod logistic;
mod svm;
mod tfidf;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{train_random_forest, Forest, Node, Tree};
pub use knn::{knn_condense, knn_predict, KnnModel, Representative};
pub use logistic::{logistic_eval, train_ova_logistic, LogisticCurve, LogisticScorer};
pub use svm::{collapse, svm_decision, train_linear_svm, train_ova_svm, SvmDecisionFunction};
pub use tfidf::{fit_tfidf, tfidf_transform, tfidf_transform_all, TfidfVocabulary};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("input is empty or has mismatched lengths")]
    EmptyInput,
    #[error("vector has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} is out of range for {stored} stored points")]
    KOutOfRange { k: usize, stored: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("class {class} is out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("cannot sample {m_try} of {features} features per node")]
    BadFeatureSample { m_try: usize, features: usize },
    #[error("unknown baseline {0:?}")]
    UnknownBaseline(String),
    #[error("{0} model files hold no classifier")]
    NotAClassifier(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] serde_json::Error),
}

/// A binary decision score; one-vs-all wrappers argmax over these.
pub trait BinaryScorer {
    fn score(&self, x: &[f64]) -> Result<f64, BaselineError>;
}

/// One scorer per class; prediction takes the first of the highest scores,
/// so ties land on the smallest class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvaModel<S> {
    pub scorers: Vec<S>,
}

impl<S: BinaryScorer> OvaModel<S> {
    pub fn n_classes(&self) -> usize {
        self.scorers.len()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, BaselineError> {
        self.scorers.iter().map(|s| s.score(x)).collect()
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<usize, BaselineError> {
        let scores = self.scores(x)?;
        if scores.is_empty() {
            return Err(BaselineError::EmptyInput);
        }
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>, BaselineError> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }
}

/// On-disk model envelope. JSON with a `kind` discriminator; serde_json emits
/// floats in shortest-round-trip form, so every stored value reloads
/// bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Tfidf(TfidfVocabulary),
    OvaLogistic(OvaModel<LogisticScorer>),
    OvaSvm(OvaModel<SvmDecisionFunction>),
    Knn(KnnModel),
    Forest(Forest),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Tfidf(_) => "tfidf",
            ModelFile::OvaLogistic(_) => "ova_logistic",
            ModelFile::OvaSvm(_) => "ova_svm",
            ModelFile::Knn(_) => "knn",
            ModelFile::Forest(_) => "forest",
        }
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>, BaselineError> {
        match self {
            ModelFile::Tfidf(_) => Err(BaselineError::NotAClassifier("tfidf")),
            ModelFile::OvaLogistic(m) => m.predict(xs),
            ModelFile::OvaSvm(m) => m.predict(xs),
            ModelFile::Knn(m) => xs.iter().map(|x| knn_predict(m, x, m.k)).collect(),
            ModelFile::Forest(f) => f.predict(xs),
        }
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), BaselineError> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), model)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, BaselineError> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Hyperparameters for every registered baseline; unrelated fields are
/// ignored by each strategy. All fields default so config files can set only
/// what they care about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// TF-IDF vocabulary cap, applied by the experiment layer.
    pub max_features: usize,
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub lambda: f64,
    pub k: usize,
    pub condense: bool,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub m_try: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            max_features: 1000,
            lr: 0.5,
            epochs: 300,
            l2: 1e-4,
            lambda: 1e-4,
            k: 5,
            condense: false,
            n_trees: 100,
            max_depth: None,
            m_try: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// A named trainer. Registered strategies share one parameter struct and one
/// output envelope so the CLI and experiment layer can treat them uniformly.
pub trait BaselineStrategy: Sync {
    fn name(&self) -> &'static str;
    fn train(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        params: &BaselineParams,
    ) -> Result<ModelFile, BaselineError>;
}

struct ForestStrategy;
struct SvmStrategy;
struct LogisticStrategy;
struct KnnStrategy;

impl BaselineStrategy for ForestStrategy {
    fn name(&self) -> &'static str {
        "rf"
    }
    fn train(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        params: &BaselineParams,
    ) -> Result<ModelFile, BaselineError> {
        train_random_forest(
            x,
            y,
            n_classes,
            params.n_trees,
            params.max_depth,
            params.m_try,
            params.bootstrap,
            params.seed,
        )
        .map(ModelFile::Forest)
    }
}

impl BaselineStrategy for SvmStrategy {
    fn name(&self) -> &'static str {
        "svm"
    }
    fn train(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        params: &BaselineParams,
    ) -> Result<ModelFile, BaselineError> {
        train_ova_svm(x, y, n_classes, params.lambda, params.epochs, params.seed)
            .map(ModelFile::OvaSvm)
    }
}

impl BaselineStrategy for LogisticStrategy {
    fn name(&self) -> &'static str {
        "lr"
    }
    fn train(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        params: &BaselineParams,
    ) -> Result<ModelFile, BaselineError> {
        train_ova_logistic(x, y, n_classes, params.lr, params.epochs, params.l2, params.seed)
            .map(ModelFile::OvaLogistic)
    }
}

impl BaselineStrategy for KnnStrategy {
    fn name(&self) -> &'static str {
        "knn"
    }
    fn train(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        _n_classes: usize,
        params: &BaselineParams,
    ) -> Result<ModelFile, BaselineError> {
        let mut model = KnnModel::new(x.to_vec(), y.to_vec(), params.k)?;
        if params.condense {
            model.condense();
        }
        Ok(ModelFile::Knn(model))
    }
}

/// Registration order doubles as the canonical report order.
static REGISTRY: [&dyn BaselineStrategy; 4] =
    [&ForestStrategy, &SvmStrategy, &LogisticStrategy, &KnnStrategy];

pub fn strategies() -> &'static [&'static dyn BaselineStrategy] {
    &REGISTRY
}

pub fn strategy(name: &str) -> Result<&'static dyn BaselineStrategy, BaselineError> {
    REGISTRY
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| BaselineError::UnknownBaseline(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three clusters on separate axes; every classifier should nail these.
    fn cluster_data() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..12 {
            let jitter = 0.01 * i as f64;
            let class = i % 3;
            let mut v = vec![0.0; 3];
            v[class] = 1.0 + jitter;
            x.push(v);
            y.push(class);
        }
        (x, y)
    }

    #[test]
    fn registry_lists_the_four_classifiers_in_report_order() {
        let names: Vec<&str> = strategies().iter().map(|s| s.name()).collect();
        assert_eq!(names, ["rf", "svm", "lr", "knn"]);
        assert_eq!(strategy("knn").unwrap().name(), "knn");
        assert!(matches!(
            strategy("boost"),
            Err(BaselineError::UnknownBaseline(name)) if name == "boost"
        ));
    }

    #[test]
    fn every_strategy_learns_the_clusters() {
        let (x, y) = cluster_data();
        let params = BaselineParams { epochs: 200, ..BaselineParams::default() };
        for s in strategies() {
            let model = s.train(&x, &y, 3, &params).unwrap();
            assert_eq!(model.predict(&x).unwrap(), y, "{} failed", s.name());
        }
    }

    #[test]
    fn ova_ties_go_to_the_smallest_class() {
        let flat = LogisticScorer { weights: vec![0.0, 0.0], bias: 0.0 };
        let model = OvaModel { scorers: vec![flat.clone(), flat.clone(), flat] };
        assert_eq!(model.predict_one(&[3.0, -4.0]).unwrap(), 0);
        assert_eq!(model.n_classes(), 3);
    }

    #[test]
    fn monotone_transforms_never_move_the_argmax() {
        let scorers: Vec<LogisticScorer> = (0..4)
            .map(|c| LogisticScorer { weights: vec![0.3 * c as f64, -0.1], bias: 0.05 * c as f64 })
            .collect();
        let model = OvaModel { scorers };
        let argmax = |v: &[f64]| {
            v.iter().enumerate().fold(0, |b, (i, &s)| if s > v[b] { i } else { b })
        };
        for q in [[0.5, 1.0], [-2.0, 3.0], [4.0, -4.0], [0.0, 0.0]] {
            let raw = model.scores(&q).unwrap();
            let base = argmax(&raw);
            assert_eq!(base, model.predict_one(&q).unwrap());
            for transform in [|s: f64| 2.0 * s + 7.0, |s: f64| s.tanh(), |s: f64| s.exp()] {
                let mapped: Vec<f64> = raw.iter().map(|&s| transform(s)).collect();
                assert_eq!(argmax(&mapped), base);
            }
        }
    }

    #[test]
    fn model_files_round_trip_through_json() {
        let (x, y) = cluster_data();
        let dir = tempfile::tempdir().unwrap();
        let mut models: Vec<ModelFile> = strategies()
            .iter()
            .map(|s| s.train(&x, &y, 3, &BaselineParams::default()).unwrap())
            .collect();
        models.push(ModelFile::Tfidf(fit_tfidf(&["a b", "b c"], 10).unwrap()));
        let kinds: Vec<&str> = models.iter().map(|m| m.kind()).collect();
        assert_eq!(kinds, ["forest", "ova_svm", "ova_logistic", "knn", "tfidf"]);
        for model in &models {
            let path = dir.path().join(format!("{}.json", model.kind()));
            save_model(&path, model).unwrap();
            assert_eq!(&load_model(&path).unwrap(), model);
        }
    }

    #[test]
    fn vocabulary_files_refuse_to_classify() {
        let model = ModelFile::Tfidf(fit_tfidf(&["a"], 10).unwrap());
        assert!(matches!(
            model.predict(&[vec![1.0]]),
            Err(BaselineError::NotAClassifier("tfidf"))
        ));
    }

    #[test]
    fn condensed_training_stores_representatives() {
        let (x, y) = cluster_data();
        let params = BaselineParams { condense: true, k: 3, ..BaselineParams::default() };
        let ModelFile::Knn(model) = strategy("knn").unwrap().train(&x, &y, 3, &params).unwrap()
        else {
            panic!("knn strategy produced a different model kind");
        };
        let reps = model.representatives.as_ref().unwrap();
        assert!(!reps.is_empty() && reps.len() < x.len());
        assert_eq!(model.k, 3);
    }
}
