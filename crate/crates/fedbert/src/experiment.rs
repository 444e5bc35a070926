//! Config-driven experiment orchestration.
//!
//! An [`ExperimentConfig`] pins every input of a run: the dataset source
//! (a log file or a synthetic spec, exactly one), optional per-class
//! resampling, the split, tokenizer and encoder shapes, federation settings,
//! and baseline hyperparameters. [`run_experiment`] executes the whole
//! pipeline and writes its artifacts; because every stochastic step pulls
//! from an explicit seed in the config, repeated single-threaded runs emit
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    self, fit_tfidf, tfidf_transform_all, BaselineError, BaselineParams, ModelFile,
};
use crate::data::{
    encode_labels, parse_records, resample, split_train_test, DataError, LabelMapping,
    LabeledText, MessageRecord, RecordFormat, ResampleMode,
};
use crate::fed::{run_federation, write_round_logs, FedError, FederationConfig};
use crate::metrics::{evaluate, render_comparison, render_report, report_to_json, MetricsError};
use crate::model::{predict, EncoderConfig, ModelError, ParameterSet, Tensor};
use crate::synth::{generate_synthetic, SynthError, SyntheticSpec};
use crate::tokenizer::{build_vocab, encode, TokenSequence, TokenizerError, Vocabulary};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("artifact encode error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where records come from and how they are reduced to the working set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Log file to ingest; leave unset to use the `synth` section instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: RecordFormat,
    /// Per-class downsample targets keyed by raw label; unset keeps all
    /// records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample: Option<BTreeMap<u16, usize>>,
    pub resample_mode: ResampleMode,
    pub resample_seed: u64,
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            format: RecordFormat::Jsonl,
            resample: None,
            resample_mode: ResampleMode::Strict,
            resample_seed: 0,
            split_ratio: 0.8,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { max_len: 64, vocab_size: 512 }
    }
}

/// Encoder shape; vocabulary size, sequence length, and class count are
/// filled in from the prepared dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub layernorm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_model: 32, n_heads: 2, n_layers: 2, d_ff: 64, layernorm_eps: 1e-5 }
    }
}

impl ModelConfig {
    pub fn encoder(&self, vocab_size: usize, max_len: usize, n_classes: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_len,
            n_classes,
            layernorm_eps: self.layernorm_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seed for encoder initialization and federated training streams.
    pub seed: u64,
    /// Baselines to fit, by registry name; empty runs the encoder alone.
    pub baselines: Vec<String>,
    /// Upper bound on concurrent baseline fits. 1 is fully sequential;
    /// artifacts are byte-identical either way.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SyntheticSpec>,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub fed: FederationConfig,
    pub baseline: BaselineParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            baselines: ["rf", "svm", "lr", "knn"].map(String::from).to_vec(),
            threads: 1,
            out_dir: PathBuf::from("runs/exp"),
            data: DataConfig::default(),
            synth: None,
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            fed: FederationConfig::default(),
            baseline: BaselineParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        match (&self.data.path, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(ExperimentError::Config(
                    "set either data.path or a [synth] section, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ExperimentError::Config(
                    "no dataset source: set data.path or a [synth] section".into(),
                ))
            }
            _ => {}
        }
        if self.threads == 0 {
            return Err(ExperimentError::Config("threads must be at least 1".into()));
        }
        for name in &self.baselines {
            baselines::strategy(name)?;
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        self.fed.validate()?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

/// Writes `bytes` to `path` atomically: a temp file in the same directory is
/// filled, flushed, and renamed over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TensorSnapshot {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Serializes weights as JSON at full double precision.
pub fn checkpoint_bytes(params: &ParameterSet) -> Result<Vec<u8>, ExperimentError> {
    let snap: Vec<TensorSnapshot> = params
        .tensors()
        .iter()
        .map(|t| TensorSnapshot {
            name: t.name.clone(),
            shape: t.shape.clone(),
            values: t.values.clone(),
        })
        .collect();
    Ok(serde_json::to_vec_pretty(&snap)?)
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet) -> Result<(), ExperimentError> {
    Ok(write_atomic(path, &checkpoint_bytes(params)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet, ExperimentError> {
    let bytes = fs::read(path)?;
    let snaps: Vec<TensorSnapshot> = serde_json::from_slice(&bytes)?;
    let mut tensors = Vec::with_capacity(snaps.len());
    for s in snaps {
        let expect: usize = s.shape.iter().product();
        if s.values.len() != expect {
            return Err(ExperimentError::Checkpoint(format!(
                "tensor {} has {} values for shape {:?}",
                s.name,
                s.values.len(),
                s.shape
            )));
        }
        if tensors.iter().any(|t: &Tensor| t.name == s.name) {
            return Err(ExperimentError::Checkpoint(format!("duplicate tensor {}", s.name)));
        }
        tensors.push(Tensor::new(s.name, s.shape, s.values));
    }
    Ok(ParameterSet::from_tensors(tensors))
}

/// Everything downstream stages share: the split, the label mapping, the
/// train-fitted vocabulary, and the fully shaped encoder config. Identical
/// configs prepare identical data in every process, which is what lets
/// separate server and client processes agree on shard contents.
pub struct PreparedData {
    pub mapping: LabelMapping,
    pub train: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
    pub vocab: Vocabulary,
    pub encoder: EncoderConfig,
}

/// Loads or generates records per the config, before any splitting.
pub fn source_records(config: &ExperimentConfig) -> Result<Vec<MessageRecord>, ExperimentError> {
    let mut records = match (&config.data.path, &config.synth) {
        (Some(path), None) => {
            let file = fs::File::open(path)?;
            parse_records(file, config.data.format)?
        }
        (None, Some(spec)) => generate_synthetic(spec)?,
        _ => return Err(ExperimentError::Config("exactly one dataset source required".into())),
    };
    if let Some(targets) = &config.data.resample {
        records = resample(
            &records,
            &targets.iter().map(|(&k, &v)| (k, v)).collect(),
            config.data.resample_seed,
            config.data.resample_mode,
        )?;
    }
    Ok(records)
}

pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    config.validate()?;
    let records = source_records(config)?;
    let (examples, mapping) = encode_labels(&records);
    let split = split_train_test(examples, config.data.split_ratio, config.data.split_seed)?;
    // The vocabulary comes from training texts only; test tokens the
    // training set never saw fall to UNK.
    let train_texts: Vec<&str> = split.train.iter().map(|e| e.text.as_str()).collect();
    let vocab = build_vocab(&train_texts, config.tokenizer.vocab_size);
    let encoder = config.model.encoder(vocab.size(), config.tokenizer.max_len, mapping.len());
    encoder.validate()?;
    Ok(PreparedData { mapping, train: split.train, test: split.test, vocab, encoder })
}

fn encode_all(vocab: &Vocabulary, examples: &[LabeledText], max_len: usize) -> Vec<TokenSequence> {
    examples.iter().map(|e| encode(vocab, &e.text, max_len)).collect()
}

fn display_name(key: &str) -> String {
    if key == "fl-bert" {
        "FL-BERT".to_string()
    } else {
        key.to_uppercase()
    }
}

fn file_key(key: &str) -> String {
    key.replace('-', "_")
}

/// Per-model results in comparison-table order.
#[derive(Debug, Clone, Serialize)]
pub struct ModelOutcome {
    pub name: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub struct ExperimentSummary {
    pub labels: Vec<u16>,
    pub outcomes: Vec<ModelOutcome>,
    pub comparison: String,
    pub wall_ms: u64,
}

/// Fits the enabled baselines, at most `threads` concurrently. Results come
/// back in registry order regardless of scheduling.
fn fit_baselines(
    names: &[&str],
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    params: &BaselineParams,
    threads: usize,
) -> Result<Vec<ModelFile>, ExperimentError> {
    if threads <= 1 || names.len() <= 1 {
        return names
            .iter()
            .map(|n| Ok(baselines::strategy(n)?.train(x, y, n_classes, params)?))
            .collect();
    }
    let mut models = Vec::with_capacity(names.len());
    for batch in names.chunks(threads) {
        let fitted = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|n| scope.spawn(move || baselines::strategy(n)?.train(x, y, n_classes, params)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("baseline fit panicked"))
                .collect::<Vec<_>>()
        });
        for model in fitted {
            models.push(model?);
        }
    }
    Ok(models)
}

/// Runs the full pipeline and writes every artifact under `config.out_dir`:
/// the effective config, the vocabulary, the encoder checkpoint and round
/// logs, one model file and one report (text + JSON) per model, the
/// comparison table, and a machine-readable summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    let started = Instant::now();
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.toml"), toml::to_string_pretty(config)?.as_bytes())?;

    let data = prepare(config)?;
    let mut vocab_bytes = Vec::new();
    data.vocab.save(&mut vocab_bytes)?;
    write_atomic(&out.join("vocab.txt"), &vocab_bytes)?;

    let y_test: Vec<usize> = data.test.iter().map(|e| e.class_index).collect();
    let n_classes = data.mapping.len();
    let mut outcomes = Vec::new();
    let mut entries = Vec::new();

    // Conventional band: one shared TF-IDF vectorization, then each enabled
    // strategy in registry order.
    if !config.baselines.is_empty() {
        let train_texts: Vec<&str> = data.train.iter().map(|e| e.text.as_str()).collect();
        let test_texts: Vec<&str> = data.test.iter().map(|e| e.text.as_str()).collect();
        let tfidf = fit_tfidf(&train_texts, config.baseline.max_features)?;
        let x_train = tfidf_transform_all(&tfidf, &train_texts);
        let x_test = tfidf_transform_all(&tfidf, &test_texts);
        let y_train: Vec<usize> = data.train.iter().map(|e| e.class_index).collect();
        save_model_atomic(&out.join("tfidf.json"), &ModelFile::Tfidf(tfidf))?;

        let enabled: Vec<&str> = baselines::strategies()
            .iter()
            .map(|s| s.name())
            .filter(|n| config.baselines.iter().any(|b| b == n))
            .collect();
        let models = fit_baselines(
            &enabled,
            &x_train,
            &y_train,
            n_classes,
            &config.baseline,
            config.threads,
        )?;
        for (name, model) in enabled.iter().zip(&models) {
            save_model_atomic(&out.join(format!("model_{name}.json")), model)?;
            let predictions = model.predict(&x_test)?;
            let report = evaluate(&y_test, &predictions, n_classes)?;
            emit_report(out, name, &report, data.mapping.labels())?;
            entries.push((display_name(name), report.accuracy));
            outcomes.push(ModelOutcome {
                name: display_name(name),
                accuracy: report.accuracy,
                macro_f1: report.macro_avg.f1,
            });
        }
    }

    // Federated encoder.
    let (global, logs) = run_federation(&config.fed, &data.encoder, &data.vocab, &data.train, config.seed)?;
    save_checkpoint(&out.join("global_model.json"), &global)?;
    let mut log_bytes = Vec::new();
    write_round_logs(&logs, &mut log_bytes)?;
    write_atomic(&out.join("rounds.jsonl"), &log_bytes)?;

    let test_seqs = encode_all(&data.vocab, &data.test, data.encoder.max_len);
    let predictions = predict(&global, &data.encoder, &test_seqs)?;
    let report = evaluate(&y_test, &predictions, n_classes)?;
    emit_report(out, "fl-bert", &report, data.mapping.labels())?;
    entries.push((display_name("fl-bert"), report.accuracy));
    outcomes.push(ModelOutcome {
        name: display_name("fl-bert"),
        accuracy: report.accuracy,
        macro_f1: report.macro_avg.f1,
    });

    let comparison = render_comparison(&entries);
    write_atomic(&out.join("comparison.txt"), comparison.as_bytes())?;
    let summary = serde_json::json!({
        "labels": data.mapping.labels(),
        "models": outcomes,
    });
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;

    Ok(ExperimentSummary {
        labels: data.mapping.labels().to_vec(),
        outcomes,
        comparison,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

fn save_model_atomic(path: &Path, model: &ModelFile) -> Result<(), ExperimentError> {
    Ok(write_atomic(path, &serde_json::to_vec_pretty(model)?)?)
}

fn emit_report(
    out: &Path,
    key: &str,
    report: &crate::metrics::ClassificationReport,
    labels: &[u16],
) -> Result<(), ExperimentError> {
    let stem = file_key(key);
    write_atomic(
        &out.join(format!("report_{stem}.txt")),
        render_report(report, labels).as_bytes(),
    )?;
    let json = report_to_json(report, labels);
    write_atomic(
        &out.join(format!("report_{stem}.json")),
        serde_json::to_string_pretty(&json)?.as_bytes(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::synth::ClassCounts;

    /// Small, fast config: synthetic data, slim encoder, light baselines.
    fn tiny_config(out_dir: PathBuf) -> ExperimentConfig {
        let mut config = ExperimentConfig {
            out_dir,
            synth: Some(SyntheticSpec {
                counts: ClassCounts {
                    benign: 40,
                    constant: 40,
                    constant_offset: 40,
                    random: 40,
                    random_offset: 40,
                    eventual_stop: 40,
                },
                seed: 9,
                ..SyntheticSpec::default()
            }),
            ..ExperimentConfig::default()
        };
        config.model = ModelConfig { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32, ..ModelConfig::default() };
        config.fed.rounds = 1;
        config.fed.n_clients = 2;
        config.baseline.epochs = 40;
        config.baseline.n_trees = 10;
        config
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let mut config = ExperimentConfig::default();
        config.synth = Some(SyntheticSpec::default());
        config.data.resample = Some(BTreeMap::from([(0u16, 50000usize), (16, 28832)]));
        config.fed.reinit_every = Some(3);
        let text = toml::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn configs_need_exactly_one_source() {
        let none = ExperimentConfig::default();
        assert!(matches!(none.validate(), Err(ExperimentError::Config(_))));
        let mut both = ExperimentConfig::default();
        both.synth = Some(SyntheticSpec::default());
        both.data.path = Some(PathBuf::from("x.jsonl"));
        assert!(matches!(both.validate(), Err(ExperimentError::Config(_))));
        let mut bad_model = ExperimentConfig::default();
        bad_model.synth = Some(SyntheticSpec::default());
        bad_model.baselines = vec!["adaboost".into()];
        assert!(matches!(
            bad_model.validate(),
            Err(ExperimentError::Baseline(BaselineError::UnknownBaseline(_)))
        ));
    }

    #[test]
    fn checkpoints_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let enc = EncoderConfig::toy(32, 8, 3);
        let params = init_params(&enc, 17);
        let path = dir.path().join("w.json");
        save_checkpoint(&path, &params).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params);

        let mut snaps: serde_json::Value =
            serde_json::from_slice(&checkpoint_bytes(&params).unwrap()).unwrap();
        snaps[0]["shape"][0] = serde_json::json!(3);
        fs::write(&path, serde_json::to_vec(&snaps).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ExperimentError::Checkpoint(_))));
    }

    #[test]
    fn zero_rounds_emit_the_initial_checkpoint_and_a_near_chance_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path().join("run"));
        config.fed.rounds = 0;
        config.baselines.clear();
        let summary = run_experiment(&config).unwrap();

        assert_eq!(summary.outcomes.len(), 1);
        assert_eq!(summary.outcomes[0].name, "FL-BERT");
        // Untrained weights should score near chance on a balanced 6-class
        // split; the band is generous because a random head can collapse.
        assert!(summary.outcomes[0].accuracy < 0.45);

        let stored = load_checkpoint(&config.out_dir.join("global_model.json")).unwrap();
        let data = prepare(&config).unwrap();
        assert_eq!(stored, init_params(&data.encoder, config.seed));
        assert!(config.out_dir.join("report_fl_bert.txt").exists());
        assert!(!config.out_dir.join("tfidf.json").exists());
    }

    #[test]
    fn repeat_runs_write_identical_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut first = tiny_config(dir.path().join("a"));
        first.baselines = vec!["lr".into(), "knn".into()];
        let mut second = first.clone();
        second.out_dir = dir.path().join("b");
        run_experiment(&first).unwrap();
        run_experiment(&second).unwrap();
        for name in [
            "vocab.txt",
            "global_model.json",
            "model_lr.json",
            "model_knn.json",
            "tfidf.json",
            "report_fl_bert.txt",
            "report_fl_bert.json",
            "report_lr.json",
            "report_knn.json",
            "comparison.txt",
            "summary.json",
        ] {
            let a = fs::read(first.out_dir.join(name)).unwrap();
            let b = fs::read(second.out_dir.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        // Round logs carry a measured wall-clock field; everything else in
        // them must match.
        let scrub = |dir: &Path| -> Vec<serde_json::Value> {
            fs::read_to_string(dir.join("rounds.jsonl"))
                .unwrap()
                .lines()
                .map(|l| {
                    let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                    v["wall_ms"] = serde_json::json!(0);
                    v
                })
                .collect()
        };
        assert_eq!(scrub(&first.out_dir), scrub(&second.out_dir));
    }

    #[test]
    fn comparison_table_rows_cover_every_enabled_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path().join("run"));
        config.threads = 2;
        let summary = run_experiment(&config).unwrap();
        let names: Vec<&str> = summary.outcomes.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["RF", "SVM", "LR", "KNN", "FL-BERT"]);
        let table = fs::read_to_string(config.out_dir.join("comparison.txt")).unwrap();
        for name in names {
            assert!(table.contains(name), "missing {name} in:\n{table}");
        }
    }
}
