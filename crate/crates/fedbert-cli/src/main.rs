//! Command-line harness for the fedbert pipeline.
//!
//! Every subcommand reads one TOML experiment config and derives everything
//! else from it, so separate invocations (and separate machines, for
//! `serve`/`client`) agree on the dataset, the split, the shards, and the
//! model shapes by construction.

use std::collections::BTreeMap;
use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fedbert::baselines::{self, fit_tfidf, tfidf_transform_all, ModelFile};
use fedbert::data::{write_csv, write_jsonl, LabeledText};
use fedbert::experiment::{
    load_config, load_checkpoint, prepare, run_experiment, save_checkpoint, source_records,
    write_atomic, ExperimentConfig,
};
use fedbert::fed::{partition, run_federation, write_round_logs};
use fedbert::metrics::{evaluate, render_comparison, render_report, ClassificationReport};
use fedbert::model::{init_params, predict};
use fedbert::tokenizer::encode;
use fedbert::transport::{run_client, run_server};

#[derive(Parser)]
#[command(name = "fedbert", version, about = "Federated intrusion detection over beacon text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

impl Format {
    fn file_name(self) -> &'static str {
        match self {
            Format::Jsonl => "records.jsonl",
            Format::Csv => "records.csv",
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's cap on concurrent baseline fits.
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = load_config(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse the config's data file and write canonical records.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Output encoding.
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Generate synthetic records from the config's [synth] section.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output encoding.
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Print the train/test split and per-class counts.
    Split {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one model family and report on the held-out split.
    Train {
        #[command(subcommand)]
        which: TrainCommand,
    },
    /// Host the aggregation server for a TCP federation.
    Serve {
        #[command(flatten)]
        common: CommonArgs,
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:7171")]
        bind: String,
        /// Seconds to wait for all clients to join.
        #[arg(long, default_value_t = 60)]
        join_timeout_secs: u64,
    },
    /// Join a TCP federation as one client.
    Client {
        #[command(flatten)]
        common: CommonArgs,
        /// This client's id in 0..fed.n_clients.
        #[arg(long)]
        client_id: u32,
        /// Server address.
        #[arg(long, default_value = "127.0.0.1:7171")]
        connect: String,
    },
    /// Re-evaluate saved models from the output directory on the test split.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full experiment and print the comparison table.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Federated encoder training, all clients in-process.
    FlBert {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// One conventional baseline over TF-IDF features.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        /// Registered model name.
        #[arg(long)]
        model: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest { common, format } => ingest(&common, format),
        Command::Synth { common, format } => synth(&common, format),
        Command::Split { common } => split(&common),
        Command::Train { which } => match which {
            TrainCommand::FlBert { common } => train_fl_bert(&common),
            TrainCommand::Baseline { common, model } => train_baseline(&common, &model),
        },
        Command::Serve { common, bind, join_timeout_secs } => {
            serve(&common, &bind, join_timeout_secs)
        }
        Command::Client { common, client_id, connect } => client(&common, client_id, &connect),
        Command::Evaluate { common } => evaluate_saved(&common),
        Command::Report { common } => report(&common),
    }
}

fn write_records(
    records: &[fedbert::data::MessageRecord],
    out_dir: &Path,
    format: Format,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut bytes = Vec::new();
    match format {
        Format::Jsonl => write_jsonl(records, &mut bytes)?,
        Format::Csv => write_csv(records, &mut bytes)?,
    }
    let path = out_dir.join(format.file_name());
    write_atomic(&path, &bytes)?;
    Ok(path)
}

fn ingest(common: &CommonArgs, format: Format) -> Result<()> {
    let config = common.load()?;
    if config.data.path.is_none() {
        bail!("ingest needs data.path in the config; use `synth` for generated data");
    }
    let records = source_records(&config)?;
    let path = write_records(&records, &config.out_dir, format)?;
    println!("ingested {} records -> {}", records.len(), path.display());
    Ok(())
}

fn synth(common: &CommonArgs, format: Format) -> Result<()> {
    let config = common.load()?;
    if config.synth.is_none() {
        bail!("synth needs a [synth] section in the config");
    }
    let records = source_records(&config)?;
    let path = write_records(&records, &config.out_dir, format)?;
    println!("generated {} records -> {}", records.len(), path.display());
    Ok(())
}

fn split(common: &CommonArgs) -> Result<()> {
    let config = common.load()?;
    let data = prepare(&config)?;
    let count = |examples: &[LabeledText]| {
        let mut m: BTreeMap<u16, usize> = BTreeMap::new();
        for e in examples {
            *m.entry(e.raw_label).or_default() += 1;
        }
        m
    };
    let (train, test) = (count(&data.train), count(&data.test));
    println!("train {}  test {}  (ratio {})", data.train.len(), data.test.len(), config.data.split_ratio);
    println!("{:>5}  {:>7}  {:>6}", "label", "train", "test");
    for label in data.mapping.labels() {
        println!(
            "{label:>5}  {:>7}  {:>6}",
            train.get(label).copied().unwrap_or(0),
            test.get(label).copied().unwrap_or(0),
        );
    }
    Ok(())
}

fn print_report(name: &str, report: &ClassificationReport, labels: &[u16]) {
    println!("{name}");
    println!("{}", render_report(report, labels));
    println!("accuracy {:.4}  macro-f1 {:.4}\n", report.accuracy, report.macro_avg.f1);
}

fn train_fl_bert(common: &CommonArgs) -> Result<()> {
    let config = common.load()?;
    let data = prepare(&config)?;
    let (global, logs) =
        run_federation(&config.fed, &data.encoder, &data.vocab, &data.train, config.seed)?;
    fs::create_dir_all(&config.out_dir)?;
    save_checkpoint(&config.out_dir.join("global_model.json"), &global)?;
    let mut log_bytes = Vec::new();
    write_round_logs(&logs, &mut log_bytes)?;
    write_atomic(&config.out_dir.join("rounds.jsonl"), &log_bytes)?;

    let sequences: Vec<_> =
        data.test.iter().map(|e| encode(&data.vocab, &e.text, data.encoder.max_len)).collect();
    let predictions = predict(&global, &data.encoder, &sequences)?;
    let y_test: Vec<usize> = data.test.iter().map(|e| e.class_index).collect();
    let report = evaluate(&y_test, &predictions, data.mapping.len())?;
    print_report("FL-BERT", &report, data.mapping.labels());
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}

fn train_baseline(common: &CommonArgs, model_name: &str) -> Result<()> {
    let config = common.load()?;
    let strategy = baselines::strategy(model_name)?;
    let data = prepare(&config)?;
    let train_texts: Vec<&str> = data.train.iter().map(|e| e.text.as_str()).collect();
    let test_texts: Vec<&str> = data.test.iter().map(|e| e.text.as_str()).collect();
    let tfidf = fit_tfidf(&train_texts, config.baseline.max_features)?;
    let x_train = tfidf_transform_all(&tfidf, &train_texts);
    let x_test = tfidf_transform_all(&tfidf, &test_texts);
    let y_train: Vec<usize> = data.train.iter().map(|e| e.class_index).collect();
    let model = strategy.train(&x_train, &y_train, data.mapping.len(), &config.baseline)?;

    fs::create_dir_all(&config.out_dir)?;
    write_atomic(
        &config.out_dir.join("tfidf.json"),
        &serde_json::to_vec_pretty(&ModelFile::Tfidf(tfidf))?,
    )?;
    write_atomic(
        &config.out_dir.join(format!("model_{model_name}.json")),
        &serde_json::to_vec_pretty(&model)?,
    )?;

    let predictions = model.predict(&x_test)?;
    let y_test: Vec<usize> = data.test.iter().map(|e| e.class_index).collect();
    let report = evaluate(&y_test, &predictions, data.mapping.len())?;
    print_report(&model_name.to_uppercase(), &report, data.mapping.labels());
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}

fn serve(common: &CommonArgs, bind: &str, join_timeout_secs: u64) -> Result<()> {
    let config = common.load()?;
    let data = prepare(&config)?;
    let listener = TcpListener::bind(bind).with_context(|| format!("binding {bind}"))?;
    println!(
        "listening on {} for {} clients, {} rounds",
        listener.local_addr()?,
        config.fed.n_clients,
        config.fed.rounds
    );
    let (global, logs) = run_server(
        &listener,
        &config.fed,
        &data.encoder,
        config.seed,
        Duration::from_secs(join_timeout_secs),
    )?;
    fs::create_dir_all(&config.out_dir)?;
    save_checkpoint(&config.out_dir.join("global_model.json"), &global)?;
    let mut log_bytes = Vec::new();
    write_round_logs(&logs, &mut log_bytes)?;
    write_atomic(&config.out_dir.join("rounds.jsonl"), &log_bytes)?;
    println!("federation finished; artifacts in {}", config.out_dir.display());
    Ok(())
}

fn client(common: &CommonArgs, client_id: u32, connect: &str) -> Result<()> {
    let config = common.load()?;
    let data = prepare(&config)?;
    let mut shards = partition(&data.train, &config.fed)?;
    if client_id as usize >= shards.len() {
        bail!("client id {client_id} out of range for {} clients", shards.len());
    }
    let shard = std::mem::take(&mut shards[client_id as usize]);
    println!("client {client_id}: {} examples, connecting to {connect}", shard.len());
    let stream = TcpStream::connect(connect).with_context(|| format!("connecting {connect}"))?;
    let rounds = run_client(
        stream,
        client_id,
        shard,
        &data.vocab,
        &data.encoder,
        config.fed.local_epochs,
        config.fed.batch_size,
        config.seed,
    )?;
    println!("client {client_id} completed {rounds} rounds");
    Ok(())
}

fn evaluate_saved(common: &CommonArgs) -> Result<()> {
    let config = common.load()?;
    let data = prepare(&config)?;
    let y_test: Vec<usize> = data.test.iter().map(|e| e.class_index).collect();
    let mut entries = Vec::new();

    let tfidf_path = config.out_dir.join("tfidf.json");
    if tfidf_path.exists() {
        let ModelFile::Tfidf(tfidf) = baselines::load_model(&tfidf_path)? else {
            bail!("{} does not hold a tfidf vocabulary", tfidf_path.display());
        };
        let test_texts: Vec<&str> = data.test.iter().map(|e| e.text.as_str()).collect();
        let x_test = tfidf_transform_all(&tfidf, &test_texts);
        for strategy in baselines::strategies() {
            let path = config.out_dir.join(format!("model_{}.json", strategy.name()));
            if !path.exists() {
                continue;
            }
            let model = baselines::load_model(&path)?;
            let predictions = model.predict(&x_test)?;
            let report = evaluate(&y_test, &predictions, data.mapping.len())?;
            print_report(&strategy.name().to_uppercase(), &report, data.mapping.labels());
            entries.push((strategy.name().to_uppercase(), report.accuracy));
        }
    }

    let checkpoint = config.out_dir.join("global_model.json");
    if checkpoint.exists() {
        let global = load_checkpoint(&checkpoint)?;
        global.check_layout(&init_params(&data.encoder, 0))?;
        let sequences: Vec<_> =
            data.test.iter().map(|e| encode(&data.vocab, &e.text, data.encoder.max_len)).collect();
        let predictions = predict(&global, &data.encoder, &sequences)?;
        let report = evaluate(&y_test, &predictions, data.mapping.len())?;
        print_report("FL-BERT", &report, data.mapping.labels());
        entries.push(("FL-BERT".to_string(), report.accuracy));
    }

    if entries.is_empty() {
        bail!("no saved models found in {}", config.out_dir.display());
    }
    println!("{}", render_comparison(&entries));
    Ok(())
}

fn report(common: &CommonArgs) -> Result<()> {
    let config = common.load()?;
    let summary = run_experiment(&config)?;
    println!("{}", summary.comparison);
    for outcome in &summary.outcomes {
        println!("{:<8} accuracy {:.4}  macro-f1 {:.4}", outcome.name, outcome.accuracy, outcome.macro_f1);
    }
    println!("artifacts in {} ({} ms)", config.out_dir.display(), summary.wall_ms);
    Ok(())
}
