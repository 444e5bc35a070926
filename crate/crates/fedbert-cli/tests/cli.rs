//! End-to-end checks of the `fedbert` binary: each test drives a real
//! subprocess against a small synthetic config in a temp directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedbert"))
}

/// Writes a fast config: 20 records per class, slim encoder, light baselines.
fn write_config(dir: &Path) -> PathBuf {
    let out = dir.join("run");
    let config = format!(
        r#"
seed = 11
out_dir = {out:?}
baselines = ["rf", "lr"]

[synth]
seed = 11

[synth.counts]
benign = 20
constant = 20
constant_offset = 20
random = 20
random_offset = 20
eventual_stop = 20

[tokenizer]
max_len = 40

[model]
d_model = 8
n_layers = 1
d_ff = 16

[fed]
n_clients = 2
rounds = 1
local_epochs = 1

[baseline]
n_trees = 5
epochs = 40
"#,
        out = out.to_str().unwrap(),
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> String {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    assert!(
        status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&stdout),
        String::from_utf8_lossy(&stderr),
    );
    String::from_utf8(stdout).unwrap()
}

#[test]
fn synth_writes_the_requested_encoding() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    let stdout = run_ok(bin().args(["synth", "--config"]).arg(&config));
    assert!(stdout.contains("generated 120 records"), "stdout: {stdout}");
    assert!(dir.path().join("run/records.jsonl").exists());

    run_ok(bin().args(["synth", "--format", "csv", "--config"]).arg(&config));
    let csv = std::fs::read_to_string(dir.path().join("run/records.csv")).unwrap();
    assert!(csv.starts_with("sendtime,sender,messageID"));
    assert_eq!(csv.lines().count(), 121);
}

#[test]
fn split_reports_every_class() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    let stdout = run_ok(bin().args(["split", "--config"]).arg(&config));
    assert!(stdout.contains("train 96  test 24"), "stdout: {stdout}");
    for label in ["0", "1", "2", "4", "8", "16"] {
        assert!(
            stdout.lines().any(|l| l.split_whitespace().next() == Some(label)),
            "missing label {label} in: {stdout}"
        );
    }
}

#[test]
fn trained_baselines_can_be_evaluated_from_disk() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    let stdout =
        run_ok(bin().args(["train", "baseline", "--model", "lr", "--config"]).arg(&config));
    assert!(stdout.contains("LR"), "stdout: {stdout}");
    assert!(dir.path().join("run/tfidf.json").exists());
    assert!(dir.path().join("run/model_lr.json").exists());

    let stdout = run_ok(bin().args(["evaluate", "--config"]).arg(&config));
    assert!(stdout.lines().any(|l| l.starts_with("Model") && l.ends_with("Accuracy (%)")));
    assert!(stdout.lines().any(|l| l.starts_with("LR")), "stdout: {stdout}");
    // No federated checkpoint was written, so that row must be absent.
    assert!(!stdout.contains("FL-BERT"), "stdout: {stdout}");
}

#[test]
fn fl_bert_training_writes_checkpoint_and_round_logs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    let stdout = run_ok(bin().args(["train", "fl-bert", "--config"]).arg(&config));
    assert!(stdout.contains("FL-BERT"), "stdout: {stdout}");
    assert!(dir.path().join("run/global_model.json").exists());
    let logs = std::fs::read_to_string(dir.path().join("run/rounds.jsonl")).unwrap();
    assert_eq!(logs.lines().count(), 1);

    let stdout = run_ok(bin().args(["evaluate", "--config"]).arg(&config));
    assert!(stdout.contains("FL-BERT"), "stdout: {stdout}");
}

#[test]
fn report_compares_every_enabled_model() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    let stdout = run_ok(bin().args(["report", "--config"]).arg(&config));
    let table: Vec<&str> = stdout.lines().skip_while(|l| !l.starts_with("Model")).collect();
    assert!(table[0].starts_with("Model"), "stdout: {stdout}");
    assert!(table[1].starts_with("RF"));
    assert!(table[2].starts_with("LR"));
    assert!(table[3].starts_with("FL-BERT"));
    assert!(dir.path().join("run/summary.json").exists());
    assert!(dir.path().join("run/comparison.txt").exists());
}

#[test]
fn overrides_replace_config_values() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());
    let alt = dir.path().join("alt");

    run_ok(bin().args(["synth", "--config"]).arg(&config).arg("--out").arg(&alt));
    assert!(alt.join("records.jsonl").exists());
    assert!(!dir.path().join("run/records.jsonl").exists());
}

#[test]
fn a_tcp_federation_round_trips_through_real_sockets() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());
    // Port 0 is not an option here (the clients need the address up front),
    // so probe for a free port by binding and dropping.
    let port = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");

    let mut server = bin()
        .args(["serve", "--bind", &addr, "--join-timeout-secs", "30", "--config"])
        .arg(&config)
        .spawn()
        .unwrap();
    // Clients retry nothing, so give the listener a moment to come up.
    std::thread::sleep(std::time::Duration::from_millis(300));
    let clients: Vec<_> = (0..2)
        .map(|id| {
            bin()
                .args(["client", "--client-id", &id.to_string(), "--connect", &addr, "--config"])
                .arg(&config)
                .spawn()
                .unwrap()
        })
        .collect();

    for mut client in clients {
        assert!(client.wait().unwrap().success());
    }
    assert!(server.wait().unwrap().success());
    assert!(dir.path().join("run/global_model.json").exists());
    assert!(dir.path().join("run/rounds.jsonl").exists());
}

#[test]
fn bad_invocations_fail_loudly() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    // Unregistered baseline name.
    let out = bin()
        .args(["train", "baseline", "--model", "boost", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("boost"));

    // Ingest without a data file configured.
    let out = bin().args(["ingest", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.path"));

    // Client id outside the shard range.
    let out = bin()
        .args(["client", "--client-id", "9", "--connect", "127.0.0.1:1", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn ingest_round_trips_a_data_file() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path());

    // First materialize records, then point a second config at them.
    run_ok(bin().args(["synth", "--config"]).arg(&config));
    let ingest_config = dir.path().join("ingest.toml");
    std::fs::write(
        &ingest_config,
        format!(
            "out_dir = {out:?}\n[data]\npath = {path:?}\n",
            out = dir.path().join("ingested").to_str().unwrap(),
            path = dir.path().join("run/records.jsonl").to_str().unwrap(),
        ),
    )
    .unwrap();

    let stdout = run_ok(bin().args(["ingest", "--format", "csv", "--config"]).arg(&ingest_config));
    assert!(stdout.contains("ingested 120 records"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(dir.path().join("ingested/records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
}
