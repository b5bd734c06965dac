//! End-to-end tests of the `ktrace` binary: artifact layout, exit codes,
//! and byte-level reproducibility of re-runs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ktrace() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ktrace"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn ktrace");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, students: usize, skills: usize, seed: u64) {
    run_ok(ktrace().args([
        "synth",
        "--students",
        &students.to_string(),
        "--skills",
        &skills.to_string(),
        "--min-len",
        "6",
        "--max-len",
        "12",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]));
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

// ── ingest ─────────────────────────────────────────────────────────────

#[test]
fn ingest_writes_canonical_outputs_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("raw.csv");
    fs::write(
        &csv,
        "user_id,skill_id,correct\nu1,0,1\nu1,1,0\nu1,0,1\nu2,1,1\nu2,1,0\n",
    )
    .unwrap();
    let out = tmp.path().join("data");
    let args = [
        "ingest",
        csv.to_str().unwrap(),
        "--format",
        "assistments",
        "--out",
        out.to_str().unwrap(),
    ];
    run_ok(ktrace().args(args));
    let sequences = read(&out.join("sequences.jsonl"));
    let vocab = read(&out.join("vocab.json"));
    let manifest = read(&out.join("manifest.json"));
    assert!(!sequences.is_empty() && !vocab.is_empty());

    run_ok(ktrace().args(args));
    assert_eq!(sequences, read(&out.join("sequences.jsonl")));
    assert_eq!(vocab, read(&out.join("vocab.json")));
    assert_eq!(manifest, read(&out.join("manifest.json")));
}

#[test]
fn ingest_missing_file_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = ktrace()
        .args([
            "ingest",
            tmp.path().join("absent.csv").to_str().unwrap(),
            "--format",
            "assistments",
            "--out",
            tmp.path().join("data").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

// ── usage errors ───────────────────────────────────────────────────────

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = ktrace().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_without_a_seed_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 8, 3, 1);
    let out = ktrace()
        .args([
            "train",
            "--model",
            "bkt",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn bad_probe_thread_cap_is_a_usage_error() {
    let out = ktrace()
        .args(["probe", "gradcheck", "--model", "dkt"])
        .env("KT_PROBE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

// ── synth ──────────────────────────────────────────────────────────────

#[test]
fn synth_is_seed_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    synth(&a, 10, 4, 7);
    synth(&b, 10, 4, 7);
    synth(&c, 10, 4, 8);
    assert_eq!(read(&a.join("sequences.jsonl")), read(&b.join("sequences.jsonl")));
    assert_ne!(read(&a.join("sequences.jsonl")), read(&c.join("sequences.jsonl")));
}

// ── train ──────────────────────────────────────────────────────────────

fn train_dkt(data: &Path, out: &Path, model: &str, epochs: &str) {
    run_ok(ktrace().args([
        "train",
        "--model",
        model,
        "--dataset",
        data.to_str().unwrap(),
        "--hidden",
        "4",
        "--epochs",
        epochs,
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
}

#[test]
fn train_rerun_reproduces_artifacts_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 12, 4, 2);
    let run = tmp.path().join("run");
    train_dkt(&data, &run, "dkt", "2");
    let ckpt = read(&run.join("checkpoint/params.bin"));
    let loss = read(&run.join("loss.csv"));
    let manifest = read(&run.join("manifest.json"));
    train_dkt(&data, &run, "dkt", "2");
    assert_eq!(ckpt, read(&run.join("checkpoint/params.bin")));
    assert_eq!(loss, read(&run.join("loss.csv")));
    assert_eq!(manifest, read(&run.join("manifest.json")));
}

#[test]
fn frozen_training_keeps_recurrent_parameters_and_full_training_moves_them() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 12, 4, 2);

    let hashes = |dir: &Path| -> (String, String) {
        let manifest: serde_json::Value =
            serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap();
        let notes = &manifest["notes"];
        (
            notes["recurrent_hash_pre"].as_str().unwrap().to_string(),
            notes["recurrent_hash_post"].as_str().unwrap().to_string(),
        )
    };

    let frozen = tmp.path().join("frozen");
    train_dkt(&data, &frozen, "dkt_frozen", "1");
    let (pre, post) = hashes(&frozen);
    assert_eq!(pre, post, "frozen mode must not touch recurrent parameters");

    let full = tmp.path().join("full");
    train_dkt(&data, &full, "dkt", "1");
    let (pre, post) = hashes(&full);
    assert_ne!(pre, post, "full training should move recurrent parameters");
}

// ── eval ───────────────────────────────────────────────────────────────

/// The non-empty metric cells of a table.csv, keyed by (dataset, metric).
fn metric_cells(table: &str) -> Vec<(String, String, Vec<String>)> {
    table
        .lines()
        .skip(1)
        .map(|line| {
            let mut cols = line.split(',');
            let dataset = cols.next().unwrap().to_string();
            let metric = cols.next().unwrap().to_string();
            let cells = cols.filter(|c| !c.is_empty()).map(str::to_string).collect();
            (dataset, metric, cells)
        })
        .collect()
}

#[test]
fn bkt_eval_metrics_are_identical_across_orderings() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 20, 4, 3);
    let mut tables = Vec::new();
    for ordering in ["original", "spread"] {
        let out = tmp.path().join(format!("eval-{ordering}"));
        run_ok(ktrace().args([
            "eval",
            "--model",
            "bkt",
            "--dataset",
            data.to_str().unwrap(),
            "--ordering",
            ordering,
            "--folds",
            "3",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]));
        tables.push(String::from_utf8(read(&out.join("table.csv"))).unwrap());
    }
    let original = metric_cells(&tables[0]);
    let spread = metric_cells(&tables[1]);
    for ((d0, m0, c0), (d1, m1, c1)) in original.iter().zip(&spread) {
        assert_eq!((d0, m0), (d1, m1));
        assert_eq!(c0, c1, "{m0} cells differ between orderings");
    }
}

#[test]
fn eval_writes_report_and_table() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 15, 3, 6);
    let out = tmp.path().join("eval");
    run_ok(ktrace().args([
        "eval",
        "--model",
        "pfa",
        "--dataset",
        data.to_str().unwrap(),
        "--folds",
        "3",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]));
    let report: serde_json::Value = serde_json::from_slice(&read(&out.join("report.json"))).unwrap();
    assert_eq!(report["model"], "pfa");
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    let table = String::from_utf8(read(&out.join("table.csv"))).unwrap();
    assert!(table.starts_with("dataset,metric,pfa,bkt,dkt,dkt_spread,dkt_untrained"));
}

// ── config files ───────────────────────────────────────────────────────

#[test]
fn config_file_resolves_and_flags_override_it() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 12, 4, 2);
    let run = tmp.path().join("run");
    let config = tmp.path().join("run.json");
    fs::write(
        &config,
        serde_json::json!({
            "model": "dkt",
            "dataset": {"path": data, "format": "canonical"},
            "hyperparameters": {"hidden": 4, "epochs": 2},
            "seed": 5,
            "output": run,
        })
        .to_string(),
    )
    .unwrap();

    run_ok(ktrace().args(["train", "--config", config.to_str().unwrap()]));
    // Same settings as the flag-driven run in the reproducibility test.
    let flag_run = tmp.path().join("flag-run");
    train_dkt(&data, &flag_run, "dkt", "2");
    assert_eq!(
        read(&run.join("checkpoint/params.bin")),
        read(&flag_run.join("checkpoint/params.bin"))
    );

    // An override shortens the run: header plus one epoch row.
    let short = tmp.path().join("short");
    run_ok(ktrace().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        short.to_str().unwrap(),
    ]));
    let loss = String::from_utf8(read(&short.join("loss.csv"))).unwrap();
    assert_eq!(loss.lines().count(), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("run.json");
    fs::write(&config, r#"{"model": "bkt", "sede": 1}"#).unwrap();
    let out = ktrace()
        .args(["train", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

// ── probes ─────────────────────────────────────────────────────────────

#[test]
fn gradcheck_probe_passes_and_prints_errors() {
    let out = run_ok(ktrace().args(["probe", "gradcheck"]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("dkt: max relative error"));
    assert!(stdout.contains("dkvmn: max relative error"));
}

#[test]
fn oracle_probe_artifacts_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 12, 4, 2);
    let run = tmp.path().join("run");
    train_dkt(&data, &run, "dkt", "1");
    let ckpt = run.join("checkpoint");

    let probe = |dir: &Path| {
        run_ok(ktrace().args([
            "probe",
            "oracle",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--skills",
            "0,2",
            "--steps",
            "25",
            "--out",
            dir.to_str().unwrap(),
        ]));
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    probe(&a);
    probe(&b);
    assert_eq!(read(&a.join("oracle.csv")), read(&b.join("oracle.csv")));
    assert_eq!(read(&a.join("oracle.svg")), read(&b.join("oracle.svg")));
}

#[test]
fn streak_and_deltas_probes_emit_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 12, 4, 2);
    let run = tmp.path().join("run");
    train_dkt(&data, &run, "dkt", "1");
    let ckpt = run.join("checkpoint");

    let streak_out = tmp.path().join("streak");
    run_ok(ktrace().args([
        "probe",
        "streak",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--skills",
        "1,3",
        "--streak",
        "5",
        "--out",
        streak_out.to_str().unwrap(),
    ]));
    assert!(streak_out.join("streak_s1.csv").exists());
    assert!(streak_out.join("streak_s3.svg").exists());

    let deltas_out = tmp.path().join("deltas");
    run_ok(ktrace().args([
        "probe",
        "deltas",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        deltas_out.to_str().unwrap(),
    ]));
    let csv = String::from_utf8(read(&deltas_out.join("deltas.csv"))).unwrap();
    assert!(csv.starts_with("step,skill,correct,"));
}

#[test]
fn memory_probe_reads_a_dkvmn_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 10, 4, 2);
    let run = tmp.path().join("run");
    run_ok(ktrace().args([
        "train",
        "--model",
        "dkvmn",
        "--dataset",
        data.to_str().unwrap(),
        "--slots",
        "3",
        "--d-k",
        "4",
        "--d-v",
        "4",
        "--d-f",
        "4",
        "--epochs",
        "1",
        "--seed",
        "5",
        "--out",
        run.to_str().unwrap(),
    ]));
    let out = tmp.path().join("memory");
    run_ok(ktrace().args([
        "probe",
        "memory",
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--skills",
        "0,2",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(out.join("memory_s0.csv").exists());
    assert!(out.join("memory_s2.svg").exists());
    // A DKT probe pointed at a DKVMN checkpoint must fail cleanly.
    let misuse = ktrace()
        .args([
            "probe",
            "oracle",
            "--checkpoint",
            run.join("checkpoint").to_str().unwrap(),
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(misuse.status.code(), Some(2));
}
