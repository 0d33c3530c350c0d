//! End-to-end tests of the `wavesift` binary: exit-code families, the
//! single-line error contract, stage chaining, checkpoint resume, and the
//! ablation flags. Every run uses the bundled demo panel and config with
//! `--out` pointed at a fresh temp directory.

use std::path::Path;
use std::process::{Command, Output};

const REPO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
const DEMO: &str = "configs/demo.conf";

fn wavesift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavesift"))
        .current_dir(REPO)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_ok(out: &Output, what: &str) -> String {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Failure contract: the given exit code and exactly one stderr line of the
/// form `error[CODE]: message`.
fn assert_error(out: &Output, exit_code: i32, code: &str, needles: &[&str]) -> String {
    assert_eq!(out.status.code(), Some(exit_code), "exit code");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.trim_end_matches('\n');
    assert!(!line.contains('\n'), "stderr is not a single line:\n{stderr}");
    assert!(line.starts_with(&format!("error[{code}]: ")), "bad prefix: {line}");
    for needle in needles {
        assert!(line.contains(needle), "missing '{needle}' in: {line}");
    }
    line.to_string()
}

fn out_arg(dir: &tempfile::TempDir) -> &str {
    dir.path().to_str().unwrap()
}

fn read_artifact(dir: &tempfile::TempDir, name: &str) -> Vec<u8> {
    std::fs::read(dir.path().join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"))
}

fn read_json(dir: &tempfile::TempDir, name: &str) -> serde_json::Value {
    serde_json::from_slice(&read_artifact(dir, name)).unwrap()
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = wavesift(&["cluster", "--config", "no-such-file.conf"]);
    assert_error(&out, 2, "E2-CONFIG", &["cannot read config file", "no-such-file.conf"]);
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavesift(&["cluster", "--config", DEMO, "--out", out_arg(&dir), "--sipr.bogus", "3"]);
    assert_error(&out, 2, "E2-CONFIG", &["unknown config keys", "sipr.bogus"]);
}

#[test]
fn dangling_override_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavesift(&["cluster", "--config", DEMO, "--out", out_arg(&dir), "--seed"]);
    assert_error(&out, 2, "E2-ARGUMENT", &["--seed", "missing its value"]);
}

#[test]
fn invalid_fixed_wavelet_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        wavesift(&["train", "--config", DEMO, "--out", out_arg(&dir), "--fixed-wavelet", "sym9"]);
    assert_error(&out, 2, "E2-ARGUMENT", &["unknown wavelet basis 'sym9'"]);
}

#[test]
fn segment_before_cluster_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavesift(&["segment", "--config", DEMO, "--out", out_arg(&dir)]);
    let line = assert_error(&out, 3, "E3-DATA", &["library.json", "run the cluster stage first"]);
    assert!(line.contains(out_arg(&dir)), "error should name the searched path: {line}");
}

#[test]
fn backtest_before_train_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = wavesift(&["backtest", "--config", DEMO, "--out", out_arg(&dir)]);
    assert_error(
        &out,
        3,
        "E3-DATA",
        &["model.json", "run the train stage first or pass an explicit path"],
    );
}

#[test]
fn report_with_unreadable_file_is_a_data_error() {
    let out = wavesift(&["report", "nope/metrics.json"]);
    assert_error(&out, 3, "E3-DATA", &["cannot read", "nope/metrics.json"]);
}

/// The full stage chain on the demo config, checking each stage's artifacts
/// and stdout summary, then the report renderer on the resulting metrics.
#[test]
fn pipeline_stages_chain_and_report_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir);
    let fast = ["--train.pretrain_epochs", "2", "--train.finetune_epochs", "1"];

    let stdout = assert_ok(&wavesift(&["cluster", "--config", DEMO, "--out", out]), "cluster");
    assert!(stdout.contains("centroids fitted on"), "{stdout}");
    assert!(dir.path().join("library.json").exists());

    let stdout = assert_ok(&wavesift(&["segment", "--config", DEMO, "--out", out]), "segment");
    assert!(stdout.contains("series segmented into"), "{stdout}");
    let seg = read_json(&dir, "segmentation.json");
    assert_eq!(seg["format_version"], 1);
    assert_eq!(seg["symbols"].as_array().unwrap().len(), 6);
    assert_eq!(seg["segmentations"].as_array().unwrap().len(), 6);

    let stdout = assert_ok(&wavesift(&["tokenize", "--config", DEMO, "--out", out]), "tokenize");
    assert!(stdout.contains("tokenized for"), "{stdout}");
    let tok = read_json(&dir, "tokens.json");
    assert_eq!(tok["format_version"], 1);
    assert_eq!(tok["window_len"], 64);
    let stocks = tok["tokens"].as_array().unwrap();
    assert_eq!(stocks.len(), 6);
    let features = stocks[0].as_array().unwrap();
    assert_eq!(features.len(), tok["feature_names"].as_array().unwrap().len());
    let rows = features[0].as_array().unwrap();
    assert_eq!(rows.len(), tok["positions"][0].as_array().unwrap().len());
    let dim = tok["patch_len"].as_u64().unwrap() * (tok["levels"].as_u64().unwrap() + 1);
    assert_eq!(rows[0].as_array().unwrap().len() as u64, dim);

    let mut args = vec!["train", "--config", DEMO, "--out", out];
    args.extend_from_slice(&fast);
    let stdout = assert_ok(&wavesift(&args), "train");
    assert!(stdout.contains("stage 1: 2 epochs"), "{stdout}");
    assert!(stdout.contains("stage 2: 1 epochs"), "{stdout}");
    assert!(stdout.contains("samples"), "{stdout}");

    let mut args = vec!["backtest", "--config", DEMO, "--out", out];
    args.extend_from_slice(&fast);
    let stdout = assert_ok(&wavesift(&args), "backtest");
    assert!(stdout.contains("scored"), "{stdout}");
    assert!(stdout.contains("ARR"), "table missing from stdout: {stdout}");
    let equity = String::from_utf8(read_artifact(&dir, "equity.csv")).unwrap();
    assert!(equity.starts_with("date,daily_return,equity\n"), "{equity}");
    let metrics = read_json(&dir, "metrics.json");
    assert!(metrics["arr"].is_number(), "{metrics}");
    assert!(dir.path().join("metrics.txt").exists());

    // A report of one file renders the table without ranking lines.
    let single = dir.path().join("metrics.json");
    let stdout = assert_ok(&wavesift(&["report", single.to_str().unwrap()]), "report single");
    assert!(stdout.contains("ARR") && !stdout.contains("ranks"), "{stdout}");

    // Against an identical copy every metric ties, so the candidate ranks
    // first on all of them.
    let copy = dir.path().join("copy.json");
    std::fs::copy(&single, &copy).unwrap();
    let stdout = assert_ok(
        &wavesift(&["report", single.to_str().unwrap(), copy.to_str().unwrap()]),
        "report pair",
    );
    let ranks: Vec<&str> = stdout.lines().filter(|l| l.contains(" ranks ")).collect();
    assert!(!ranks.is_empty(), "{stdout}");
    assert!(ranks.iter().all(|l| l.contains("ranks 1 of 2")), "{stdout}");
}

#[test]
fn no_sipr_trains_without_a_pattern_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir);
    let stdout = assert_ok(
        &wavesift(&[
            "train", "--config", DEMO, "--out", out, "--no-sipr",
            "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        ]),
        "train --no-sipr",
    );
    assert!(stdout.contains("stage 1: 1 epochs"), "{stdout}");
    for artifact in ["model.json", "filters.json", "trace.csv"] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
    // No pattern guidance means no library lookup and no segmentation pass.
    assert!(!dir.path().join("library.json").exists());
    assert!(!dir.path().join("segmentation.json").exists());

    let stdout = assert_ok(
        &wavesift(&[
            "backtest", "--config", DEMO, "--out", out, "--no-sipr",
            "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        ]),
        "backtest --no-sipr",
    );
    assert!(stdout.contains("scored"), "{stdout}");
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn fixed_wavelet_keeps_the_standard_taps() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(
        &wavesift(&[
            "train", "--config", DEMO, "--out", out_arg(&dir), "--no-sipr",
            "--fixed-wavelet", "haar",
            "--train.pretrain_epochs", "2", "--train.finetune_epochs", "1",
        ]),
        "train --fixed-wavelet haar",
    );
    let ckpt = read_json(&dir, "filters.json");
    assert_eq!(ckpt["k"], 2);
    assert_eq!(ckpt["shared"], true);
    let pair = &ckpt["channels"][0];
    let tap = |v: &serde_json::Value| v.as_f64().unwrap();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    // Frozen taps survive both stages bit-exactly.
    assert_eq!(tap(&pair["h"][0]), c);
    assert_eq!(tap(&pair["h"][1]), c);
    assert_eq!(tap(&pair["g"][0]), c);
    assert_eq!(tap(&pair["g"][1]), -c);
}

/// Stopping after a few epochs and resuming must land on the same bytes as
/// one uninterrupted run, including the appended trace.
#[test]
fn training_resumes_to_the_same_checkpoint() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let train = |out: &str, pre: &str, fine: &str| {
        assert_ok(
            &wavesift(&[
                "train", "--config", DEMO, "--out", out, "--no-sipr",
                "--train.pretrain_epochs", pre, "--train.finetune_epochs", fine,
            ]),
            "train",
        )
    };
    train(out_arg(&full), "5", "3");
    train(out_arg(&split), "2", "0");
    let stdout = train(out_arg(&split), "5", "3");
    assert!(stdout.contains("stage 1: 3 epochs"), "{stdout}");
    assert!(stdout.contains("stage 2: 3 epochs"), "{stdout}");

    for artifact in ["model.json", "filters.json", "trace.csv"] {
        assert_eq!(
            read_artifact(&full, artifact),
            read_artifact(&split, artifact),
            "{artifact} differs between resumed and uninterrupted runs"
        );
    }

    // A third run with nothing left to do must not move the checkpoint.
    let before = read_artifact(&split, "model.json");
    let stdout = train(out_arg(&split), "5", "3");
    assert!(stdout.contains("nothing to do"), "{stdout}");
    assert_eq!(before, read_artifact(&split, "model.json"));
}

#[test]
fn mismatched_levels_against_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir);
    assert_ok(
        &wavesift(&[
            "train", "--config", DEMO, "--out", out, "--no-sipr",
            "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        ]),
        "train",
    );
    let bt = wavesift(&[
        "backtest", "--config", DEMO, "--out", out, "--no-sipr",
        "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        "--swt.levels", "2",
    ]);
    assert_error(&bt, 2, "E2-CONFIG", &["filter checkpoint was built for 3 levels", "wants 2"]);
}

#[test]
fn top_k_larger_than_universe_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir);
    assert_ok(
        &wavesift(&[
            "train", "--config", DEMO, "--out", out, "--no-sipr",
            "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        ]),
        "train",
    );
    let bt = wavesift(&[
        "backtest", "--config", DEMO, "--out", out, "--no-sipr",
        "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        "--backtest.top_k", "99",
    ]);
    assert_error(&bt, 2, "E2-CONFIG", &["top_k 99 exceeds the 6-stock universe"]);
}

fn write_segmentation_stub(dir: &Path, format_version: u32) {
    let stub = serde_json::json!({
        "format_version": format_version,
        "feature": "close",
        "symbols": ["ZZZ"],
        "series_len": 1,
        "segmentations": [],
    });
    std::fs::write(dir.join("segmentation.json"), stub.to_string()).unwrap();
}

#[test]
fn segmentation_artifact_is_validated_before_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir);
    assert_ok(&wavesift(&["cluster", "--config", DEMO, "--out", out]), "cluster");

    // An unsupported version is an error, not a silent recompute.
    write_segmentation_stub(dir.path(), 99);
    let tr = wavesift(&[
        "train", "--config", DEMO, "--out", out,
        "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
    ]);
    assert_error(&tr, 3, "E3-DATA", &["segmentation format 99 unsupported (current 1)"]);

    // A stale file for some other panel is recomputed from the library.
    write_segmentation_stub(dir.path(), 1);
    assert_ok(
        &wavesift(&[
            "train", "--config", DEMO, "--out", out,
            "--train.pretrain_epochs", "1", "--train.finetune_epochs", "0",
        ]),
        "train after stale segmentation",
    );
    let seg = read_json(&dir, "segmentation.json");
    let symbols = seg["symbols"].as_array().unwrap();
    assert_eq!(symbols.len(), 6);
    assert!(symbols.iter().all(|s| s != "ZZZ"), "{seg}");
    assert_eq!(seg["segmentations"].as_array().unwrap().len(), 6);
}
