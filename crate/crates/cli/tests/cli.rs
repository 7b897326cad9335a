//! End-to-end checks of the dgbench binary: exit codes, the worked hparams
//! override, and the sweep -> select -> report pipeline.

use std::path::PathBuf;
use std::process::{Command, Output};

fn dgbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tmp(tag: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("dgbench-cli-{tag}-{}.jsonl", std::process::id()));
    let _ = std::fs::remove_file(&p);
    p
}

#[test]
fn help_lists_registries() {
    let out = dgbench(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["cmnist", "rmnist-synth", "toy", "ERM", "CDANN", "oracle", "leave-one-out"] {
        assert!(text.contains(name), "--help should mention {name}:\n{text}");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unknown flag / dataset / algorithm -> 2.
    assert_eq!(dgbench(&["--definitely-not-a-flag"]).status.code(), Some(2));
    assert_eq!(
        dgbench(&["train", "--dataset", "imagenet", "--algorithm", "ERM", "--test-env", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        dgbench(&["train", "--dataset", "toy", "--algorithm", "SGD", "--test-env", "0"]).status.code(),
        Some(2)
    );
    // Missing data directory -> 1 with the path in the message.
    let out = dgbench(&[
        "train", "--dataset", "cmnist", "--algorithm", "ERM", "--test-env", "0", "--data-dir", "/no/such/dir",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/dir"), "{err}");
}

#[test]
fn train_applies_the_worked_hparams_override() {
    let rec_path = tmp("train");
    let out = dgbench(&[
        "train",
        "--dataset",
        "toy",
        "--algorithm",
        "DRO",
        "--test-env",
        "2",
        "--seed",
        "0",
        "--steps",
        "20",
        "--checkpoint-freq",
        "10",
        "--hparams",
        r#"{"dro_eta": 0.2, "batch_size": 8, "mlp_width": 8, "mlp_depth": 1}"#,
        "--out",
        rec_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&rec_path).unwrap();
    assert!(text.contains(r#""dro_eta": 0.2"#) || text.contains(r#""dro_eta":0.2"#), "{text}");
    // Only the overridden knob changes; the defaults stay.
    assert!(text.contains(r#""lr":0.001"#), "{text}");
    std::fs::remove_file(&rec_path).unwrap();
}

#[test]
fn sweep_select_report_pipeline() {
    let rec_path = tmp("pipeline");
    let out = dgbench(&[
        "sweep",
        "--dataset",
        "toy",
        "--algorithms",
        "ERM,DRO",
        "--trials",
        "2",
        "--reps",
        "2",
        "--seed",
        "5",
        "--steps",
        "10",
        "--checkpoint-freq",
        "5",
        "--workers",
        "2",
        "--hparams",
        r#"{"featurizer": "mlp", "mlp_width": 8, "mlp_depth": 1, "batch_size": 8}"#,
        "--out",
        rec_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // 2 algorithms x 3 envs x 2 trials x 2 reps.
    assert!(stdout(&out).contains("24 runs executed"), "{}", stdout(&out));

    for criterion in ["training-domain", "oracle"] {
        let out = dgbench(&["select", "--records", rec_path.to_str().unwrap(), "--criterion", criterion]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let lines = stdout(&out);
        // One line per (dataset, algorithm, env, rep) group.
        assert_eq!(lines.lines().count(), 12, "{lines}");
        assert!(lines.contains("toy ERM test_env=0 rep=0"), "{lines}");
    }

    let out = dgbench(&[
        "report", "--records", rec_path.to_str().unwrap(), "--criterion", "oracle", "--format", "markdown",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("| Algorithm | a | b | c | Avg |"), "{table}");
    assert!(table.contains("| ERM |") && table.contains("| DRO |"), "{table}");

    let out = dgbench(&[
        "report", "--records", rec_path.to_str().unwrap(), "--criterion", "oracle", "--format", "latex",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("\\begin{tabular}"), "{}", stdout(&out));
    std::fs::remove_file(&rec_path).unwrap();
}

#[test]
fn report_reproduces_the_golden_latex_table() {
    let fixture = include_str!("../../core/tests/fixtures/report_fixture.jsonl");
    let golden = include_str!("../../core/tests/fixtures/report_golden.tex");
    let rec_path = tmp("golden");
    std::fs::write(&rec_path, fixture).unwrap();
    let out = dgbench(&[
        "report", "--records", rec_path.to_str().unwrap(), "--criterion", "oracle", "--format", "latex",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let expected = format!("Model selection: oracle, dataset: cmnist\n{golden}\n");
    assert_eq!(stdout(&out), expected);
    std::fs::remove_file(&rec_path).unwrap();
}
