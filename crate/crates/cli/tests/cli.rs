//! End-to-end checks of the installed binary: exit codes, artifact layout,
//! and byte-level determinism across repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tripletforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary spawns")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Write the miniature synthetic corpus (plus its pipeline.json) into `dir`.
fn small_fixture(dir: &Path) {
    let out = run(&[
        "--threads",
        "1",
        "fixture",
        "--out-dir",
        dir.to_str().unwrap(),
        "--small",
        "--seed",
        "42",
    ]);
    assert!(
        out.status.success(),
        "fixture generation failed: {}",
        stderr_of(&out)
    );
}

fn assert_same_bytes(a: &Path, b: &Path) {
    let bytes_a = fs::read(a).unwrap_or_else(|e| panic!("{}: {e}", a.display()));
    let bytes_b = fs::read(b).unwrap_or_else(|e| panic!("{}: {e}", b.display()));
    assert!(
        bytes_a == bytes_b,
        "files differ: {} vs {}",
        a.display(),
        b.display()
    );
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(stderr_of(&out).contains("Usage"));
}

#[test]
fn missing_config_is_an_io_error_naming_the_path() {
    let out = run(&["pipeline", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("/nonexistent/cfg.json"));
}

#[test]
fn rejected_batch_geometry_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path());
    let data = dir.path().join("task_retrieval.jsonl");
    let out = run(&[
        "batch-plan",
        "--data",
        data.to_str().unwrap(),
        "--phase",
        "homogeneous",
        "--batch-size",
        "8",
        "--devices",
        "0",
        "--n-blocks",
        "1",
        "--seed",
        "1",
        "--out",
        dir.path().join("plan.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr_of(&out));
}

#[test]
fn fixture_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_fixture(&a);
    small_fixture(&b);
    for name in [
        "task_retrieval.jsonl",
        "teacher.tfvs",
        "qrels_eval.tsv",
        "pipeline.json",
    ] {
        assert_same_bytes(&a.join(name), &b.join(name));
    }
}

#[test]
fn pipeline_end_to_end_produces_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path());
    let config = dir.path().join("pipeline.json");
    let out = run(&[
        "--threads",
        "1",
        "--json",
        "pipeline",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out))
        .expect("--json emits a JSON report on stdout");
    assert_eq!(report["seed"], 42);
    assert_eq!(report["tasks"].as_array().unwrap().len(), 6);
    assert!(report["holdout"]["means"]["ndcg@10"].as_f64().unwrap() > 0.0);
    let final_loss = report["train"]["final_mean_loss"].as_f64().unwrap();
    let initial_loss = report["train"]["initial_mean_loss"].as_f64().unwrap();
    assert!(final_loss < initial_loss, "{final_loss} !< {initial_loss}");

    let out_dir = dir.path().join("out");
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk["seed"], report["seed"]);
    for artifact in report["artifacts"].as_array().unwrap() {
        let rel = PathBuf::from(artifact.as_str().unwrap());
        assert!(
            out_dir.join(&rel).is_file(),
            "listed artifact missing on disk: {}",
            rel.display()
        );
    }
    for required in [
        "refined/task_retrieval.jsonl",
        "plan_homogeneous.jsonl",
        "plan_mixed.jsonl",
        "params.tfep",
        "train_log.jsonl",
        "teacher_q8.tfq8",
        "eval_full.json",
        "light_set.json",
        "eval_light.json",
        "eval_holdout.json",
    ] {
        assert!(out_dir.join(required).is_file(), "missing {required}");
    }
}

#[test]
fn pipeline_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path());
    let config = dir.path().join("pipeline.json");
    let (a, b) = (dir.path().join("out_a"), dir.path().join("out_b"));
    for out_dir in [&a, &b] {
        let out = run(&[
            "--threads",
            "1",
            "pipeline",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    for name in [
        "report.json",
        "params.tfep",
        "train_log.jsonl",
        "plan_homogeneous.jsonl",
        "plan_mixed.jsonl",
        "refined/task_retrieval.jsonl",
        "refined/task_sts.jsonl",
        "light_set.json",
        "eval_full.json",
    ] {
        assert_same_bytes(&a.join(name), &b.join(name));
    }
}

#[test]
fn refine_writes_a_loadable_dataset_and_a_matching_report() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path());
    let refined_path = dir.path().join("refined_retrieval.jsonl");
    let report_path = dir.path().join("refine_report.json");
    let out = run(&[
        "--json",
        "refine",
        "--data",
        dir.path().join("task_retrieval.jsonl").to_str().unwrap(),
        "--store",
        dir.path().join("teacher.tfvs").to_str().unwrap(),
        "--seed",
        "42",
        "--out",
        refined_path.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let refined = tripletforge::data::load_dataset(&refined_path).expect("refined output loads");
    assert_eq!(
        summary["examples_out"].as_u64().unwrap() as usize,
        refined.examples.len()
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["examples_out"], summary["examples_out"]);
    assert!(report["passes"].as_array().unwrap().len() > 1);
}
