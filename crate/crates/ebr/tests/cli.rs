//! End-to-end command-line tests against the built binary: exit codes,
//! the sidecar contract for failed judgments, baseline routing, report
//! routing, agreement rows and stability output.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{oracle_rubric, planted_references, synthetic_bundle};
use ebr::baselines::msh_score;
use ebr::io::DatasetBundle;
use ebr::model::{Method, ScoredJudgment};

fn ebr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ebr"))
}

fn sample_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("sample_data")
}

fn run(args: &[&str]) -> Output {
    ebr_bin().args(args).output().expect("run ebr")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Writes a bundle plus an oracle rubric into a temp data directory.
fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> PathBuf {
    ebr::io::save_bundle(bundle, dir).unwrap();
    let rubric_path = dir.join("rubric.json");
    ebr::io::save_rubric(&oracle_rubric(16), &rubric_path).unwrap();
    rubric_path
}

#[test]
fn validate_exits_zero_on_clean_data() {
    let data = sample_data();
    let output = run(&["--data-dir", data.to_str().unwrap(), "validate"]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("0 error(s)"));
}

#[test]
fn validate_names_dangling_references_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bundle = synthetic_bundle(2, 4);
    bundle.judgments[0].item_id = "q-phantom".into();
    write_dataset(&bundle, tmp.path());
    let output = run(&["--data-dir", tmp.path().to_str().unwrap(), "validate"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout(&output).contains("q-phantom"), "{}", stdout(&output));
}

#[test]
fn strict_mode_promotes_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bundle = synthetic_bundle(2, 4);
    // complete judgment that still lists a missing sentence: a warning.
    let judgment = bundle
        .judgments
        .iter_mut()
        .find(|j| j.label == ebr::model::LikertLabel::Complete)
        .unwrap();
    judgment.missing_sentences.insert(1);
    write_dataset(&bundle, tmp.path());

    let dir = tmp.path().to_str().unwrap().to_string();
    let relaxed = run(&["--data-dir", &dir, "validate"]);
    assert!(relaxed.status.success(), "{}", stdout(&relaxed));
    let strict = run(&["--data-dir", &dir, "validate", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let output = run(&["validate"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["bogus-subcommand"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn rescale_without_rubric_variant_is_recorded_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synthetic_bundle(2, 6);
    let rubric = write_dataset(&bundle, tmp.path());
    let out = tmp.path().join("scores.jsonl");
    let output = run(&[
        "--quiet",
        "--data-dir",
        tmp.path().to_str().unwrap(),
        "rescale",
        "--rubric",
        rubric.to_str().unwrap(),
        "--backend",
        "oracle",
        "--variant",
        "without-rubric",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let manifest = fs::read_to_string(tmp.path().join("scores.jsonl.manifest.json")).unwrap();
    assert!(manifest.contains("\"variant\": \"without_rubric\""), "{manifest}");
    let scores = ebr::io::load_scores(&out).unwrap();
    assert!(scores.iter().all(|s| s.method == Method::EbrNoRubric));
}

#[test]
fn rescale_failures_leave_a_sidecar_and_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synthetic_bundle(2, 6);
    ebr::io::save_bundle(&bundle, tmp.path()).unwrap();
    // A rubric without per_sentence_deduction cannot drive the oracle:
    // backend-path judgments fail, extremes still succeed.
    let mut rubric = oracle_rubric(16);
    rubric.per_sentence_deduction = None;
    let rubric_path = tmp.path().join("rubric.json");
    ebr::io::save_rubric(&rubric, &rubric_path).unwrap();

    let out = tmp.path().join("scores.jsonl");
    let output = run(&[
        "--quiet",
        "--data-dir",
        tmp.path().to_str().unwrap(),
        "rescale",
        "--rubric",
        rubric_path.to_str().unwrap(),
        "--backend",
        "oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));

    // With a usable rubric but a backend that fails on some judgments,
    // the command keeps partial output and exits 3 with a sidecar. The
    // oracle cannot fail per judgment, so simulate with quantize abuse:
    // instead, check the sidecar path by rescaling against a live
    // backend pointing nowhere.
    let rubric_path = write_dataset(&bundle, tmp.path());
    let output = run(&[
        "--quiet",
        "--data-dir",
        tmp.path().to_str().unwrap(),
        "rescale",
        "--rubric",
        rubric_path.to_str().unwrap(),
        "--backend",
        "live",
        "--base-url",
        "http://127.0.0.1:9", // discard port: refuses connections
        "--max-retries",
        "0",
        "--api-key-env",
        "EBR_CLI_TEST_KEY_UNSET",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{}", stderr(&output));
    let sidecar = tmp.path().join("scores.failures.jsonl");
    assert!(sidecar.exists());
    let failures = fs::read_to_string(&sidecar).unwrap();
    assert!(failures.lines().count() > 0);
    // Extreme-label judgments never touch the backend, so partial
    // output still exists.
    let partial = ebr::io::load_scores(&out).unwrap();
    assert!(!partial.is_empty());
    assert!(partial.iter().all(|s| s.score == 0.0 || s.score == 100.0));
}

#[test]
fn baseline_static_produces_only_the_four_mapping_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("static.jsonl");
    let output = run(&[
        "--quiet",
        "--data-dir",
        sample_data().to_str().unwrap(),
        "baseline",
        "--method",
        "static",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let scores = ebr::io::load_scores(&out).unwrap();
    assert!(!scores.is_empty());
    assert!(scores
        .iter()
        .all(|s| [0.0, 30.0, 70.0, 100.0].contains(&s.score)));
    assert!(scores.iter().all(|s| s.method == Method::Static));
}

#[test]
fn baseline_msh_matches_the_library_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("msh.jsonl");
    let data = sample_data();
    let output = run(&[
        "--quiet",
        "--data-dir",
        data.to_str().unwrap(),
        "baseline",
        "--method",
        "msh",
        "--deduction",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let scores = ebr::io::load_scores(&out).unwrap();
    let bundle = ebr::io::load_bundle(&data).unwrap();
    let by_key: std::collections::HashMap<(String, String), f64> = scores
        .into_iter()
        .map(|s| ((s.annotator.clone(), s.item_id.clone()), s.score))
        .collect();
    for judgment in &bundle.judgments {
        let expected = msh_score(judgment, 16) as f64;
        assert_eq!(
            by_key[&(judgment.annotator.clone(), judgment.item_id.clone())],
            expected
        );
    }
}

#[test]
fn baseline_optimize_deduction_recovers_planted_value() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bundle = synthetic_bundle(3, 40);
    bundle.references = Some(planted_references(&bundle.judgments, 25));
    write_dataset(&bundle, tmp.path());
    let out = tmp.path().join("msh.jsonl");
    let output = run(&[
        "--data-dir",
        tmp.path().to_str().unwrap(),
        "baseline",
        "--method",
        "msh",
        "--optimize-deduction",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(
        stderr(&output).contains("optimized deduction: 25"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn baseline_avg_ebr_prints_and_applies_the_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let data = sample_data();
    let oracle_out = tmp.path().join("oracle.jsonl");
    let rubric = data.join("rubric.json");
    assert!(run(&[
        "--quiet",
        "--data-dir",
        data.to_str().unwrap(),
        "rescale",
        "--rubric",
        rubric.to_str().unwrap(),
        "--backend",
        "oracle",
        "--out",
        oracle_out.to_str().unwrap(),
    ])
    .status
    .success());

    let out = tmp.path().join("avg.jsonl");
    let output = run(&[
        "--quiet",
        "--data-dir",
        data.to_str().unwrap(),
        "baseline",
        "--method",
        "avg-ebr",
        "--ebr-scores",
        oracle_out.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("label mapping:"), "{}", stdout(&output));
    let scores = ebr::io::load_scores(&out).unwrap();
    // Label-determinism: any two judgments with the same label get the
    // same mapped score.
    let bundle = ebr::io::load_bundle(&data).unwrap();
    let labels: std::collections::HashMap<(&str, &str), _> = bundle
        .judgments
        .iter()
        .map(|j| (j.key(), j.label))
        .collect();
    let mut per_label: std::collections::HashMap<_, f64> = Default::default();
    for score in &scores {
        let label = labels[&score.key()];
        let existing = per_label.entry(label).or_insert(score.score);
        assert_eq!(*existing, score.score);
    }
}

#[test]
fn evaluate_routes_one_report_row_per_scores_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = sample_data();
    let rubric = data.join("rubric.json");
    let oracle_out = tmp.path().join("oracle.jsonl");
    let static_out = tmp.path().join("static.jsonl");
    let msh_out = tmp.path().join("msh.jsonl");
    let base = ["--quiet", "--data-dir", data.to_str().unwrap()];
    assert!(ebr_bin()
        .args(base)
        .args([
            "rescale",
            "--rubric",
            rubric.to_str().unwrap(),
            "--backend",
            "oracle",
            "--out",
            oracle_out.to_str().unwrap()
        ])
        .status()
        .unwrap()
        .success());
    for (method, out) in [("static", &static_out), ("msh", &msh_out)] {
        assert!(ebr_bin()
            .args(base)
            .args(["baseline", "--method", method, "--out", out.to_str().unwrap()])
            .status()
            .unwrap()
            .success());
    }

    let records_out = tmp.path().join("report.jsonl");
    let output = run(&[
        "--data-dir",
        data.to_str().unwrap(),
        "evaluate",
        "--scores",
        oracle_out.to_str().unwrap(),
        "--scores",
        static_out.to_str().unwrap(),
        "--scores",
        msh_out.to_str().unwrap(),
        "--out",
        records_out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let table = stdout(&output);
    for row in ["ebr", "static", "msh"] {
        assert!(table.contains(row), "missing row {row} in:\n{table}");
    }
    // Static tau within a single label is undefined: a dash in the table.
    assert!(table.contains('-'));

    let records = fs::read_to_string(&records_out).unwrap();
    assert_eq!(records.lines().count(), 3 * 3 * 2); // methods x slices x {tau, mae}
    assert!(tmp.path().join("report.jsonl.manifest.json").exists());
}

#[test]
fn agreement_reports_perfect_tau_for_identical_score_files() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = synthetic_bundle(3, 15);
    write_dataset(&bundle, tmp.path());

    // Every annotator scores item i as i: perfect inter-annotator
    // agreement by construction.
    let scores: Vec<ScoredJudgment> = bundle
        .judgments
        .iter()
        .map(|j| ScoredJudgment {
            item_id: j.item_id.clone(),
            annotator: j.annotator.clone(),
            method: Method::Ebr,
            backend: "synthetic".into(),
            run_id: "agree".into(),
            score: j.item_id[1..].parse::<f64>().unwrap(),
            raw_response: None,
        })
        .collect();
    let file_a = tmp.path().join("a.jsonl");
    let file_b = tmp.path().join("b.jsonl");
    ebr::io::save_scores(&scores, &file_a).unwrap();
    ebr::io::save_scores(&scores, &file_b).unwrap();

    let output = run(&[
        "--data-dir",
        tmp.path().to_str().unwrap(),
        "agreement",
        "--scores",
        file_a.to_str().unwrap(),
        "--scores",
        file_b.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let table = stdout(&output);
    let perfect_rows = table
        .lines()
        .filter(|l| !l.starts_with("original_labels") && l.contains("1.00"))
        .count();
    assert_eq!(perfect_rows, 2, "expected two 1.00 rows in:\n{table}");
}

#[test]
fn stability_oracle_rows_are_identical_and_single_run_has_zero_spread() {
    let data = sample_data();
    let rubric = data.join("rubric.json");
    let output = run(&[
        "--quiet",
        "--json",
        "--data-dir",
        data.to_str().unwrap(),
        "stability",
        "--rubric",
        rubric.to_str().unwrap(),
        "--backend",
        "oracle",
        "--runs",
        "4",
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let report: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    let first_avg = runs[0]["avg_score"].as_f64().unwrap();
    for run in runs {
        assert_eq!(run["avg_score"].as_f64().unwrap(), first_avg);
        assert_eq!(run["failures"].as_u64().unwrap(), 0);
    }
    assert_eq!(report["avg_score_spread"]["range"].as_f64().unwrap(), 0.0);

    let output = run(&[
        "--quiet",
        "--json",
        "--data-dir",
        data.to_str().unwrap(),
        "stability",
        "--rubric",
        rubric.to_str().unwrap(),
        "--backend",
        "oracle",
        "--runs",
        "1",
    ]);
    let report: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 1);
    assert_eq!(report["avg_score_spread"]["range"].as_f64().unwrap(), 0.0);
    assert_eq!(report["mae_spread"]["range"].as_f64().unwrap(), 0.0);
}

#[test]
fn cache_stats_on_a_fresh_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run(&[
        "--json",
        "cache-stats",
        "--cache-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let stats: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    assert_eq!(stats["entries"].as_u64().unwrap(), 0);
}
