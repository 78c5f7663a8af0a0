//! Acceptance suite. Each test is one criterion and prints a final
//! PASS line (visible with `cargo test --test acceptance -- --nocapture`);
//! criteria that depend on externally released data or a live backend
//! print SKIP with the reason when the dependency is absent.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    brute_force_tau_b, oracle_rubric, planted_references, synthetic_bundle, FakeServer, Script,
};
use ebr::baselines::{fit_avg_ebr_mapping, msh_score, optimize_msh_deduction, static_rescale};
use ebr::llm::{BackendConfig, CacheMode, LlmClient};
use ebr::metrics::{
    collapse_binary, fleiss_kappa, kendall_tau_b, label_distribution, label_ranks_by_annotator,
    pairwise_aggregate_tau, GroupBy, MetricsError, RatingMatrix,
};
use ebr::model::{Judgment, LikertLabel, ScoredJudgment};
use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::report::{agreement_shift, avg_score_per_label, expert_agreement, stability_run, Slice};
use ebr::rescale::{rescale_bundle, RescalePolicy, RubricOracleBackend, ScoringBackend};

fn sample_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("sample_data")
}

/// 1. The optimized Kendall tau-b matches an independent O(n^2)
///    brute-force pair counter within 1e-12 on 600 random short vectors
///    with forced ties, in under five seconds.
#[test]
fn acceptance_01_tau_matches_brute_force_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xEB0001);
    let mut checked = 0usize;
    for _ in 0..600 {
        let n = rng.gen_range(2..=20);
        // Values drawn from a small alphabet so ties are everywhere.
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        match (kendall_tau_b(&xs, &ys), brute_force_tau_b(&xs, &ys)) {
            (Ok(fast), Some(slow)) => {
                assert!(
                    (fast.tau - slow).abs() <= 1e-12,
                    "tau mismatch on {xs:?} / {ys:?}: {} vs {slow}",
                    fast.tau
                );
                checked += 1;
            }
            (Err(MetricsError::AllTied { .. }), None) => checked += 1,
            other => panic!("defined-ness disagreement on {xs:?} / {ys:?}: {other:?}"),
        }
    }
    let elapsed = started.elapsed();
    assert!(checked >= 500, "only {checked} vectors checked");
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!("ACCEPTANCE 01 tau-oracle-equivalence: PASS ({checked} vectors in {elapsed:?})");
}

/// 2. Fleiss kappa: unanimity is exactly 1.0; hand-computed two-category
///    examples match within 1e-9.
#[test]
fn acceptance_02_fleiss_kappa_oracle_values() {
    // Unanimous matrices over different shapes, categories mixed across
    // items so expected agreement stays below 1.
    for (items, raters, categories) in [(10usize, 5u64, 3usize), (4, 3, 2), (6, 7, 4)] {
        let counts: Vec<Vec<u64>> = (0..items)
            .map(|i| {
                let mut row = vec![0; categories];
                row[i % categories] = raters;
                row
            })
            .collect();
        let matrix = RatingMatrix::new(counts).unwrap();
        assert_eq!(fleiss_kappa(&matrix).unwrap(), 1.0);
    }

    // Two items, two raters, each split across both categories:
    // observed agreement 0, expected 1/2, kappa exactly -1.
    let split = RatingMatrix::new(vec![vec![1, 1], vec![1, 1]]).unwrap();
    assert!((fleiss_kappa(&split).unwrap() - -1.0).abs() < 1e-9);

    // Rows (3,0), (2,1), (0,3): P-bar = 7/9, Pe = 41/81,
    // kappa = (63-41)/(81-41) = 0.55.
    let hand = RatingMatrix::new(vec![vec![3, 0], vec![2, 1], vec![0, 3]]).unwrap();
    assert!((fleiss_kappa(&hand).unwrap() - 0.55).abs() < 1e-9);

    println!("ACCEPTANCE 02 fleiss-kappa-oracle: PASS");
}

/// 3. Baseline exactness: the static mapping and the missing-sentences
///    heuristic reproduce their defining arithmetic exactly.
#[test]
fn acceptance_03_baseline_exactness() {
    assert_eq!(static_rescale(LikertLabel::Complete), 100.0);
    assert_eq!(static_rescale(LikertLabel::MissingMinor), 70.0);
    assert_eq!(static_rescale(LikertLabel::MissingMajor), 30.0);
    assert_eq!(static_rescale(LikertLabel::MissingAll), 0.0);

    for m in 0..=10usize {
        let judgment = Judgment {
            item_id: "q".into(),
            annotator: "a".into(),
            label: LikertLabel::MissingMajor,
            correct: true,
            explanation: String::new(),
            missing_sentences: (1..=m).collect(),
        };
        assert_eq!(msh_score(&judgment, 16), (100 - 16 * m as i64).clamp(0, 100));
    }
    println!("ACCEPTANCE 03 baseline-exactness: PASS");
}

/// 4. Planted-parameter recovery: with references generated by the
///    heuristic at a known deduction, the optimizer returns that
///    deduction exactly with zero error, in under a second per fit.
#[test]
fn acceptance_04_msh_optimizer_recovers_planted_deduction() {
    let bundle = synthetic_bundle(2, 100); // 200 judgments
    assert_eq!(bundle.judgments.len(), 200);
    for planted in [5u32, 16, 25] {
        let references = planted_references(&bundle.judgments, planted);
        let started = Instant::now();
        let fit = optimize_msh_deduction(&bundle.judgments, &references, 0..=100).unwrap();
        let elapsed = started.elapsed();
        assert_eq!(fit.deduction, planted, "planted {planted}");
        assert_eq!(fit.mae, 0.0);
        assert!(elapsed < Duration::from_secs(1), "fit took {elapsed:?}");
    }
    println!("ACCEPTANCE 04 planted-deduction-recovery: PASS (d* in {{5, 16, 25}})");
}

/// 5. End-to-end determinism: the rescale command with the oracle
///    backend, run twice with identical arguments, produces
///    byte-identical score files and manifests.
#[test]
fn acceptance_05_cli_rescale_is_byte_deterministic() {
    let data_dir = sample_data_dir();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scores.jsonl");
    let manifest = tmp.path().join("scores.jsonl.manifest.json");

    let run = || {
        let status = Command::new(env!("CARGO_BIN_EXE_ebr"))
            .args([
                "--quiet",
                "--data-dir",
                data_dir.to_str().unwrap(),
                "rescale",
                "--rubric",
                data_dir.join("rubric.json").to_str().unwrap(),
                "--backend",
                "oracle",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .expect("run ebr binary");
        assert!(status.success());
        (
            std::fs::read(&out).unwrap(),
            std::fs::read(&manifest).unwrap(),
        )
    };

    let (scores_a, manifest_a) = run();
    let (scores_b, manifest_b) = run();
    assert_eq!(scores_a, scores_b, "score files differ between runs");
    assert_eq!(manifest_a, manifest_b, "manifests differ between runs");
    assert!(!scores_a.is_empty());
    println!("ACCEPTANCE 05 end-to-end-determinism: PASS ({} bytes)", scores_a.len());
}

/// 6. Rank invariance: when rescaling is any per-annotator strictly
///    monotone map of the labels, the pre- and post-rescaling aggregate
///    tau agree to 1e-12. Twenty random monotone maps.
#[test]
fn acceptance_06_monotone_rescaling_preserves_aggregate_tau() {
    let bundle = synthetic_bundle(6, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(0xEB0006);
    for trial in 0..20 {
        // A strictly increasing 4-point map per annotator.
        let mut maps: BTreeMap<String, [f64; 4]> = BTreeMap::new();
        for a in 0..6 {
            let mut cut: Vec<f64> = Vec::new();
            while cut.len() < 4 {
                let v = rng.gen_range(0..=1000) as f64 / 10.0;
                if !cut.contains(&v) {
                    cut.push(v);
                }
            }
            cut.sort_by(|x, y| x.partial_cmp(y).unwrap());
            maps.insert(format!("a{a}"), [cut[0], cut[1], cut[2], cut[3]]);
        }
        let scores: Vec<ScoredJudgment> = bundle
            .judgments
            .iter()
            .map(|j| ScoredJudgment {
                item_id: j.item_id.clone(),
                annotator: j.annotator.clone(),
                method: ebr::model::Method::Ebr,
                backend: "monotone-map".into(),
                run_id: format!("trial-{trial}"),
                score: maps[&j.annotator][j.label.rank() as usize],
                raw_response: None,
            })
            .collect();
        let shift = agreement_shift(&bundle.judgments, &scores, 10).unwrap();
        assert!(
            (shift.pre.aggregate - shift.post.aggregate).abs() <= 1e-12,
            "trial {trial}: pre {} vs post {}",
            shift.pre.aggregate,
            shift.post.aggregate
        );
    }
    println!("ACCEPTANCE 06 rank-invariance: PASS (20 monotone maps)");
}

/// 7. Ordering property: on a bundle whose missing-sentence counts are
///    label-consistent, oracle-backend per-label mean scores come out
///    strictly ordered with the labels.
#[test]
fn acceptance_07_oracle_per_label_means_are_label_ordered() {
    let bundle = synthetic_bundle(3, 24);
    let rubric = oracle_rubric(16);
    let backend = RubricOracleBackend::new(rubric.clone()).unwrap();
    let outcome = rescale_bundle(
        &backend,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        "ordering-run",
        4,
    );
    assert!(outcome.failures.is_empty());
    let means = avg_score_per_label(&outcome.scores, &bundle.judgments).unwrap();
    assert_eq!(means.rows.len(), 4, "all four labels present");
    for pair in means.rows.windows(2) {
        assert!(
            pair[0].mean < pair[1].mean,
            "means not strictly ordered: {:?}",
            means.rows
        );
    }
    assert!(means.order_violations.is_empty());
    println!(
        "ACCEPTANCE 07 per-label-ordering: PASS ({:.2} < {:.2} < {:.2} < {:.2})",
        means.rows[0].mean, means.rows[1].mean, means.rows[2].mean, means.rows[3].mean
    );
}

/// 8. Cache contract against a scripted server: a warm second run
///    issues zero requests and yields identical scores, and in-flight
///    requests never exceed the configured concurrency.
#[test]
fn acceptance_08_cache_and_concurrency_contract() {
    std::env::set_var("EBR_ACCEPT_KEY", "token");
    let server = FakeServer::start(Script::EchoScore {
        delay: Duration::from_millis(40),
    });
    let cache = tempfile::tempdir().unwrap();
    let bundle = synthetic_bundle(4, 10);
    let rubric = oracle_rubric(16);
    let limit = 3;
    let config = BackendConfig {
        base_url: server.base_url(),
        model: "fake-model".into(),
        temperature: 0.0,
        max_response_tokens: 64,
        timeout: Duration::from_secs(5),
        max_retries: 2,
        concurrency_limit: limit,
        cache_dir: cache.path().to_path_buf(),
        cache_mode: CacheMode::ReadWrite,
        api_key_env: "EBR_ACCEPT_KEY".into(),
        retry_initial_backoff: Duration::from_millis(20),
    };

    let run = || {
        let client = LlmClient::new(config.clone()).unwrap();
        let outcome = rescale_bundle(
            &client,
            &PromptTemplates::default(),
            &bundle,
            &rubric,
            PromptVariant::WithRubric,
            &RescalePolicy::default(),
            "cache-contract",
            6,
        );
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
        outcome.scores
    };

    let cold = run();
    let cold_requests = server.total_requests();
    assert!(cold_requests > 0);
    let warm = run();
    assert_eq!(server.total_requests(), cold_requests, "warm run issued requests");
    assert_eq!(cold, warm);
    assert!(
        server.max_concurrent() <= limit,
        "peak {} > limit {limit}",
        server.max_concurrent()
    );
    println!(
        "ACCEPTANCE 08 cache-contract: PASS ({cold_requests} cold requests, peak concurrency {})",
        server.max_concurrent()
    );
}

fn within(value: f64, target: f64, tolerance: f64) -> bool {
    (value - target).abs() <= tolerance
}

/// 9. Conditional dataset reproductions: run only when a released
///    dataset in the canonical directory layout is supplied via
///    EBR_RELEASED_DATA (and EBR_RELEASED_EBR_SCORES for the mapping
///    check); otherwise each sub-check reports SKIP with the reason.
#[test]
fn acceptance_09_released_dataset_reproductions() {
    let Some(dir) = std::env::var_os("EBR_RELEASED_DATA") else {
        println!(
            "ACCEPTANCE 09 released-dataset-reproductions: SKIP \
             (set EBR_RELEASED_DATA to a data directory in the documented jsonl layout)"
        );
        return;
    };
    let bundle = ebr::io::load_bundle(Path::new(&dir)).expect("released dataset loads");

    // Overall label distribution: 18 / 4 / 11 / 67 within one point.
    let rows = label_distribution(&bundle, GroupBy::Overall).unwrap();
    let percent = rows[0].percent;
    let expected = [18.0, 4.0, 11.0, 67.0];
    for (got, want) in percent.iter().zip(expected) {
        assert!(within(*got, want, 1.0), "distribution {percent:?} vs {expected:?}");
    }
    println!("  label distribution {percent:?}: PASS");

    // Binary-collapse Fleiss kappa within 0.005 of 0.328.
    match RatingMatrix::from_judgments(&bundle.judgments, 2, |j| collapse_binary(j.label)) {
        Ok(matrix) => {
            let kappa = fleiss_kappa(&matrix).unwrap();
            assert!(within(kappa, 0.328, 0.005), "kappa {kappa}");
            println!("  binary fleiss kappa {kappa:.3}: PASS");
        }
        Err(e) => println!("  binary fleiss kappa: SKIP (unequal rater counts: {e})"),
    }

    // Pre-rescaling aggregate tau within 0.01 of 0.33.
    let ranks = label_ranks_by_annotator(&bundle.judgments);
    let aggregate = pairwise_aggregate_tau(&ranks, 10).unwrap();
    assert!(
        within(aggregate.aggregate, 0.33, 0.01),
        "aggregate tau {}",
        aggregate.aggregate
    );
    println!("  label aggregate tau {:.3}: PASS", aggregate.aggregate);

    // Averaged-score mapping within 0.5 per label, given released
    // rescaled scores.
    match std::env::var_os("EBR_RELEASED_EBR_SCORES") {
        Some(path) => {
            let scores = ebr::io::load_scores(Path::new(&path)).expect("released scores load");
            let fit = fit_avg_ebr_mapping(&scores, &bundle.judgments).unwrap();
            let expected = [0.0, 50.8, 78.6, 99.3];
            for (got, want) in fit.mapping.values.iter().zip(expected) {
                assert!(within(*got, want, 0.5), "mapping {:?}", fit.mapping.values);
            }
            println!("  averaged-score mapping {:?}: PASS", fit.mapping.values);
        }
        None => println!(
            "  averaged-score mapping: SKIP (set EBR_RELEASED_EBR_SCORES to the released scores file)"
        ),
    }

    // Expert pair (1, 2): overall tau 0.82 +/- 0.02, MAE 8.86 +/- 0.5.
    match bundle.references.as_deref() {
        Some(refs) if refs.iter().all(|r| r.expert_scores.len() >= 2) => {
            let reports = expert_agreement(refs, &bundle.judgments, &[Slice::Overall]).unwrap();
            let pair = reports
                .iter()
                .find(|r| r.experts == (1, 2))
                .expect("pair (1,2)");
            let slice = &pair.slices[0];
            let (tau, _) = slice.tau.defined().expect("tau defined");
            assert!(within(tau, 0.82, 0.02), "expert tau {tau}");
            assert!(within(slice.mae, 8.86, 0.5), "expert mae {}", slice.mae);
            println!("  expert pair (1,2) tau {tau:.3} mae {:.2}: PASS", slice.mae);
        }
        _ => println!("  expert pair agreement: SKIP (no multi-expert reference scores released)"),
    }

    println!("ACCEPTANCE 09 released-dataset-reproductions: PASS (available sub-checks)");
}

/// 10. Live-backend shape check (optional; the published live-model
///     numbers are not reproducible at desk scale). With any
///     OpenAI-compatible backend at temperature 0 on a >= 20-instance
///     reference subsample: the pipeline completes without parse
///     failures, produces in-range scores, and the stability harness
///     emits per-run avg/tau/MAE rows.
#[test]
fn acceptance_10_live_backend_shape_check() {
    if std::env::var_os("EBR_LIVE_TEST").is_none() {
        println!(
            "ACCEPTANCE 10 live-backend-shape: SKIP \
             (opt in with EBR_LIVE_TEST=1 plus OPENAI_API_KEY; optional in CI)"
        );
        return;
    }
    let data_dir = sample_data_dir();
    let bundle = ebr::io::load_bundle(&data_dir).unwrap();
    let references = bundle.references.as_deref().unwrap();
    assert!(references.len() >= 20, "need a >= 20-instance reference subsample");
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json")).unwrap();

    let base_url = std::env::var("EBR_LIVE_BASE_URL")
        .unwrap_or_else(|_| "https://api.openai.com/v1".into());
    let model =
        std::env::var("EBR_LIVE_MODEL").unwrap_or_else(|_| "gpt-4-0613".into());
    let cache_root = tempfile::tempdir().unwrap();
    let make_config = |run: usize| BackendConfig {
        base_url: base_url.clone(),
        model: model.clone(),
        temperature: 0.0,
        max_response_tokens: 200,
        timeout: Duration::from_secs(120),
        max_retries: 4,
        concurrency_limit: 2,
        cache_dir: cache_root.path().join(format!("run-{run}")),
        cache_mode: CacheMode::WriteOnly,
        api_key_env: "OPENAI_API_KEY".into(),
        retry_initial_backoff: Duration::from_millis(500),
    };

    let backend_for_run = |run: usize| -> Result<Box<dyn ScoringBackend>, String> {
        LlmClient::new(make_config(run))
            .map(|c| Box::new(c) as Box<dyn ScoringBackend>)
            .map_err(|e| e.to_string())
    };
    let report = stability_run(
        &backend_for_run,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        2,
        "live-shape",
        2,
    )
    .unwrap();

    assert_eq!(report.runs.len(), 2);
    for run in &report.runs {
        assert_eq!(run.failures, 0, "parse or backend failures in {run:?}");
        assert!(run.avg_score >= 0.0 && run.avg_score <= 100.0);
        assert!(run.tau.is_some(), "tau column missing");
        assert!(run.mae.is_some(), "mae column missing");
    }
    println!(
        "ACCEPTANCE 10 live-backend-shape: PASS (avg scores {:?})",
        report.runs.iter().map(|r| r.avg_score).collect::<Vec<_>>()
    );
}
