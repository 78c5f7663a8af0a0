//! Rescale a whole dataset with the deterministic oracle backend.
//!
//! The oracle deducts `per_sentence_deduction` points per missing
//! sentence, which makes it useful for exercising the full pipeline
//! (prompt construction, backend dispatch, score parsing, the
//! extreme-label policy) without any network access.
//!
//! ```bash
//! cargo run --example rescale_with_oracle
//! ```

use std::error::Error;
use std::path::Path;

use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::rescale::{rescale_bundle, RescalePolicy, RubricOracleBackend};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;

    let backend = RubricOracleBackend::new(rubric.clone())?;
    let outcome = rescale_bundle(
        &backend,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        "example-run",
        4,
    );

    println!(
        "scored {} judgments ({} failures)",
        outcome.scores.len(),
        outcome.failures.len()
    );
    for score in outcome.scores.iter().take(8) {
        println!(
            "  {}/{} -> {:>5.1}  (method {})",
            score.item_id, score.annotator, score.score, score.method
        );
    }

    // Per-label averages come out in label order because the sample
    // data's missing-sentence counts track the labels.
    let means = ebr::report::avg_score_per_label(&outcome.scores, &bundle.judgments)?;
    println!("\nmean score per label:");
    for row in &means.rows {
        println!("  {:>14}: {:>6.2}  (n={})", row.label.to_string(), row.mean, row.n);
    }
    if means.order_violations.is_empty() {
        println!("  label order respected");
    }

    let out = std::env::temp_dir().join("ebr-oracle-scores.jsonl");
    ebr::io::save_scores(&outcome.scores, &out)?;
    println!("\nwrote {}", out.display());
    Ok(())
}
