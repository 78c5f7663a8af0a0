//! The non-LLM scoring baselines side by side: static mapping,
//! missing-sentences heuristic (with its deduction optimizer) and the
//! averaged-score label mapping.
//!
//! ```bash
//! cargo run --example baselines
//! ```

use std::error::Error;
use std::path::Path;

use ebr::baselines::{
    fit_avg_ebr_mapping, msh_score, optimize_msh_deduction, static_rescale,
};
use ebr::model::LikertLabel;
use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::rescale::{rescale_bundle, RescalePolicy, RubricOracleBackend};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;

    println!("static mapping:");
    for label in LikertLabel::ALL {
        println!("  {label:>14} -> {:>5.0}", static_rescale(label));
    }

    println!("\nmissing-sentences heuristic at deduction 16:");
    for judgment in bundle.judgments.iter().take(5) {
        println!(
            "  {}/{} ({} missing) -> {}",
            judgment.item_id,
            judgment.annotator,
            judgment.missing_sentences.len(),
            msh_score(judgment, 16)
        );
    }

    let references = bundle.references.as_deref().expect("sample data has references");
    let fit = optimize_msh_deduction(&bundle.judgments, references, 0..=100)?;
    println!(
        "\noptimized deduction over the references: {} (MAE {:.3}, n={})",
        fit.deduction, fit.mae, fit.n
    );

    // Fit the averaged-score mapping from oracle-produced scores.
    let backend = RubricOracleBackend::new(rubric.clone())?;
    let outcome = rescale_bundle(
        &backend,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        "baselines-example",
        4,
    );
    let fitted = fit_avg_ebr_mapping(&outcome.scores, &bundle.judgments)?;
    println!("\naveraged-score label mapping (from oracle scores):");
    for label in LikertLabel::ALL {
        println!(
            "  {label:>14} -> {:>6.1}  (n={})",
            fitted.mapping.get(label),
            fitted.per_label_n[label.rank() as usize]
        );
    }
    if !fitted.monotonicity_violations.is_empty() {
        println!("  ordering violations: {:?}", fitted.monotonicity_violations);
    }
    Ok(())
}
