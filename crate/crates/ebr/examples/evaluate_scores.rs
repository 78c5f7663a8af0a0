//! Compare scoring methods against expert reference scores, slice by
//! slice, and render the comparison table.
//!
//! ```bash
//! cargo run --example evaluate_scores
//! ```

use std::error::Error;
use std::path::Path;

use ebr::baselines::{score_with_mapping, score_with_msh, static_mapping};
use ebr::model::Method;
use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::report::{
    agreement_shift, evaluate_against_reference, expert_agreement, render_eval_table, Slice,
};
use ebr::rescale::{rescale_bundle, RescalePolicy, RubricOracleBackend};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;
    let references = bundle.references.as_deref().expect("sample data has references");

    let backend = RubricOracleBackend::new(rubric.clone())?;
    let oracle = rescale_bundle(
        &backend,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        "evaluate-example",
        4,
    )
    .scores;
    let static_scores =
        score_with_mapping(&bundle.judgments, &static_mapping(), Method::Static, "ex");
    let msh_scores = score_with_msh(&bundle.judgments, 16, "ex");

    let mut reports = Vec::new();
    for (name, scores) in [
        ("oracle", &oracle),
        ("static", &static_scores),
        ("msh-16", &msh_scores),
    ] {
        reports.push(evaluate_against_reference(
            name,
            scores,
            references,
            &bundle.judgments,
            &Slice::DEFAULT,
        )?);
    }
    print!("{}", render_eval_table(&reports));
    println!("(dash: tau undefined for a constant predictor; dagger: p < 0.05)\n");

    for pair in expert_agreement(references, &bundle.judgments, &[Slice::Overall])? {
        let slice = &pair.slices[0];
        println!(
            "experts ({}, {}): tau {}  mae {:.2}  n {}",
            pair.experts.0,
            pair.experts.1,
            slice.tau.render(),
            slice.mae,
            slice.n
        );
    }

    let shift = agreement_shift(&bundle.judgments, &oracle, 10)?;
    println!(
        "\npairwise aggregate tau: labels {:.3} -> rescaled {:.3}",
        shift.pre.aggregate, shift.post.aggregate
    );
    Ok(())
}
