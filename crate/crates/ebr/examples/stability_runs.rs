//! Re-run rescaling several times and report the run-to-run spread of
//! the average score, tau and MAE.
//!
//! With the deterministic oracle backend all rows come out identical;
//! against a live backend at nonzero temperature the spread shows how
//! stable the scoring is.
//!
//! ```bash
//! cargo run --example stability_runs
//! ```

use std::error::Error;
use std::path::Path;

use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::report::{render_stability_table, stability_run};
use ebr::rescale::{RescalePolicy, RubricOracleBackend, ScoringBackend};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;

    let rubric_for_backend = rubric.clone();
    let backend_for_run = move |_run: usize| -> Result<Box<dyn ScoringBackend>, String> {
        RubricOracleBackend::new(rubric_for_backend.clone())
            .map(|b| Box::new(b) as Box<dyn ScoringBackend>)
            .map_err(|e| e.to_string())
    };

    let report = stability_run(
        &backend_for_run,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        4,
        "stability-example",
        4,
    )?;
    print!("{}", render_stability_table(&report));
    Ok(())
}
