//! Rescale a handful of judgments with a live OpenAI-compatible
//! backend, demonstrating the response cache.
//!
//! Needs an API key; without one the example explains itself and exits.
//!
//! ```bash
//! OPENAI_API_KEY=... cargo run --example live_backend
//! # point it elsewhere:
//! EBR_BASE_URL=http://localhost:8000/v1 EBR_MODEL=my-model \
//!     OPENAI_API_KEY=... cargo run --example live_backend
//! ```

use std::error::Error;
use std::path::Path;

use ebr::llm::{BackendConfig, LlmClient, DEFAULT_API_KEY_ENV};
use ebr::prompt::{PromptTemplates, PromptVariant};
use ebr::rescale::{rescale_bundle, RescalePolicy};

fn main() -> Result<(), Box<dyn Error>> {
    if std::env::var(DEFAULT_API_KEY_ENV).is_err() {
        println!("set {DEFAULT_API_KEY_ENV} to run this example against a live backend");
        return Ok(());
    }

    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let mut bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;

    // Keep the bill small: a few judgments are enough to see it work.
    bundle.judgments.truncate(6);

    let mut config = BackendConfig {
        cache_dir: std::env::temp_dir().join("ebr-live-cache"),
        ..BackendConfig::default()
    };
    if let Ok(base_url) = std::env::var("EBR_BASE_URL") {
        config.base_url = base_url;
    }
    if let Ok(model) = std::env::var("EBR_MODEL") {
        config.model = model;
    }
    let client = LlmClient::new(config)?;

    let outcome = rescale_bundle(
        &client,
        &PromptTemplates::default(),
        &bundle,
        &rubric,
        PromptVariant::WithRubric,
        &RescalePolicy::default(),
        "live-example",
        2,
    );
    for score in &outcome.scores {
        println!(
            "{}/{} -> {:>5.1}  ({} chars of raw response)",
            score.item_id,
            score.annotator,
            score.score,
            score.raw_response.as_ref().map_or(0, String::len)
        );
    }
    for failure in &outcome.failures {
        eprintln!("failed {}/{}: {}", failure.item_id, failure.annotator, failure.error);
    }

    let stats = client.stats()?;
    println!(
        "cache: {} entries, {} hits, {} misses (rerun to see hits)",
        stats.entries, stats.hits, stats.misses
    );
    Ok(())
}
