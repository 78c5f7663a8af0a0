//! Load a data directory and run every dataset invariant check.
//!
//! ```bash
//! cargo run --example validate_dataset
//! ```

use std::error::Error;
use std::path::Path;

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle_unchecked(data_dir)?;
    println!(
        "loaded {} documents, {} items, {} judgments, {} references",
        bundle.documents.len(),
        bundle.items.len(),
        bundle.judgments.len(),
        bundle.references.as_ref().map_or(0, Vec::len),
    );

    let report = bundle.validate();
    println!("{report}");

    // Break an invariant on purpose to show what a violation looks like.
    let mut broken = bundle;
    broken.judgments[0].missing_sentences.insert(99);
    let report = broken.validate();
    println!("\nafter pointing a judgment at sentence 99:");
    for error in &report.errors {
        println!("  error: {error}");
    }
    Ok(())
}
