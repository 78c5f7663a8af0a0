//! Render both rescaling prompt variants for one judgment.
//!
//! ```bash
//! cargo run --example build_prompts
//! ```

use std::error::Error;
use std::path::Path;

use ebr::prompt::{build_rescale_prompt, PromptContext, PromptTemplates, PromptVariant};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;
    let rubric = ebr::io::load_rubric(&data_dir.join("rubric.json"))?;
    let templates = PromptTemplates::default();

    // Pick a judgment with missing sentences so the feedback block has
    // something to say.
    let judgment = bundle
        .judgments
        .iter()
        .find(|j| !j.missing_sentences.is_empty())
        .expect("sample data has incomplete judgments");
    let items = bundle.item_index();
    let documents = bundle.document_index();
    let item = items[judgment.item_id.as_str()];
    let ctx = PromptContext {
        document: documents[item.doc_id.as_str()],
        item,
        judgment,
    };

    for variant in [PromptVariant::WithRubric, PromptVariant::WithoutRubric] {
        let prompt = build_rescale_prompt(&templates, &ctx, &rubric, variant)?;
        println!("================ {variant} ================");
        println!("{prompt}\n");
    }
    Ok(())
}
