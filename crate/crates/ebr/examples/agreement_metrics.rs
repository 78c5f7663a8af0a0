//! Agreement statistics over the sample dataset: Kendall tau-b, Fleiss
//! kappa with the binary collapse, pairwise annotator agreement and
//! label distributions.
//!
//! ```bash
//! cargo run --example agreement_metrics
//! ```

use std::error::Error;
use std::path::Path;

use ebr::metrics::{
    collapse_binary, fleiss_kappa, kendall_tau_b, label_distribution, label_ranks_by_annotator,
    pairwise_aggregate_tau, round_half_up, GroupBy, RatingMatrix,
};

fn main() -> Result<(), Box<dyn Error>> {
    let data_dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/sample_data"));
    let bundle = ebr::io::load_bundle(data_dir)?;

    let result = kendall_tau_b(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 3.0])?;
    println!(
        "tau-b on a small tied example: {:.3} (p = {:.3}, n = {})",
        result.tau, result.p_value, result.n
    );

    // Binary collapse (complete vs. not) over items every annotator
    // rated, then chance-corrected agreement.
    let full_items: Vec<_> = {
        let mut by_item = std::collections::BTreeMap::<&str, usize>::new();
        for j in &bundle.judgments {
            *by_item.entry(j.item_id.as_str()).or_default() += 1;
        }
        let max = by_item.values().copied().max().unwrap_or(0);
        bundle
            .judgments
            .iter()
            .filter(|j| by_item[j.item_id.as_str()] == max)
            .cloned()
            .collect()
    };
    let matrix = RatingMatrix::from_judgments(&full_items, 2, |j| collapse_binary(j.label))?;
    println!(
        "binary Fleiss kappa over {} fully-rated items, {} raters: {:.3}",
        matrix.items(),
        matrix.raters(),
        fleiss_kappa(&matrix)?
    );

    let ranks = label_ranks_by_annotator(&bundle.judgments);
    let aggregate = pairwise_aggregate_tau(&ranks, 10)?;
    println!(
        "pairwise aggregate tau over labels: {:.3} ({} pairs included)",
        aggregate.aggregate, aggregate.included
    );
    for pair in &aggregate.pairs {
        println!(
            "  ({}, {}) overlap {:>2}: {:?}",
            pair.annotators.0, pair.annotators.1, pair.overlap, pair.status
        );
    }

    println!("\nlabel distribution (percent, by annotator):");
    println!("{:>10}  all major minor complete", "");
    for row in label_distribution(&bundle, GroupBy::Annotator)? {
        println!(
            "{:>10}  {:>3} {:>5} {:>5} {:>8}",
            row.group,
            round_half_up(row.percent[0]),
            round_half_up(row.percent[1]),
            round_half_up(row.percent[2]),
            round_half_up(row.percent[3]),
        );
    }
    Ok(())
}
