//! Rank-correlation, error and chance-corrected agreement statistics.
//!
//! All functions here are pure and stateless. Kendall's tau-b uses an
//! O(n log n) merge-sort pair counter; its p-value comes from the
//! tie-adjusted normal approximation, which is coarse below roughly ten
//! observations. A margin that is fully tied makes tau-b undefined and
//! is reported as a distinct outcome, never coerced to zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::DatasetBundle;
use crate::model::{Judgment, LikertLabel};

/// Minimum co-annotated items per annotator pair before the pair's tau
/// enters an aggregate. Tiny overlaps make tau noise.
pub const DEFAULT_MIN_OVERLAP: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("paired sequences differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("the {margin} margin is fully tied; tau-b is undefined")]
    AllTied { margin: &'static str },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("item '{item}' has {got} ratings, expected {expected}")]
    UnequalRaterCounts {
        item: String,
        expected: usize,
        got: usize,
    },
    #[error("expected agreement is 1 (all ratings in one category); kappa is undefined")]
    DegenerateAgreement,
    #[error("need at least 2 annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("no annotator pair had enough shared items and a defined tau")]
    NoValidPairs,
}

/// Kendall tau-b with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
}

impl TauResult {
    /// Reporting convention: dagger-marked when p < 0.05.
    pub fn significant(&self) -> bool {
        self.p_value < 0.05
    }
}

/// Mean absolute error between paired observations.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(pairs.iter().map(|(x, y)| (x - y).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Per-margin tie statistics over groups of equal values.
#[derive(Debug, Default, Clone, Copy)]
struct TieStats {
    /// Sum over groups of t*(t-1)/2: number of tied pairs.
    pairs: u64,
    /// Sum of t*(t-1).
    v1: f64,
    /// Sum of t*(t-1)*(t-2).
    v2: f64,
    /// Sum of t*(t-1)*(2t+5).
    vc: f64,
}

impl TieStats {
    fn add_group(&mut self, t: u64) {
        if t < 2 {
            return;
        }
        let tf = t as f64;
        self.pairs += t * (t - 1) / 2;
        self.v1 += tf * (tf - 1.0);
        self.v2 += tf * (tf - 1.0) * (tf - 2.0);
        self.vc += tf * (tf - 1.0) * (2.0 * tf + 5.0);
    }
}

fn tie_stats_sorted(values: &[f64]) -> TieStats {
    let mut stats = TieStats::default();
    let mut run = 1u64;
    for i in 1..values.len() {
        if values[i] == values[i - 1] {
            run += 1;
        } else {
            stats.add_group(run);
            run = 1;
        }
    }
    stats.add_group(run);
    stats
}

/// Bottom-up merge sort over `keys` counting strict inversions. With the
/// input ordered by (x, then y), the inversion count of the y sequence is
/// exactly the number of discordant pairs.
fn sort_counting_inversions(keys: &mut [f64]) -> u64 {
    let n = keys.len();
    let mut buf = vec![0.0f64; n];
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo + width < n {
            let mid = lo + width;
            let hi = (lo + 2 * width).min(n);
            let (left, right) = (&keys[lo..mid], &keys[mid..hi]);
            let out = &mut buf[lo..hi];
            let (mut i, mut j, mut k) = (0, 0, 0);
            while i < left.len() && j < right.len() {
                if right[j] < left[i] {
                    inversions += (left.len() - i) as u64;
                    out[k] = right[j];
                    j += 1;
                } else {
                    out[k] = left[i];
                    i += 1;
                }
                k += 1;
            }
            out[k..k + left.len() - i].copy_from_slice(&left[i..]);
            out[k + left.len() - i..].copy_from_slice(&right[j..]);
            keys[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    inversions
}

/// Kendall's tau-b over paired observations, with tie corrections in the
/// coefficient and in the variance used for the p-value.
///
/// Errors on fewer than two observations and on a fully tied margin
/// (the denominator is zero there, so no coefficient exists).
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<TauResult, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            x: xs.len(),
            y: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(MetricsError::InsufficientData { needed: 2, got: n });
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("values checked finite"));

    // Tie statistics for the x margin plus joint (x, y) ties.
    let x_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x_ties = tie_stats_sorted(&x_sorted);
    let mut joint_pairs = 0u64;
    {
        let mut run = 1u64;
        for i in 1..pairs.len() {
            if pairs[i] == pairs[i - 1] {
                run += 1;
            } else {
                joint_pairs += run * (run - 1) / 2;
                run = 1;
            }
        }
        joint_pairs += run * (run - 1) / 2;
    }

    let mut y_keys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = sort_counting_inversions(&mut y_keys);
    let y_ties = tie_stats_sorted(&y_keys);

    let n_u = n as u64;
    let total_pairs = n_u * (n_u - 1) / 2;
    if x_ties.pairs == total_pairs {
        return Err(MetricsError::AllTied { margin: "x" });
    }
    if y_ties.pairs == total_pairs {
        return Err(MetricsError::AllTied { margin: "y" });
    }

    // S = C - D = n0 - n1 - n2 + n3 - 2*D.
    let s = total_pairs as f64 - x_ties.pairs as f64 - y_ties.pairs as f64 + joint_pairs as f64
        - 2.0 * discordant as f64;
    let denom = ((total_pairs - x_ties.pairs) as f64 * (total_pairs - y_ties.pairs) as f64).sqrt();
    let tau = (s / denom).clamp(-1.0, 1.0);

    // Tie-adjusted variance of S (normal approximation).
    let nf = n as f64;
    let m = nf * (nf - 1.0);
    let mut var_s = (m * (2.0 * nf + 5.0) - x_ties.vc - y_ties.vc) / 18.0
        + x_ties.v1 * y_ties.v1 / (2.0 * m);
    if n > 2 {
        var_s += x_ties.v2 * y_ties.v2 / (9.0 * m * (nf - 2.0));
    }
    let p_value = if var_s > 0.0 {
        libm::erfc(s.abs() / var_s.sqrt() / std::f64::consts::SQRT_2)
    } else {
        1.0
    };

    Ok(TauResult { tau, p_value, n })
}

/// Per-item category counts with a shared rater count, the input shape
/// Fleiss' kappa is defined over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<Vec<u64>>,
    raters: u64,
}

impl RatingMatrix {
    /// Builds a matrix from per-item category counts. Every row must sum
    /// to the same rater count; items with differing counts are rejected.
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if counts.len() < 2 {
            return Err(MetricsError::InsufficientData {
                needed: 2,
                got: counts.len(),
            });
        }
        let raters: u64 = counts[0].iter().sum();
        if raters < 2 {
            return Err(MetricsError::InsufficientData {
                needed: 2,
                got: raters as usize,
            });
        }
        for (i, row) in counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total != raters {
                return Err(MetricsError::UnequalRaterCounts {
                    item: format!("#{i}"),
                    expected: raters as usize,
                    got: total as usize,
                });
            }
        }
        Ok(RatingMatrix { counts, raters })
    }

    /// Groups judgments by item and tallies categories assigned by
    /// `category` (values in `0..n_categories`).
    pub fn from_judgments(
        judgments: &[Judgment],
        n_categories: usize,
        category: impl Fn(&Judgment) -> usize,
    ) -> Result<Self, MetricsError> {
        let mut by_item: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for judgment in judgments {
            let row = by_item
                .entry(judgment.item_id.as_str())
                .or_insert_with(|| vec![0; n_categories]);
            row[category(judgment)] += 1;
        }
        if by_item.len() < 2 {
            return Err(MetricsError::InsufficientData {
                needed: 2,
                got: by_item.len(),
            });
        }
        let rows: Vec<(&str, Vec<u64>)> = by_item.into_iter().collect();
        let raters: u64 = rows[0].1.iter().sum();
        for (item, row) in &rows {
            let total: u64 = row.iter().sum();
            if total != raters {
                return Err(MetricsError::UnequalRaterCounts {
                    item: (*item).to_string(),
                    expected: raters as usize,
                    got: total as usize,
                });
            }
        }
        Self::new(rows.into_iter().map(|(_, row)| row).collect())
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self) -> usize {
        self.raters as usize
    }
}

/// Fleiss' kappa: chance-corrected agreement for equal-rater categorical
/// ratings. Exactly 1.0 when every item is unanimous.
pub fn fleiss_kappa(matrix: &RatingMatrix) -> Result<f64, MetricsError> {
    let n_items = matrix.counts.len() as f64;
    let raters = matrix.raters as f64;
    let n_categories = matrix.counts[0].len();

    let mut category_totals = vec![0u64; n_categories];
    let mut observed_sum = 0.0;
    for row in &matrix.counts {
        let mut same_pairs = 0u64;
        for (j, &c) in row.iter().enumerate() {
            category_totals[j] += c;
            same_pairs += c * c.saturating_sub(1);
        }
        observed_sum += same_pairs as f64 / (raters * (raters - 1.0));
    }
    let observed = observed_sum / n_items;

    let grand_total = n_items * raters;
    let expected: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / grand_total;
            p * p
        })
        .sum();

    if expected >= 1.0 {
        return Err(MetricsError::DegenerateAgreement);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Binary collapse used for the two-class agreement analysis:
/// complete maps to 1, every other label to 0.
pub fn collapse_binary(label: LikertLabel) -> usize {
    match label {
        LikertLabel::Complete => 1,
        _ => 0,
    }
}

/// Outcome of one annotator pair inside a pairwise aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PairStatus {
    Included { tau: f64, p_value: f64 },
    TooFewShared,
    Undefined { margin: String },
}

/// One annotator pair's tau over the items both rated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTau {
    pub annotators: (String, String),
    pub overlap: usize,
    #[serde(flatten)]
    pub status: PairStatus,
}

/// Mean pairwise tau across annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAggregate {
    /// Unweighted mean of tau over included pairs.
    pub aggregate: f64,
    /// Variant that counts undefined pairs as zero instead of excluding
    /// them (pairs below the overlap threshold stay excluded).
    pub aggregate_undefined_as_zero: f64,
    pub included: usize,
    pub pairs: Vec<PairTau>,
}

/// Kendall tau-b per unordered annotator pair over the items both rated,
/// averaged with equal weight. Annotation is sparse, so overlaps differ
/// per pair; pairs with fewer than `min_overlap` shared items or an
/// undefined tau are excluded from the mean and listed separately.
pub fn pairwise_aggregate_tau(
    scores_by_annotator: &BTreeMap<String, BTreeMap<String, f64>>,
    min_overlap: usize,
) -> Result<PairwiseAggregate, MetricsError> {
    if scores_by_annotator.len() < 2 {
        return Err(MetricsError::TooFewAnnotators(scores_by_annotator.len()));
    }
    let annotators: Vec<&String> = scores_by_annotator.keys().collect();
    let threshold = min_overlap.max(2);

    let mut pairs = Vec::new();
    let mut included_sum = 0.0;
    let mut included = 0usize;
    let mut zero_variant_sum = 0.0;
    let mut zero_variant_n = 0usize;

    for i in 0..annotators.len() {
        for j in i + 1..annotators.len() {
            let a = &scores_by_annotator[annotators[i]];
            let b = &scores_by_annotator[annotators[j]];
            let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
            let overlap = shared.len();
            let status = if overlap < threshold {
                PairStatus::TooFewShared
            } else {
                let xs: Vec<f64> = shared.iter().map(|k| a[*k]).collect();
                let ys: Vec<f64> = shared.iter().map(|k| b[*k]).collect();
                match kendall_tau_b(&xs, &ys) {
                    Ok(result) => {
                        included_sum += result.tau;
                        included += 1;
                        zero_variant_sum += result.tau;
                        zero_variant_n += 1;
                        PairStatus::Included {
                            tau: result.tau,
                            p_value: result.p_value,
                        }
                    }
                    Err(MetricsError::AllTied { margin }) => {
                        zero_variant_n += 1;
                        PairStatus::Undefined {
                            margin: margin.to_string(),
                        }
                    }
                    Err(other) => return Err(other),
                }
            };
            pairs.push(PairTau {
                annotators: (annotators[i].clone(), annotators[j].clone()),
                overlap,
                status,
            });
        }
    }

    if included == 0 {
        return Err(MetricsError::NoValidPairs);
    }
    Ok(PairwiseAggregate {
        aggregate: included_sum / included as f64,
        aggregate_undefined_as_zero: zero_variant_sum / zero_variant_n as f64,
        included,
        pairs,
    })
}

/// Slicing key for label-distribution tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Overall,
    System,
    Annotator,
}

/// One row of a label-distribution table. Percentages are kept at full
/// precision; display layers round half-up to whole points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub group: String,
    pub n: usize,
    /// Counts in label order: missing_all, missing_major, missing_minor,
    /// complete.
    pub counts: [usize; 4],
    /// Percentages in the same order, summing to 100.
    pub percent: [f64; 4],
}

/// Percentage of judgments per label, overall or grouped by answer
/// system or annotator.
pub fn label_distribution(
    bundle: &DatasetBundle,
    group_by: GroupBy,
) -> Result<Vec<DistributionRow>, MetricsError> {
    if bundle.judgments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let items = bundle.item_index();
    let mut groups: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for judgment in &bundle.judgments {
        let group = match group_by {
            GroupBy::Overall => "overall".to_string(),
            GroupBy::Annotator => judgment.annotator.clone(),
            GroupBy::System => items
                .get(judgment.item_id.as_str())
                .map(|item| item.system.to_string())
                .unwrap_or_else(|| "unknown".to_string()),
        };
        groups.entry(group).or_default()[judgment.label.rank() as usize] += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(group, counts)| {
            let n: usize = counts.iter().sum();
            let percent =
                counts.map(|c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 });
            DistributionRow {
                group,
                n,
                counts,
                percent,
            }
        })
        .collect())
}

/// Half-up rounding used when rendering percentages as whole points.
pub fn round_half_up(value: f64) -> i64 {
    (value + 0.5).floor() as i64
}

/// Builds the per-annotator score maps `pairwise_aggregate_tau` consumes
/// from flat (annotator, item, score) triples.
pub fn scores_by_annotator<'a, I>(triples: I) -> BTreeMap<String, BTreeMap<String, f64>>
where
    I: IntoIterator<Item = (&'a str, &'a str, f64)>,
{
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (annotator, item, score) in triples {
        out.entry(annotator.to_string())
            .or_default()
            .insert(item.to_string(), score);
    }
    out
}

/// Deterministic label-rank view of a judgment set, the "pre-rescaling"
/// input for agreement comparisons.
pub fn label_ranks_by_annotator(judgments: &[Judgment]) -> BTreeMap<String, BTreeMap<String, f64>> {
    scores_by_annotator(
        judgments
            .iter()
            .map(|j| (j.annotator.as_str(), j.item_id.as_str(), f64::from(j.label.rank()))),
    )
}

/// Distinct annotators in input order-independent (sorted) form.
pub fn annotator_set(judgments: &[Judgment]) -> BTreeSet<&str> {
    judgments.iter().map(|j| j.annotator.as_str()).collect()
}
