//! Non-LLM scoring baselines: static label mapping, averaged-score label
//! mapping, and the missing-sentences heuristic with its deduction
//! optimizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Judgment, LikertLabel, Method, ReferenceScore, ScoredJudgment};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no scores carry label '{0}'")]
    MissingLabel(LikertLabel),
    #[error("score for (annotator='{annotator}', item='{item_id}') has no matching judgment")]
    UnmatchedScore { item_id: String, annotator: String },
    #[error("empty input")]
    EmptyInput,
    #[error("no judgment has a reference score")]
    NoReferenceOverlap,
}

/// A per-label score table. Values are kept in label order
/// (missing_all, missing_major, missing_minor, complete).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub values: [f64; 4],
}

impl LabelMapping {
    pub fn new(missing_all: f64, missing_major: f64, missing_minor: f64, complete: f64) -> Self {
        LabelMapping {
            values: [missing_all, missing_major, missing_minor, complete],
        }
    }

    pub fn get(&self, label: LikertLabel) -> f64 {
        self.values[label.rank() as usize]
    }

    /// Monotone in the label order (ties allowed).
    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// Label pairs that violate the ordering, empty when monotone.
    pub fn monotonicity_violations(&self) -> Vec<(LikertLabel, LikertLabel)> {
        let mut out = Vec::new();
        for w in 0..3 {
            if self.values[w] > self.values[w + 1] {
                out.push((LikertLabel::ALL[w], LikertLabel::ALL[w + 1]));
            }
        }
        out
    }
}

/// The equal-interval label mapping: 0 / 30 / 70 / 100.
pub fn static_mapping() -> LabelMapping {
    LabelMapping::new(0.0, 30.0, 70.0, 100.0)
}

/// Maps a label to its equal-interval score: complete is 100, missing
/// minor 70, missing major 30, missing all 0.
pub fn static_rescale(label: LikertLabel) -> f64 {
    static_mapping().get(label)
}

/// Looks up a judgment's label in a mapping.
pub fn apply_mapping(mapping: &LabelMapping, judgment: &Judgment) -> f64 {
    mapping.get(judgment.label)
}

/// Result of fitting a label mapping from scores: the per-label means,
/// how many scores backed each label, and any ordering violations found.
/// Violations are reported, never silently reordered away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMapping {
    pub mapping: LabelMapping,
    pub per_label_n: [usize; 4],
    pub monotonicity_violations: Vec<(LikertLabel, LikertLabel)>,
}

/// Fits the averaged-score mapping: each label maps to the arithmetic
/// mean of the scores whose judgment carries that label. Scores are
/// joined to judgments by (annotator, item).
pub fn fit_avg_ebr_mapping(
    scores: &[ScoredJudgment],
    judgments: &[Judgment],
) -> Result<FittedMapping, BaselineError> {
    if scores.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let labels: HashMap<(&str, &str), LikertLabel> = judgments
        .iter()
        .map(|j| (j.key(), j.label))
        .collect();
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for score in scores {
        let label = labels
            .get(&score.key())
            .ok_or_else(|| BaselineError::UnmatchedScore {
                item_id: score.item_id.clone(),
                annotator: score.annotator.clone(),
            })?;
        let idx = label.rank() as usize;
        sums[idx] += score.score;
        counts[idx] += 1;
    }
    for (idx, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(BaselineError::MissingLabel(LikertLabel::ALL[idx]));
        }
    }
    let mapping = LabelMapping {
        values: [
            sums[0] / counts[0] as f64,
            sums[1] / counts[1] as f64,
            sums[2] / counts[2] as f64,
            sums[3] / counts[3] as f64,
        ],
    };
    Ok(FittedMapping {
        monotonicity_violations: mapping.monotonicity_violations(),
        mapping,
        per_label_n: counts,
    })
}

/// Missing-sentences heuristic: deduct `deduction` points per marked
/// sentence from 100, clamped to [0, 100]. Ignores the explanation.
pub fn msh_score(judgment: &Judgment, deduction: u32) -> i64 {
    (100 - i64::from(deduction) * judgment.missing_sentences.len() as i64).clamp(0, 100)
}

/// Optimizer output: the best integer deduction and the error it
/// achieves against the reference means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MshFit {
    pub deduction: u32,
    pub mae: f64,
    pub n: usize,
}

/// Exhaustive grid search over integer deductions, minimizing overall
/// MAE against reference mean scores. Ties break toward the smaller
/// deduction. Only judgments that have a reference enter the fit.
pub fn optimize_msh_deduction(
    judgments: &[Judgment],
    references: &[ReferenceScore],
    search: std::ops::RangeInclusive<u32>,
) -> Result<MshFit, BaselineError> {
    if judgments.is_empty() || search.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let reference_means: HashMap<(&str, &str), f64> = references
        .iter()
        .map(|r| (r.key(), r.mean_score()))
        .collect();
    let paired: Vec<(usize, f64)> = judgments
        .iter()
        .filter_map(|j| {
            reference_means
                .get(&j.key())
                .map(|&mean| (j.missing_sentences.len(), mean))
        })
        .collect();
    if paired.is_empty() {
        return Err(BaselineError::NoReferenceOverlap);
    }

    let mut best: Option<MshFit> = None;
    for deduction in search {
        let total: f64 = paired
            .iter()
            .map(|&(missing, reference)| {
                let score = (100 - i64::from(deduction) * missing as i64).clamp(0, 100) as f64;
                (score - reference).abs()
            })
            .sum();
        let mae = total / paired.len() as f64;
        if best.map_or(true, |b| mae < b.mae) {
            best = Some(MshFit {
                deduction,
                mae,
                n: paired.len(),
            });
        }
    }
    Ok(best.expect("search range is non-empty"))
}

/// Produces score records for a whole judgment set under a label
/// mapping. `method` should be `Static` or `AvgEbr`.
pub fn score_with_mapping(
    judgments: &[Judgment],
    mapping: &LabelMapping,
    method: Method,
    run_id: &str,
) -> Vec<ScoredJudgment> {
    judgments
        .iter()
        .map(|judgment| ScoredJudgment {
            item_id: judgment.item_id.clone(),
            annotator: judgment.annotator.clone(),
            method,
            backend: "mapping".into(),
            run_id: run_id.to_string(),
            score: apply_mapping(mapping, judgment),
            raw_response: None,
        })
        .collect()
}

/// Produces missing-sentences-heuristic score records for a judgment set.
pub fn score_with_msh(judgments: &[Judgment], deduction: u32, run_id: &str) -> Vec<ScoredJudgment> {
    judgments
        .iter()
        .map(|judgment| ScoredJudgment {
            item_id: judgment.item_id.clone(),
            annotator: judgment.annotator.clone(),
            method: Method::Msh,
            backend: format!("msh-{deduction}"),
            run_id: run_id.to_string(),
            score: msh_score(judgment, deduction) as f64,
            raw_response: None,
        })
        .collect()
}
