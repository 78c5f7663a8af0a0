//! Rescaling pipeline: route a judgment through the extreme-label
//! policy, build the prompt, invoke a scoring backend, parse the
//! returned score and quantize it when requested.
//!
//! Extreme labels (`complete`, `missing_all`) are not sent to the
//! backend by default; they receive fixed endpoint scores. Set
//! `rescale_extremes` to push every judgment through the backend.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::DatasetBundle;
use crate::model::{Judgment, LikertLabel, Method, Rubric, ScoredJudgment};
use crate::prompt::{build_rescale_prompt, PromptContext, PromptError, PromptTemplates};

pub use crate::prompt::PromptVariant;

#[derive(Debug, Error)]
pub enum RescaleError {
    #[error("{0}")]
    Prompt(#[from] PromptError),
    #[error("backend '{backend}' failed: {message}")]
    Backend { backend: String, message: String },
    #[error("no score found in backend response (raw response preserved)")]
    NoScoreFound { raw_response: String },
    #[error("rubric has no per_sentence_deduction; the oracle backend needs one")]
    MissingPerSentenceDeduction,
    #[error("judgment references unknown item '{0}'")]
    UnknownItem(String),
    #[error("item references unknown document '{0}'")]
    UnknownDocument(String),
    #[error("policy endpoint {value} outside rubric scale [{min}, {max}]")]
    EndpointOutOfScale { value: i64, min: i64, max: i64 },
}

/// How extreme labels and quantization are handled during rescaling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescalePolicy {
    /// Send `complete` / `missing_all` judgments to the backend instead
    /// of assigning the fixed endpoints.
    pub rescale_extremes: bool,
    /// Endpoint assigned to `complete` when extremes are not rescaled.
    pub complete_score: i64,
    /// Endpoint assigned to `missing_all` when extremes are not rescaled.
    pub missing_all_score: i64,
    /// Round backend scores to the nearest multiple (ties round up).
    pub quantize_to: Option<u32>,
}

impl Default for RescalePolicy {
    fn default() -> Self {
        RescalePolicy {
            rescale_extremes: false,
            complete_score: 100,
            missing_all_score: 0,
            quantize_to: None,
        }
    }
}

impl RescalePolicy {
    fn endpoint(&self, label: LikertLabel) -> Option<i64> {
        if self.rescale_extremes {
            return None;
        }
        match label {
            LikertLabel::Complete => Some(self.complete_score),
            LikertLabel::MissingAll => Some(self.missing_all_score),
            _ => None,
        }
    }

    fn check_against(&self, rubric: &Rubric) -> Result<(), RescaleError> {
        for value in [self.complete_score, self.missing_all_score] {
            if value < rubric.scale_min() || value > rubric.scale_max() {
                return Err(RescaleError::EndpointOutOfScale {
                    value,
                    min: rubric.scale_min(),
                    max: rubric.scale_max(),
                });
            }
        }
        Ok(())
    }
}

/// A scoring request: the rendered prompt plus the judgment it was built
/// from, so offline backends can score without parsing prompt text.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub prompt: &'a str,
    pub judgment: &'a Judgment,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    /// True for failures worth retrying at a higher level (the llm
    /// client already retried transport-level ones).
    pub transient: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            transient: false,
        }
    }
}

/// Anything that can turn a scoring request into response text.
pub trait ScoringBackend: Sync {
    fn id(&self) -> &str;
    /// Whether identical requests always yield identical text.
    fn deterministic(&self) -> bool;
    fn complete(&self, request: &ScoreRequest<'_>) -> Result<String, BackendError>;
}

/// Deterministic offline backend: deducts a flat amount per missing
/// sentence, ignoring the explanation. Useful for tests, pipeline
/// dry-runs and determinism checks.
pub struct RubricOracleBackend {
    rubric: Rubric,
}

impl RubricOracleBackend {
    pub fn new(rubric: Rubric) -> Result<Self, RescaleError> {
        if rubric.per_sentence_deduction.is_none() {
            return Err(RescaleError::MissingPerSentenceDeduction);
        }
        Ok(RubricOracleBackend { rubric })
    }
}

impl ScoringBackend for RubricOracleBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn complete(&self, request: &ScoreRequest<'_>) -> Result<String, BackendError> {
        let score = rubric_oracle_score(request.judgment, &self.rubric)
            .map_err(|e| BackendError::fatal(e.to_string()))?;
        Ok(score.to_string())
    }
}

/// Flat per-sentence deduction from the top of the scale, clamped to the
/// scale bounds. Explanation-independent by construction.
pub fn rubric_oracle_score(judgment: &Judgment, rubric: &Rubric) -> Result<i64, RescaleError> {
    let deduction = rubric
        .per_sentence_deduction
        .ok_or(RescaleError::MissingPerSentenceDeduction)?;
    let raw = rubric.scale_max() - i64::from(deduction) * judgment.missing_sentences.len() as i64;
    Ok(raw.clamp(rubric.scale_min(), rubric.scale_max()))
}

/// Extracts the verdict from backend response text: the last standalone
/// integer (maximal digit run) that lies within the scale. Backends that
/// reason step by step state deductions before the final score, so the
/// last in-range number is the verdict.
pub fn parse_score(response: &str, scale: (i64, i64)) -> Result<i64, RescaleError> {
    let (min, max) = scale;
    let mut last = None;
    let bytes = response.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if let Ok(value) = response[start..i].parse::<i64>() {
                if value >= min && value <= max {
                    last = Some(value);
                }
            }
        } else {
            i += 1;
        }
    }
    last.ok_or_else(|| RescaleError::NoScoreFound {
        raw_response: response.to_string(),
    })
}

/// Nearest multiple of `step`, ties rounding up, clamped to the scale.
fn quantize(score: i64, step: u32, scale: (i64, i64)) -> i64 {
    let step = i64::from(step);
    let remainder = score.rem_euclid(step);
    let rounded = if remainder * 2 >= step {
        score + (step - remainder)
    } else {
        score - remainder
    };
    rounded.clamp(scale.0, scale.1)
}

fn method_for(variant: PromptVariant) -> Method {
    match variant {
        PromptVariant::WithRubric => Method::Ebr,
        PromptVariant::WithoutRubric => Method::EbrNoRubric,
    }
}

/// Rescales one judgment. Extreme labels short-circuit to the policy
/// endpoints with no prompt built and no backend call; everything else
/// goes through prompt construction, the backend and score parsing.
pub fn rescale_judgment(
    backend: &dyn ScoringBackend,
    templates: &PromptTemplates,
    ctx: &PromptContext<'_>,
    rubric: &Rubric,
    variant: PromptVariant,
    policy: &RescalePolicy,
    run_id: &str,
) -> Result<ScoredJudgment, RescaleError> {
    policy.check_against(rubric)?;
    let judgment = ctx.judgment;
    let base = |score: f64, raw_response: Option<String>| ScoredJudgment {
        item_id: judgment.item_id.clone(),
        annotator: judgment.annotator.clone(),
        method: method_for(variant),
        backend: backend.id().to_string(),
        run_id: run_id.to_string(),
        score,
        raw_response,
    };

    if let Some(endpoint) = policy.endpoint(judgment.label) {
        return Ok(base(endpoint as f64, None));
    }

    let prompt = build_rescale_prompt(templates, ctx, rubric, variant)?;
    let request = ScoreRequest {
        prompt: &prompt,
        judgment,
    };
    let response = backend.complete(&request).map_err(|e| RescaleError::Backend {
        backend: backend.id().to_string(),
        message: e.to_string(),
    })?;
    let mut score = parse_score(&response, (rubric.scale_min(), rubric.scale_max()))?;
    if let Some(step) = policy.quantize_to {
        score = quantize(score, step, (rubric.scale_min(), rubric.scale_max()));
    }
    Ok(base(score as f64, Some(response)))
}

/// A failed judgment inside a batch, tagged with where it happened.
#[derive(Debug, Serialize)]
pub struct RescaleFailure {
    pub item_id: String,
    pub annotator: String,
    pub error: String,
}

/// Batch result: scores in input order plus the failures collected along
/// the way. Partial failures never abort the batch.
#[derive(Debug, Default)]
pub struct RescaleOutcome {
    pub scores: Vec<ScoredJudgment>,
    pub failures: Vec<RescaleFailure>,
}

/// Rescales every judgment in a bundle, issuing up to `concurrency`
/// backend calls at a time. Scores come back in input order regardless
/// of completion order; failures are collected and reported together.
pub fn rescale_bundle(
    backend: &dyn ScoringBackend,
    templates: &PromptTemplates,
    bundle: &DatasetBundle,
    rubric: &Rubric,
    variant: PromptVariant,
    policy: &RescalePolicy,
    run_id: &str,
    concurrency: usize,
) -> RescaleOutcome {
    let items = bundle.item_index();
    let documents = bundle.document_index();
    let mut slots: Vec<Option<Result<ScoredJudgment, RescaleError>>> =
        (0..bundle.judgments.len()).map(|_| None).collect();
    let mut contexts: Vec<(usize, PromptContext<'_>)> = Vec::new();
    for (index, judgment) in bundle.judgments.iter().enumerate() {
        let resolved = items
            .get(judgment.item_id.as_str())
            .ok_or_else(|| RescaleError::UnknownItem(judgment.item_id.clone()))
            .and_then(|item| {
                documents
                    .get(item.doc_id.as_str())
                    .ok_or_else(|| RescaleError::UnknownDocument(item.doc_id.clone()))
                    .map(|document| PromptContext {
                        document,
                        item,
                        judgment,
                    })
            });
        match resolved {
            Ok(ctx) => contexts.push((index, ctx)),
            Err(error) => slots[index] = Some(Err(error)),
        }
    }

    let n = contexts.len();
    let workers = concurrency.max(1).min(n.max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<ScoredJudgment, RescaleError>)>();

    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let contexts = &contexts;
            let next = &next;
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                if slot >= n {
                    break;
                }
                let (index, ctx) = &contexts[slot];
                let result =
                    rescale_judgment(backend, templates, ctx, rubric, variant, policy, run_id);
                if tx.send((*index, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });
    for (index, result) in rx {
        slots[index] = Some(result);
    }

    let mut outcome = RescaleOutcome::default();
    for (index, slot) in slots.into_iter().enumerate() {
        let judgment = &bundle.judgments[index];
        match slot.expect("every judgment is processed exactly once") {
            Ok(score) => outcome.scores.push(score),
            Err(error) => outcome.failures.push(RescaleFailure {
                item_id: judgment.item_id.clone(),
                annotator: judgment.annotator.clone(),
                error: error.to_string(),
            }),
        }
    }
    outcome
}
