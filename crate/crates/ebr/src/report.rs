//! Result-table assembly: scoring methods against reference scores,
//! expert inter-agreement, annotator agreement before and after
//! rescaling, per-label score averages, and run-to-run stability.
//!
//! Reports are deterministic functions of their inputs. Each report has
//! a machine-readable record form and a plain-text rendering; undefined
//! tau values render as dashes and p < 0.05 carries a dagger marker.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::DatasetBundle;
use crate::metrics::{
    self, kendall_tau_b, mae, pairwise_aggregate_tau, MetricsError, PairStatus, PairwiseAggregate,
    TauResult,
};
use crate::model::{Judgment, LikertLabel, ReferenceScore, Rubric, ScoredJudgment};
use crate::prompt::{PromptTemplates, PromptVariant};
use crate::rescale::{rescale_bundle, RescalePolicy, ScoringBackend};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("slice '{0}' has no judgments with both a method score and a reference")]
    EmptySlice(String),
    #[error("need at least 2 expert score columns, got {0}")]
    TooFewExperts(usize),
    #[error("reference for (annotator='{annotator}', item='{item_id}') has {got} expert scores, expected {expected}")]
    RaggedExperts {
        annotator: String,
        item_id: String,
        expected: usize,
        got: usize,
    },
    #[error("score coverage differs from judgment coverage, e.g. at (annotator='{annotator}', item='{item_id}')")]
    CoverageMismatch { annotator: String, item_id: String },
    #[error("no reference scores available")]
    NoReferences,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("stability backend for run {run}: {message}")]
    StabilityBackend { run: usize, message: String },
}

/// A label filter for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slice {
    Overall,
    Label(LikertLabel),
}

impl Slice {
    /// The default reporting slices: everything, plus the two mid labels
    /// where explanations carry the most nuance. The extremes distort
    /// per-label rankings, so they are not sliced out by default.
    pub const DEFAULT: [Slice; 3] = [
        Slice::Overall,
        Slice::Label(LikertLabel::MissingMinor),
        Slice::Label(LikertLabel::MissingMajor),
    ];

    pub fn name(&self) -> String {
        match self {
            Slice::Overall => "overall".into(),
            Slice::Label(label) => label.as_str().into(),
        }
    }

    pub fn parse(text: &str) -> Option<Slice> {
        match text {
            "overall" => Some(Slice::Overall),
            "missing_all" => Some(Slice::Label(LikertLabel::MissingAll)),
            "missing_major" => Some(Slice::Label(LikertLabel::MissingMajor)),
            "missing_minor" => Some(Slice::Label(LikertLabel::MissingMinor)),
            "complete" => Some(Slice::Label(LikertLabel::Complete)),
            _ => None,
        }
    }

    fn admits(&self, label: LikertLabel) -> bool {
        match self {
            Slice::Overall => true,
            Slice::Label(l) => *l == label,
        }
    }
}

/// Tau for a slice: either a value with significance, or a named reason
/// it does not exist (constant predictor, single pair). Never coerced
/// to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TauOutcome {
    Defined { tau: f64, p_value: f64 },
    Undefined { reason: String },
}

impl TauOutcome {
    pub fn defined(&self) -> Option<(f64, f64)> {
        match self {
            TauOutcome::Defined { tau, p_value } => Some((*tau, *p_value)),
            TauOutcome::Undefined { .. } => None,
        }
    }

    fn from_result(result: Result<TauResult, MetricsError>) -> Result<Self, MetricsError> {
        match result {
            Ok(r) => Ok(TauOutcome::Defined {
                tau: r.tau,
                p_value: r.p_value,
            }),
            Err(MetricsError::AllTied { margin }) => Ok(TauOutcome::Undefined {
                reason: format!("{margin} margin fully tied"),
            }),
            Err(MetricsError::InsufficientData { got, .. }) => Ok(TauOutcome::Undefined {
                reason: format!("only {got} paired observation(s)"),
            }),
            Err(other) => Err(other),
        }
    }

    /// Paper-style cell: dash when undefined, dagger when p < 0.05.
    pub fn render(&self) -> String {
        match self {
            TauOutcome::Defined { tau, p_value } => {
                if *p_value < 0.05 {
                    format!("{tau:.2}\u{2020}")
                } else {
                    format!("{tau:.2}")
                }
            }
            TauOutcome::Undefined { .. } => "-".into(),
        }
    }
}

/// Tau and MAE of one method against references within one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice: String,
    pub tau: TauOutcome,
    pub mae: f64,
    pub n: usize,
}

/// Method-versus-reference comparison across slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub slices: Vec<SliceReport>,
}

/// Machine-readable report record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub slice: String,
    /// Null when the metric is undefined for the slice.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n: usize,
}

fn label_lookup(judgments: &[Judgment]) -> HashMap<(&str, &str), LikertLabel> {
    judgments.iter().map(|j| (j.key(), j.label)).collect()
}

fn slice_pairs(
    scores: &[ScoredJudgment],
    references: &[ReferenceScore],
    judgments: &[Judgment],
    slice: Slice,
) -> Vec<(f64, f64)> {
    let labels = label_lookup(judgments);
    let reference_means: HashMap<(&str, &str), f64> = references
        .iter()
        .map(|r| (r.key(), r.mean_score()))
        .collect();
    let mut keyed: Vec<(&ScoredJudgment, f64)> = scores
        .iter()
        .filter_map(|s| {
            let label = labels.get(&s.key())?;
            if !slice.admits(*label) {
                return None;
            }
            reference_means.get(&s.key()).map(|&mean| (s, mean))
        })
        .collect();
    keyed.sort_by(|(a, _), (b, _)| (&a.item_id, &a.annotator).cmp(&(&b.item_id, &b.annotator)));
    keyed.into_iter().map(|(s, mean)| (s.score, mean)).collect()
}

/// Compares one method's scores against reference mean scores, slice by
/// slice. A slice where the method is constant (every static-mapping
/// slice within one label, for instance) reports tau as undefined.
pub fn evaluate_against_reference(
    method_name: &str,
    scores: &[ScoredJudgment],
    references: &[ReferenceScore],
    judgments: &[Judgment],
    slices: &[Slice],
) -> Result<EvalReport, ReportError> {
    let mut out = Vec::new();
    for &slice in slices {
        let pairs = slice_pairs(scores, references, judgments, slice);
        if pairs.is_empty() {
            return Err(ReportError::EmptySlice(slice.name()));
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let tau = TauOutcome::from_result(kendall_tau_b(&xs, &ys))?;
        out.push(SliceReport {
            slice: slice.name(),
            tau,
            mae: mae(&pairs)?,
            n: pairs.len(),
        });
    }
    Ok(EvalReport {
        method: method_name.to_string(),
        slices: out,
    })
}

/// Flattens an eval report into metric records.
pub fn eval_report_records(report: &EvalReport) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for slice in &report.slices {
        let (value, p_value) = match &slice.tau {
            TauOutcome::Defined { tau, p_value } => (Some(*tau), Some(*p_value)),
            TauOutcome::Undefined { .. } => (None, None),
        };
        out.push(MetricRecord {
            metric: format!("{}_tau", report.method),
            slice: slice.slice.clone(),
            value,
            p_value,
            n: slice.n,
        });
        out.push(MetricRecord {
            metric: format!("{}_mae", report.method),
            slice: slice.slice.clone(),
            value: Some(slice.mae),
            p_value: None,
            n: slice.n,
        });
    }
    out
}

/// Renders method-versus-reference reports as one aligned table, methods
/// down the rows, (tau, MAE) per slice across the columns.
pub fn render_eval_table(reports: &[EvalReport]) -> String {
    let slice_names: Vec<String> = reports
        .first()
        .map(|r| r.slices.iter().map(|s| s.slice.clone()).collect())
        .unwrap_or_default();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string()];
    for name in &slice_names {
        header.push(format!("{name} tau"));
        header.push(format!("{name} mae"));
    }
    rows.push(header);
    for report in reports {
        let mut row = vec![report.method.clone()];
        for name in &slice_names {
            match report.slices.iter().find(|s| &s.slice == name) {
                Some(slice) => {
                    row.push(slice.tau.render());
                    row.push(format!("{:.1}", slice.mae));
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        rows.push(row);
    }
    render_table(&rows)
}

fn render_table(rows: &[Vec<String>]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let columns = rows[0].len();
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (index, row) in rows.iter().enumerate() {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.push('\n');
        if index == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (columns - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Agreement between one pair of experts across slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPairReport {
    /// 1-based expert column indices.
    pub experts: (usize, usize),
    pub slices: Vec<SliceReport>,
}

/// Tau and MAE between every pair of expert columns over the instances
/// they both rescaled. Requires a uniform expert count per reference.
pub fn expert_agreement(
    references: &[ReferenceScore],
    judgments: &[Judgment],
    slices: &[Slice],
) -> Result<Vec<ExpertPairReport>, ReportError> {
    if references.is_empty() {
        return Err(ReportError::NoReferences);
    }
    let n_experts = references[0].expert_scores.len();
    if n_experts < 2 {
        return Err(ReportError::TooFewExperts(n_experts));
    }
    for r in references {
        if r.expert_scores.len() != n_experts {
            return Err(ReportError::RaggedExperts {
                annotator: r.annotator.clone(),
                item_id: r.item_id.clone(),
                expected: n_experts,
                got: r.expert_scores.len(),
            });
        }
    }
    let labels = label_lookup(judgments);
    let mut sorted: Vec<&ReferenceScore> = references.iter().collect();
    sorted.sort_by(|a, b| (&a.item_id, &a.annotator).cmp(&(&b.item_id, &b.annotator)));

    let mut out = Vec::new();
    for a in 0..n_experts {
        for b in a + 1..n_experts {
            let mut slice_reports = Vec::new();
            for &slice in slices {
                let pairs: Vec<(f64, f64)> = sorted
                    .iter()
                    .filter(|r| {
                        labels
                            .get(&r.key())
                            .is_some_and(|label| slice.admits(*label))
                    })
                    .map(|r| (r.expert_scores[a] as f64, r.expert_scores[b] as f64))
                    .collect();
                if pairs.is_empty() {
                    return Err(ReportError::EmptySlice(slice.name()));
                }
                let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                slice_reports.push(SliceReport {
                    slice: slice.name(),
                    tau: TauOutcome::from_result(kendall_tau_b(&xs, &ys))?,
                    mae: mae(&pairs)?,
                    n: pairs.len(),
                });
            }
            out.push(ExpertPairReport {
                experts: (a + 1, b + 1),
                slices: slice_reports,
            });
        }
    }
    Ok(out)
}

/// Per-pair change in tau between the label view and the rescaled view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShift {
    pub annotators: (String, String),
    pub pre_tau: Option<f64>,
    pub post_tau: Option<f64>,
    pub delta: Option<f64>,
}

/// Pairwise-aggregate tau on the original labels versus on rescaled
/// scores, with per-pair deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementShift {
    pub pre: PairwiseAggregate,
    pub post: PairwiseAggregate,
    pub pair_shifts: Vec<PairShift>,
}

/// Compares annotator agreement before rescaling (label ranks) and after
/// (the given scores). Both views must cover exactly the same
/// (annotator, item) pairs.
pub fn agreement_shift(
    judgments: &[Judgment],
    scores: &[ScoredJudgment],
    min_overlap: usize,
) -> Result<AgreementShift, ReportError> {
    let judged: BTreeMap<(&str, &str), f64> = judgments
        .iter()
        .map(|j| (j.key(), f64::from(j.label.rank())))
        .collect();
    let scored: BTreeMap<(&str, &str), f64> =
        scores.iter().map(|s| (s.key(), s.score)).collect();
    for key in judged.keys() {
        if !scored.contains_key(key) {
            return Err(ReportError::CoverageMismatch {
                annotator: key.0.to_string(),
                item_id: key.1.to_string(),
            });
        }
    }
    for key in scored.keys() {
        if !judged.contains_key(key) {
            return Err(ReportError::CoverageMismatch {
                annotator: key.0.to_string(),
                item_id: key.1.to_string(),
            });
        }
    }

    let pre_map = metrics::scores_by_annotator(
        judged.iter().map(|(&(a, i), &v)| (a, i, v)),
    );
    let post_map = metrics::scores_by_annotator(
        scored.iter().map(|(&(a, i), &v)| (a, i, v)),
    );
    let pre = pairwise_aggregate_tau(&pre_map, min_overlap)?;
    let post = pairwise_aggregate_tau(&post_map, min_overlap)?;

    let tau_of = |status: &PairStatus| match status {
        PairStatus::Included { tau, .. } => Some(*tau),
        _ => None,
    };
    let pair_shifts = pre
        .pairs
        .iter()
        .zip(post.pairs.iter())
        .map(|(p, q)| {
            debug_assert_eq!(p.annotators, q.annotators);
            let pre_tau = tau_of(&p.status);
            let post_tau = tau_of(&q.status);
            PairShift {
                annotators: p.annotators.clone(),
                pre_tau,
                post_tau,
                delta: pre_tau.zip(post_tau).map(|(a, b)| b - a),
            }
        })
        .collect();
    Ok(AgreementShift {
        pre,
        post,
        pair_shifts,
    })
}

/// Mean score per original label with ordering diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelMeans {
    pub rows: Vec<LabelMeanRow>,
    /// Adjacent present-label pairs where the mean decreases with the
    /// label order.
    pub order_violations: Vec<(LikertLabel, LikertLabel)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeanRow {
    pub label: LikertLabel,
    pub mean: f64,
    pub n: usize,
}

/// Per-label mean of rescaled scores. Labels without scores are omitted;
/// any violation of the label-order monotonicity among present labels is
/// flagged, not corrected.
pub fn avg_score_per_label(
    scores: &[ScoredJudgment],
    judgments: &[Judgment],
) -> Result<PerLabelMeans, ReportError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput.into());
    }
    let labels = label_lookup(judgments);
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for score in scores {
        if let Some(label) = labels.get(&score.key()) {
            sums[label.rank() as usize] += score.score;
            counts[label.rank() as usize] += 1;
        }
    }
    let rows: Vec<LabelMeanRow> = LikertLabel::ALL
        .iter()
        .filter(|l| counts[l.rank() as usize] > 0)
        .map(|&label| LabelMeanRow {
            label,
            mean: sums[label.rank() as usize] / counts[label.rank() as usize] as f64,
            n: counts[label.rank() as usize],
        })
        .collect();
    let order_violations = rows
        .windows(2)
        .filter(|w| w[0].mean > w[1].mean)
        .map(|w| (w[0].label, w[1].label))
        .collect();
    Ok(PerLabelMeans {
        rows,
        order_violations,
    })
}

/// One rescaling run inside a stability report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub run_id: String,
    pub avg_score: f64,
    pub tau: Option<TauOutcome>,
    pub mae: Option<f64>,
    pub failures: usize,
}

/// Min-to-max spread of a column across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

fn spread(values: impl Iterator<Item = f64>) -> Option<Spread> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Spread {
        min,
        max,
        range: max - min,
    })
}

/// Repeated-run report: one row per completed run plus spreads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: Vec<StabilityRow>,
    pub avg_score_spread: Option<Spread>,
    pub tau_spread: Option<Spread>,
    pub mae_spread: Option<Spread>,
}

/// Rescales the bundle `n_runs` times with distinct run ids and reports
/// per-run average score plus overall tau and MAE against the bundle's
/// references. The backend factory builds a fresh backend per run;
/// stability is meaningless against a read-through cache, so live
/// backends should be constructed in write-only cache mode with a
/// run-scoped cache directory for audit.
#[allow(clippy::too_many_arguments)]
pub fn stability_run(
    backend_for_run: &dyn Fn(usize) -> Result<Box<dyn ScoringBackend>, String>,
    templates: &PromptTemplates,
    bundle: &DatasetBundle,
    rubric: &Rubric,
    variant: PromptVariant,
    policy: &RescalePolicy,
    n_runs: usize,
    run_id_prefix: &str,
    concurrency: usize,
) -> Result<StabilityReport, ReportError> {
    let mut runs = Vec::new();
    for run in 1..=n_runs {
        let backend = backend_for_run(run).map_err(|message| ReportError::StabilityBackend {
            run,
            message,
        })?;
        let run_id = format!("{run_id_prefix}-{run}");
        let outcome = rescale_bundle(
            backend.as_ref(),
            templates,
            bundle,
            rubric,
            variant,
            policy,
            &run_id,
            concurrency,
        );
        let avg_score = if outcome.scores.is_empty() {
            f64::NAN
        } else {
            outcome.scores.iter().map(|s| s.score).sum::<f64>() / outcome.scores.len() as f64
        };
        let (tau, run_mae) = match &bundle.references {
            Some(references) if !references.is_empty() => {
                let pairs = slice_pairs(
                    &outcome.scores,
                    references,
                    &bundle.judgments,
                    Slice::Overall,
                );
                if pairs.is_empty() {
                    (None, None)
                } else {
                    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                    (
                        Some(TauOutcome::from_result(kendall_tau_b(&xs, &ys))?),
                        Some(mae(&pairs)?),
                    )
                }
            }
            _ => (None, None),
        };
        runs.push(StabilityRow {
            run_id,
            avg_score,
            tau,
            mae: run_mae,
            failures: outcome.failures.len(),
        });
    }
    Ok(StabilityReport {
        avg_score_spread: spread(runs.iter().map(|r| r.avg_score).filter(|v| v.is_finite())),
        tau_spread: spread(
            runs.iter()
                .filter_map(|r| r.tau.as_ref().and_then(|t| t.defined()).map(|(t, _)| t)),
        ),
        mae_spread: spread(runs.iter().filter_map(|r| r.mae)),
        runs,
    })
}

/// Renders a stability report as an aligned table plus spread lines.
pub fn render_stability_table(report: &StabilityReport) -> String {
    let mut rows = vec![vec![
        "run".to_string(),
        "avg score".to_string(),
        "tau".to_string(),
        "mae".to_string(),
        "failures".to_string(),
    ]];
    for run in &report.runs {
        rows.push(vec![
            run.run_id.clone(),
            format!("{:.2}", run.avg_score),
            run.tau.as_ref().map_or("-".into(), TauOutcome::render),
            run.mae.map_or("-".into(), |m| format!("{m:.2}")),
            run.failures.to_string(),
        ]);
    }
    let mut out = render_table(&rows);
    let mut line = String::new();
    if let Some(s) = report.avg_score_spread {
        let _ = write!(line, "avg score range {:.3}", s.range);
    }
    if let Some(s) = report.tau_spread {
        let _ = write!(line, "  tau range {:.3}", s.range);
    }
    if let Some(s) = report.mae_spread {
        let _ = write!(line, "  mae range {:.3}", s.range);
    }
    if !line.is_empty() {
        out.push_str(line.trim_start());
        out.push('\n');
    }
    out
}

/// (label, score) points behind the score-distribution figures, one per
/// scored judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub item_id: String,
    pub annotator: String,
    pub label: LikertLabel,
    pub score: f64,
    pub method: String,
}

/// Joins scores with their judgments' labels for plotting elsewhere.
pub fn score_points(scores: &[ScoredJudgment], judgments: &[Judgment]) -> Vec<ScorePoint> {
    let labels = label_lookup(judgments);
    let mut points: Vec<ScorePoint> = scores
        .iter()
        .filter_map(|s| {
            labels.get(&s.key()).map(|&label| ScorePoint {
                item_id: s.item_id.clone(),
                annotator: s.annotator.clone(),
                label,
                score: s.score,
                method: s.method.to_string(),
            })
        })
        .collect();
    points.sort_by(|a, b| {
        (&a.item_id, &a.annotator, &a.method).cmp(&(&b.item_id, &b.annotator, &b.method))
    });
    points
}
