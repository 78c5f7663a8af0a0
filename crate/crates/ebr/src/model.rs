//! Core data model: documents, QA items, judgments, rubrics and scores.
//!
//! All types are immutable after construction and safe to share across
//! threads. Sentence indices are 1-based everywhere outside this crate,
//! matching the numbering annotators see and quote in their explanations.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Which question set a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSplit {
    Inquisitive,
    Extended,
}

/// An article split into sentences. Sentences are addressed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceDocument {
    pub id: String,
    pub split: SourceSplit,
    pub sentences: Vec<String>,
}

impl SentenceDocument {
    /// Number of sentences in the article.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Renders the article with 1-based sentence numbers, one per line.
    pub fn numbered_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("{}. {}", i + 1, s));
        }
        out
    }
}

/// The system that produced an answer under evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum AnswerSystem {
    Davinci,
    Davinci003,
    Gpt4,
    ExpertHuman,
    Other(String),
}

impl From<String> for AnswerSystem {
    fn from(s: String) -> Self {
        match s.as_str() {
            "davinci" => AnswerSystem::Davinci,
            "davinci_003" => AnswerSystem::Davinci003,
            "gpt4" => AnswerSystem::Gpt4,
            "expert_human" => AnswerSystem::ExpertHuman,
            _ => AnswerSystem::Other(s),
        }
    }
}

impl From<AnswerSystem> for String {
    fn from(s: AnswerSystem) -> Self {
        s.to_string()
    }
}

impl fmt::Display for AnswerSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerSystem::Davinci => f.write_str("davinci"),
            AnswerSystem::Davinci003 => f.write_str("davinci_003"),
            AnswerSystem::Gpt4 => f.write_str("gpt4"),
            AnswerSystem::ExpertHuman => f.write_str("expert_human"),
            AnswerSystem::Other(s) => f.write_str(s),
        }
    }
}

/// A question anchored to a document sentence plus the system answer
/// being judged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub doc_id: String,
    pub question: String,
    /// 1-based index of the sentence the question is anchored to.
    pub anchor: usize,
    pub answer: String,
    pub system: AnswerSystem,
}

/// Ordinal completeness label. The variant order is the label order and
/// is relied on by every rank statistic in this crate:
/// `missing_all < missing_major < missing_minor < complete`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikertLabel {
    MissingAll,
    MissingMajor,
    MissingMinor,
    Complete,
}

impl LikertLabel {
    /// All labels in ascending order.
    pub const ALL: [LikertLabel; 4] = [
        LikertLabel::MissingAll,
        LikertLabel::MissingMajor,
        LikertLabel::MissingMinor,
        LikertLabel::Complete,
    ];

    /// Rank within the label order, 0 (missing_all) to 3 (complete).
    pub fn rank(self) -> u8 {
        match self {
            LikertLabel::MissingAll => 0,
            LikertLabel::MissingMajor => 1,
            LikertLabel::MissingMinor => 2,
            LikertLabel::Complete => 3,
        }
    }

    /// Stable wire name, identical to the serde representation.
    pub fn as_str(self) -> &'static str {
        match self {
            LikertLabel::MissingAll => "missing_all",
            LikertLabel::MissingMajor => "missing_major",
            LikertLabel::MissingMinor => "missing_minor",
            LikertLabel::Complete => "complete",
        }
    }
}

impl fmt::Display for LikertLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One annotator's verdict on one QA item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: String,
    pub annotator: String,
    pub label: LikertLabel,
    /// Faithfulness flag. Kept in the model, excluded from rescaling.
    pub correct: bool,
    pub explanation: String,
    /// 1-based indices of sentences the annotator marked missing.
    #[serde(default)]
    pub missing_sentences: BTreeSet<usize>,
}

impl Judgment {
    /// `(annotator, item_id)` key that must be unique within a dataset.
    pub fn key(&self) -> (&str, &str) {
        (&self.annotator, &self.item_id)
    }
}

/// One point-deduction rule of a scoring rubric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeductionRule {
    pub desc: String,
    pub points: u32,
}

/// Aspect definition, scale bounds and ordered deduction rules that
/// anchor scores on the scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub aspect: String,
    pub definition: String,
    /// `[scale_min, scale_max]`.
    pub scale: [i64; 2],
    pub rules: Vec<DeductionRule>,
    /// Flat per-missing-sentence deduction used by the deterministic
    /// oracle backend. Not part of the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sentence_deduction: Option<u32>,
}

impl Rubric {
    pub fn scale_min(&self) -> i64 {
        self.scale[0]
    }

    pub fn scale_max(&self) -> i64 {
        self.scale[1]
    }

    /// Checks the rubric's own invariants. Returns human-readable
    /// problems, empty when the rubric is well-formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.scale_min() >= self.scale_max() {
            out.push(format!(
                "scale_min ({}) must be below scale_max ({})",
                self.scale_min(),
                self.scale_max()
            ));
        }
        let width = (self.scale_max() - self.scale_min()).max(0);
        for (i, rule) in self.rules.iter().enumerate() {
            if i64::from(rule.points) > width {
                out.push(format!(
                    "rule {} deducts {} points, more than the scale width {}",
                    i + 1,
                    rule.points,
                    width
                ));
            }
        }
        out
    }
}

/// How a score was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ebr,
    EbrNoRubric,
    Static,
    AvgEbr,
    Msh,
    Reference,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ebr => "ebr",
            Method::EbrNoRubric => "ebr_no_rubric",
            Method::Static => "static",
            Method::AvgEbr => "avg_ebr",
            Method::Msh => "msh",
            Method::Reference => "reference",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A judgment plus its numeric score and provenance.
///
/// Backend-path scores are integral; `avg_ebr` stores real-valued
/// mapped scores, so the field is a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredJudgment {
    pub item_id: String,
    pub annotator: String,
    pub method: Method,
    pub backend: String,
    pub run_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl ScoredJudgment {
    pub fn key(&self) -> (&str, &str) {
        (&self.annotator, &self.item_id)
    }
}

/// Expert rescalings of one judgment. The reference score is the mean
/// of the per-expert scores, equal weight, no outlier rejection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub item_id: String,
    pub annotator: String,
    pub expert_scores: Vec<i64>,
}

impl ReferenceScore {
    pub fn key(&self) -> (&str, &str) {
        (&self.annotator, &self.item_id)
    }

    /// Arithmetic mean of the expert scores.
    pub fn mean_score(&self) -> f64 {
        debug_assert!(!self.expert_scores.is_empty());
        self.expert_scores.iter().sum::<i64>() as f64 / self.expert_scores.len() as f64
    }
}

/// One problem found by validation, with where it was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// All invariant violations found in a dataset. Errors block loading;
/// warnings do not.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ValidationIssue {
            location: location.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(ValidationIssue {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(
            f,
            "{} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        )
    }
}

/// Checks every type invariant over a parsed dataset and reports all
/// violations. Pure: the same input always yields the same report, and
/// nothing is mutated or rejected here — callers decide what to do with
/// errors.
pub fn validate_dataset(
    documents: &[SentenceDocument],
    items: &[QAItem],
    judgments: &[Judgment],
    references: Option<&[ReferenceScore]>,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut docs_by_id: HashMap<&str, &SentenceDocument> = HashMap::new();
    for doc in documents {
        let loc = format!("document '{}'", doc.id);
        if docs_by_id.insert(&doc.id, doc).is_some() {
            report.error(&loc, "duplicate document id");
        }
        if doc.sentences.is_empty() {
            report.error(&loc, "document has no sentences");
        }
        for (i, s) in doc.sentences.iter().enumerate() {
            if s.trim().is_empty() {
                report.error(&loc, format!("sentence {} is empty", i + 1));
            }
        }
    }

    let mut items_by_id: HashMap<&str, &QAItem> = HashMap::new();
    for item in items {
        let loc = format!("item '{}'", item.id);
        if items_by_id.insert(&item.id, item).is_some() {
            report.error(&loc, "duplicate item id");
        }
        match docs_by_id.get(item.doc_id.as_str()) {
            None => report.error(&loc, format!("references unknown document '{}'", item.doc_id)),
            Some(doc) => {
                if item.anchor == 0 || item.anchor > doc.len() {
                    report.error(
                        &loc,
                        format!(
                            "anchor sentence {} out of bounds (document has {} sentences)",
                            item.anchor,
                            doc.len()
                        ),
                    );
                }
            }
        }
        if item.answer.trim().is_empty() {
            report.error(&loc, "answer text is empty");
        }
        if item.question.trim().is_empty() {
            report.error(&loc, "question text is empty");
        }
    }

    let mut seen_judgments: HashSet<(&str, &str)> = HashSet::new();
    for judgment in judgments {
        let loc = format!(
            "judgment (annotator='{}', item='{}')",
            judgment.annotator, judgment.item_id
        );
        if !seen_judgments.insert(judgment.key()) {
            report.error(&loc, "duplicate judgment for this (annotator, item) pair");
        }
        match items_by_id.get(judgment.item_id.as_str()) {
            None => report.error(
                &loc,
                format!("references unknown item '{}'", judgment.item_id),
            ),
            Some(item) => {
                if let Some(doc) = docs_by_id.get(item.doc_id.as_str()) {
                    for &idx in &judgment.missing_sentences {
                        if idx == 0 || idx > doc.len() {
                            report.error(
                                &loc,
                                format!(
                                    "missing-sentence index {} out of bounds (document has {} sentences)",
                                    idx,
                                    doc.len()
                                ),
                            );
                        }
                    }
                }
            }
        }
        if judgment.label == LikertLabel::Complete && !judgment.missing_sentences.is_empty() {
            report.warn(
                &loc,
                "label is 'complete' but missing sentences are listed",
            );
        }
    }

    if let Some(references) = references {
        let mut seen_refs: HashSet<(&str, &str)> = HashSet::new();
        for reference in references {
            let loc = format!(
                "reference (annotator='{}', item='{}')",
                reference.annotator, reference.item_id
            );
            if !seen_refs.insert(reference.key()) {
                report.error(&loc, "duplicate reference for this (annotator, item) pair");
            }
            if !seen_judgments.contains(&reference.key()) {
                report.error(&loc, "no judgment with this (annotator, item) pair");
            }
            if reference.expert_scores.is_empty() {
                report.error(&loc, "expert score list is empty");
            }
            for &s in &reference.expert_scores {
                if !(0..=100).contains(&s) {
                    report.error(&loc, format!("expert score {s} outside [0, 100]"));
                }
            }
        }
    }

    if judgments.is_empty() {
        report.warn("dataset", "no judgments");
    }

    report
}
