//! Rescaling prompt construction.
//!
//! Prompts are rendered from editable text templates with named
//! placeholders; the golden copies live in `templates/` and are compiled
//! in as the defaults. A prompt carries, in order: the aspect definition,
//! the scoring scale, the full article with numbered sentences, the
//! question and machine answer, the annotator's feedback (explanation
//! verbatim plus the missing-sentence list), the Likert label's
//! definition, the deduction rules when the rubric variant is selected,
//! and a closing instruction to answer with a single number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Judgment, LikertLabel, QAItem, Rubric, SentenceDocument};

pub const WITH_RUBRIC_TEMPLATE: &str = include_str!("../templates/rescale_with_rubric.txt");
pub const WITHOUT_RUBRIC_TEMPLATE: &str = include_str!("../templates/rescale_without_rubric.txt");
const LABEL_DEFINITIONS_JSON: &str = include_str!("../templates/label_definitions.json");

/// Whether the prompt includes the rubric's deduction rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    WithRubric,
    WithoutRubric,
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptVariant::WithRubric => f.write_str("with_rubric"),
            PromptVariant::WithoutRubric => f.write_str("without_rubric"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template references unknown placeholder '{{{0}}}'")]
    UnknownPlaceholder(String),
    #[error("unclosed '{{' in template")]
    UnclosedPlaceholder,
    #[error("no definition configured for label '{0}'")]
    MissingLabelDefinition(LikertLabel),
    #[error("failed to read template file: {0}")]
    TemplateFile(String),
}

/// One sentence per Likert label, spliced into the prompt. These are
/// configuration: the compiled-in table can be replaced by any file with
/// the same shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDefinitions(BTreeMap<LikertLabel, String>);

impl LabelDefinitions {
    pub fn get(&self, label: LikertLabel) -> Result<&str, PromptError> {
        self.0
            .get(&label)
            .map(String::as_str)
            .ok_or(PromptError::MissingLabelDefinition(label))
    }
}

impl Default for LabelDefinitions {
    fn default() -> Self {
        serde_json::from_str(LABEL_DEFINITIONS_JSON)
            .expect("compiled-in label definitions are valid")
    }
}

/// The pair of prompt templates plus the label-definition table.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub with_rubric: String,
    pub without_rubric: String,
    pub label_definitions: LabelDefinitions,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            with_rubric: WITH_RUBRIC_TEMPLATE.to_string(),
            without_rubric: WITHOUT_RUBRIC_TEMPLATE.to_string(),
            label_definitions: LabelDefinitions::default(),
        }
    }
}

impl PromptTemplates {
    /// Loads `rescale_with_rubric.txt`, `rescale_without_rubric.txt` and
    /// `label_definitions.json` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PromptError::TemplateFile(format!("{}: {e}", dir.join(name).display())))
        };
        let label_definitions: LabelDefinitions =
            serde_json::from_str(&read("label_definitions.json")?)
                .map_err(|e| PromptError::TemplateFile(format!("label_definitions.json: {e}")))?;
        Ok(PromptTemplates {
            with_rubric: read("rescale_with_rubric.txt")?,
            without_rubric: read("rescale_without_rubric.txt")?,
            label_definitions,
        })
    }

    fn template(&self, variant: PromptVariant) -> &str {
        match variant {
            PromptVariant::WithRubric => &self.with_rubric,
            PromptVariant::WithoutRubric => &self.without_rubric,
        }
    }
}

/// A judgment joined with the item and article it refers to.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub document: &'a SentenceDocument,
    pub item: &'a QAItem,
    pub judgment: &'a Judgment,
}

/// Feedback block: the explanation verbatim followed by the annotator's
/// missing-sentence list, with an explicit "none" marker when empty.
pub fn render_feedback(judgment: &Judgment) -> String {
    let missing = if judgment.missing_sentences.is_empty() {
        "none".to_string()
    } else {
        judgment
            .missing_sentences
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!("{}\nMissing sentences: {missing}", judgment.explanation)
}

/// Deduction rules rendered one per line, in rubric order.
pub fn render_rules(rubric: &Rubric) -> String {
    rubric
        .rules
        .iter()
        .map(|rule| format!("- {}: deduct {} points", rule.desc, rule.points))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-pass `{name}` substitution. Placeholder values are inserted
/// as-is and never re-scanned, so braces inside article or explanation
/// text cannot trigger further substitution. `{{` and `}}` are literal
/// braces.
fn render_template(
    template: &str,
    vars: &BTreeMap<&str, &str>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.char_indices().peekable();
    while let Some((start, ch)) = chars.next() {
        match ch {
            '{' => {
                if matches!(chars.peek(), Some((_, '{'))) {
                    chars.next();
                    out.push('{');
                    continue;
                }
                let mut end = None;
                for (i, c) in chars.by_ref() {
                    if c == '}' {
                        end = Some(i);
                        break;
                    }
                }
                let end = end.ok_or(PromptError::UnclosedPlaceholder)?;
                let name = &template[start + 1..end];
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(PromptError::UnknownPlaceholder(name.to_string())),
                }
            }
            '}' => {
                if matches!(chars.peek(), Some((_, '}'))) {
                    chars.next();
                }
                out.push('}');
            }
            _ => out.push(ch),
        }
    }
    Ok(out)
}

/// Builds the rescaling prompt for one judgment. Pure: the same inputs
/// always produce the same text.
pub fn build_rescale_prompt(
    templates: &PromptTemplates,
    ctx: &PromptContext<'_>,
    rubric: &Rubric,
    variant: PromptVariant,
) -> Result<String, PromptError> {
    let article = ctx.document.numbered_text();
    let feedback = render_feedback(ctx.judgment);
    let label_definition = templates.label_definitions.get(ctx.judgment.label)?;
    let rules = render_rules(rubric);
    let scale_min = rubric.scale_min().to_string();
    let scale_max = rubric.scale_max().to_string();

    let mut vars: BTreeMap<&str, &str> = BTreeMap::new();
    vars.insert("aspect", &rubric.aspect);
    vars.insert("aspect_definition", &rubric.definition);
    vars.insert("scale_min", &scale_min);
    vars.insert("scale_max", &scale_max);
    vars.insert("article", &article);
    vars.insert("question", &ctx.item.question);
    vars.insert("answer", &ctx.item.answer);
    vars.insert("feedback", &feedback);
    vars.insert("label_definition", label_definition);
    if variant == PromptVariant::WithRubric {
        vars.insert("rubric", &rules);
    }

    render_template(templates.template(variant), &vars)
}
