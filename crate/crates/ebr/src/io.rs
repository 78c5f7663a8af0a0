//! Dataset persistence: line-delimited record files, one entity kind per
//! file, plus a structured rubric document.
//!
//! A data directory holds `documents.jsonl`, `items.jsonl`,
//! `judgments.jsonl` and optionally `references.jsonl`. Scores are
//! written to standalone `scores.jsonl` files. Unknown extra fields in
//! records are ignored; missing required fields are parse errors.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    validate_dataset, Judgment, QAItem, ReferenceScore, Rubric, ScoredJudgment, SentenceDocument,
    ValidationReport,
};

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const REFERENCES_FILE: &str = "references.jsonl";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: parse error: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("rubric file {path} is not usable: {problems:?}")]
    BadRubric { path: PathBuf, problems: Vec<String> },
}

/// A fully cross-linked dataset. Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetBundle {
    pub documents: Vec<SentenceDocument>,
    pub items: Vec<QAItem>,
    pub judgments: Vec<Judgment>,
    pub references: Option<Vec<ReferenceScore>>,
}

impl DatasetBundle {
    /// Index of documents by id.
    pub fn document_index(&self) -> HashMap<&str, &SentenceDocument> {
        self.documents.iter().map(|d| (d.id.as_str(), d)).collect()
    }

    /// Index of items by id.
    pub fn item_index(&self) -> HashMap<&str, &QAItem> {
        self.items.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Runs all model invariants over the bundle.
    pub fn validate(&self) -> ValidationReport {
        validate_dataset(
            &self.documents,
            &self.items,
            &self.judgments,
            self.references.as_deref(),
        )
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), IoError> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record).expect("record serialization cannot fail");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a data directory without validating invariants. Used by the
/// `validate` command, which wants the full report rather than the first
/// error.
pub fn load_bundle_unchecked(dir: &Path) -> Result<DatasetBundle, IoError> {
    let documents = read_jsonl(&dir.join(DOCUMENTS_FILE))?;
    let items = read_jsonl(&dir.join(ITEMS_FILE))?;
    let judgments = read_jsonl(&dir.join(JUDGMENTS_FILE))?;
    let references_path = dir.join(REFERENCES_FILE);
    let references = if references_path.exists() {
        Some(read_jsonl(&references_path)?)
    } else {
        None
    };
    Ok(DatasetBundle {
        documents,
        items,
        judgments,
        references,
    })
}

/// Loads and validates a data directory. Fails if validation finds any
/// error; warnings are allowed through.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle, IoError> {
    let bundle = load_bundle_unchecked(dir)?;
    let report = bundle.validate();
    if !report.is_ok() {
        return Err(IoError::Validation(report));
    }
    Ok(bundle)
}

/// Writes a bundle back to a data directory, one file per entity kind.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    write_jsonl(&bundle.documents, &dir.join(DOCUMENTS_FILE))?;
    write_jsonl(&bundle.items, &dir.join(ITEMS_FILE))?;
    write_jsonl(&bundle.judgments, &dir.join(JUDGMENTS_FILE))?;
    if let Some(references) = &bundle.references {
        write_jsonl(references, &dir.join(REFERENCES_FILE))?;
    }
    Ok(())
}

/// Writes scores one record per line, sorted by (item id, annotator,
/// method) so that identical inputs produce byte-identical files.
pub fn save_scores(scores: &[ScoredJudgment], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&ScoredJudgment> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.item_id, &a.annotator, a.method.as_str()).cmp(&(
            &b.item_id,
            &b.annotator,
            b.method.as_str(),
        ))
    });
    let mut buf = Vec::new();
    for record in sorted {
        serde_json::to_writer(&mut buf, record).expect("record serialization cannot fail");
        buf.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IoError::File {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut file = fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&buf).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a `scores.jsonl` file.
pub fn load_scores(path: &Path) -> Result<Vec<ScoredJudgment>, IoError> {
    read_jsonl(path)
}

/// Loads a rubric document and rejects rubrics that violate their own
/// invariants.
pub fn load_rubric(path: &Path) -> Result<Rubric, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let rubric: Rubric = serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })?;
    let problems = rubric.problems();
    if !problems.is_empty() {
        return Err(IoError::BadRubric {
            path: path.to_path_buf(),
            problems,
        });
    }
    Ok(rubric)
}

/// Writes a rubric as an indented, human-editable document.
pub fn save_rubric(rubric: &Rubric, path: &Path) -> Result<(), IoError> {
    let mut text =
        serde_json::to_string_pretty(rubric).expect("rubric serialization cannot fail");
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
