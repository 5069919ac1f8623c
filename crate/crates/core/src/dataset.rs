//! Dataset ingestion: line-delimited JSON records or a single JSON array.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::parse_locale;
use crate::types::{McqOption, Question, QuestionError, Track};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{at}: malformed record: {message}")]
    Malformed { at: String, message: String },
    #[error("{at}: field `{field}`: {message}")]
    Field {
        at: String,
        field: &'static str,
        message: String,
    },
    #[error("{at}: no locale token in id {id:?}")]
    Locale { at: String, id: String },
    #[error("{at}: question {id:?}: {source}")]
    Invalid {
        at: String,
        id: String,
        #[source]
        source: QuestionError,
    },
}

/// On-disk shape of one dataset record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub track: Track,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<McqOption>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl From<&Question> for DatasetRecord {
    fn from(q: &Question) -> Self {
        Self {
            id: q.id.clone(),
            question: q.text.clone(),
            track: q.track,
            options: (!q.options.is_empty()).then(|| q.options.clone()),
            references: (!q.references.is_empty()).then(|| q.references.clone()),
            gold: q.gold_label.clone(),
        }
    }
}

fn into_question(rec: DatasetRecord, track: Track, at: String) -> Result<Question, DatasetError> {
    if rec.track != track {
        return Err(DatasetError::Field {
            at,
            field: "track",
            message: format!("expected {track}, found {}", rec.track),
        });
    }
    let locale = parse_locale(&rec.id).map_err(|_| DatasetError::Locale {
        at: at.clone(),
        id: rec.id.clone(),
    })?;
    let q = Question {
        id: rec.id,
        locale,
        text: rec.question,
        track: rec.track,
        options: rec.options.unwrap_or_default(),
        references: rec.references.unwrap_or_default(),
        gold_label: rec.gold,
    };
    q.validate().map_err(|source| DatasetError::Invalid {
        at,
        id: q.id.clone(),
        source,
    })?;
    Ok(q)
}

fn field_error(at: String, err: &serde_json::Error) -> DatasetError {
    let msg = err.to_string();
    // serde reports the offending field in backticks
    let field = ["id", "question", "track", "options", "references", "gold"]
        .into_iter()
        .find(|f| msg.contains(&format!("`{f}`")));
    match field {
        Some(field) => DatasetError::Field { at, field, message: msg },
        None => DatasetError::Malformed { at, message: msg },
    }
}

/// Parses dataset text. Input order is preserved.
pub fn parse_questions(text: &str, track: Track) -> Result<Vec<Question>, DatasetError> {
    let trimmed = text.trim_start_matches('\u{feff}').trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<serde_json::Value> =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Malformed {
                at: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        return values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let at = format!("record {}", i + 1);
                let rec: DatasetRecord =
                    serde_json::from_value(v).map_err(|e| field_error(at.clone(), &e))?;
                into_question(rec, track, at)
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("line {}", i + 1);
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| field_error(at.clone(), &e))?;
        out.push(into_question(rec, track, at)?);
    }
    Ok(out)
}

pub fn load_questions(path: &Path, track: Track) -> Result<Vec<Question>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_questions(&text, track)
}

/// Serializes questions as line-delimited records.
pub fn write_questions<W: Write>(mut w: W, questions: &[Question]) -> std::io::Result<()> {
    for q in questions {
        serde_json::to_writer(&mut w, &DatasetRecord::from(q))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
