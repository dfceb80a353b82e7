//! Dataset ingestion and the jsonl normal form.
//!
//! jsonl is the internal shape: one `{id, question, context, answers}`
//! object per line. SQuAD v1.1 files are converted on ingest. Records with
//! an empty question or context are skipped and counted rather than
//! aborting the run; duplicate ids abort with the full list.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tsas_core::QaExample;

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetFormat {
    /// SQuAD v1.1 structure: data → paragraphs → qas with `answers[].text`.
    SquadJson,
    /// One `{id, question, context, answers}` object per line.
    Jsonl,
}

/// A dataset reference as the CLI sees it.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub format: DatasetFormat,
    pub path: PathBuf,
    pub split: Option<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("cannot parse `{path}`: {message}")]
    Json { path: PathBuf, message: String },
    #[error("duplicate example ids: {}", ids.join(", "))]
    DuplicateIds { ids: Vec<String> },
}

/// Parsed examples plus the count of rejected empty records.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub examples: Vec<QaExample>,
    pub rejected_empty: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
    context: String,
    #[serde(default)]
    answers: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    #[allow(dead_code)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    #[serde(default)]
    id: Option<String>,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
}

/// Stable fallback id for records without one: an FNV-1a hash of the
/// question and context.
fn content_id(question: &str, context: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in [question.as_bytes(), &[0x1f], context.as_bytes()] {
        for &b in chunk {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("h{hash:016x}")
}

pub fn ingest(file: &DatasetFile) -> Result<IngestOutcome, IngestError> {
    let outcome = match file.format {
        DatasetFormat::Jsonl => ingest_jsonl(&file.path)?,
        DatasetFormat::SquadJson => ingest_squad(&file.path)?,
    };
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in &outcome.examples {
        *seen.entry(ex.id.as_str()).or_insert(0) += 1;
    }
    let dupes: Vec<String> = seen
        .into_iter()
        .filter(|(_, count)| *count > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    if !dupes.is_empty() {
        return Err(IngestError::DuplicateIds { ids: dupes });
    }
    Ok(outcome)
}

fn ingest_jsonl(path: &Path) -> Result<IngestOutcome, IngestError> {
    let raw = fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut examples = Vec::new();
    let mut rejected_empty = 0;
    for (index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(line).map_err(|e| IngestError::Line {
            path: path.to_path_buf(),
            line: index + 1,
            message: e.to_string(),
        })?;
        if record.question.trim().is_empty() || record.context.trim().is_empty() {
            rejected_empty += 1;
            continue;
        }
        let id = record
            .id
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| content_id(&record.question, &record.context));
        let example = QaExample::new(id, record.question, record.context, record.answers)
            .expect("emptiness checked above");
        examples.push(example);
    }
    Ok(IngestOutcome { examples, rejected_empty })
}

fn ingest_squad(path: &Path) -> Result<IngestOutcome, IngestError> {
    let raw = fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let parsed: SquadFile = serde_json::from_str(&raw).map_err(|e| IngestError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut examples = Vec::new();
    let mut rejected_empty = 0;
    for article in parsed.data {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                if qa.question.trim().is_empty() || paragraph.context.trim().is_empty() {
                    rejected_empty += 1;
                    continue;
                }
                let id = qa
                    .id
                    .filter(|id| !id.is_empty())
                    .unwrap_or_else(|| content_id(&qa.question, &paragraph.context));
                let answers = qa.answers.into_iter().map(|a| a.text).collect();
                let example = QaExample::new(id, qa.question, paragraph.context.clone(), answers)
                    .expect("emptiness checked above");
                examples.push(example);
            }
        }
    }
    Ok(IngestOutcome { examples, rejected_empty })
}

/// Write examples in the jsonl normal form. `ingest` of the output
/// reproduces the input exactly.
pub fn write_jsonl(examples: &[QaExample], path: &Path) -> Result<(), IngestError> {
    let file = fs::File::create(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut writer = BufWriter::new(file);
    for ex in examples {
        let record = JsonlRecord {
            id: Some(ex.id.clone()),
            question: ex.question.clone(),
            context: ex.document.clone(),
            answers: ex.gold_answers.clone(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(writer, "{line}")
            .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    }
    writer
        .flush()
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    prediction: String,
}

/// Read a `{id, prediction}` jsonl file, e.g. a run directory's
/// predictions or an external system's output.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>, IngestError> {
    let raw = fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut predictions = BTreeMap::new();
    for (index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(line).map_err(|e| IngestError::Line {
                path: path.to_path_buf(),
                line: index + 1,
                message: e.to_string(),
            })?;
        predictions.insert(record.id, record.prediction);
    }
    Ok(predictions)
}

/// Write predictions in the same `{id, prediction}` shape.
pub fn write_predictions(
    predictions: &BTreeMap<String, String>,
    path: &Path,
) -> Result<(), IngestError> {
    let file = fs::File::create(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut writer = BufWriter::new(file);
    for (id, prediction) in predictions {
        let record = PredictionRecord { id: id.clone(), prediction: prediction.clone() };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(writer, "{line}")
            .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    }
    writer
        .flush()
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}
