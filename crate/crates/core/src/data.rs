//! Loaders for the FRANK, XSum hallucination, and DeFacto corpora, and the
//! normalized JSONL format every other component reads.
//!
//! # Normalized record schema
//!
//! One JSON object per line. The fields of [`DocumentSummaryPair`] appear at
//! top level (`id`, `article`, `input_summary`, `dataset`, and the optional
//! annotation fields), followed by:
//!
//! | field         | type                           | meaning                                 |
//! |---------------|--------------------------------|-----------------------------------------|
//! | `source_file` | string                         | file the record was read from           |
//! | `system`      | string, optional               | summarization system that produced it   |
//! | `human_score` | number in [0,1], optional      | fraction of sentences with an error     |
//! | `human_label` | `Faithful`/`Unfaithful`, opt.  | binarized human judgment                |
//! | `edit_pool`   | bool                           | whether the summary should be edited    |

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{binarize_human, summary_level_score, Dataset, DocumentSummaryPair, ErrorType, Faithfulness};
use crate::engine::normalize_whitespace;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: {location}: {message}")]
    Schema { file: String, location: String, message: String },
    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),
}

impl DataError {
    fn schema(file: &Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Schema { file: file.display().to_string(), location: location.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    #[serde(flatten)]
    pub pair: DocumentSummaryPair,
    pub source_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_label: Option<Faithfulness>,
    pub edit_pool: bool,
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::Io(path.display().to_string(), e))
}

/// Parses a JSON array, or JSON lines when the file does not start with `[`.
fn read_json_rows(path: &Path) -> Result<Vec<(String, Value)>, DataError> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        let rows: Vec<Value> =
            serde_json::from_str(&text).map_err(|e| DataError::schema(path, "file", e.to_string()))?;
        Ok(rows.into_iter().enumerate().map(|(i, v)| (format!("[{i}]"), v)).collect())
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let loc = format!("row {}", i + 1);
                serde_json::from_str(l)
                    .map(|v| (loc.clone(), v))
                    .map_err(|e| DataError::schema(path, loc, e.to_string()))
            })
            .collect()
    }
}

fn str_field<'a>(row: &'a Value, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| row.get(*n).and_then(Value::as_str))
}

fn id_field(row: &Value, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match row.get(*n)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn check_unique(path: &Path, records: &[NormalizedRecord]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.pair.id.as_str()) {
            return Err(DataError::schema(path, format!("id {}", r.pair.id), "duplicate id"));
        }
    }
    Ok(())
}

fn parse_dataset(s: &str) -> Option<Dataset> {
    let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    match key.as_str() {
        "cnndm" | "cnn" | "cnndailymail" => Some(Dataset::CnnDm),
        "xsum" | "bbc" => Some(Dataset::Xsum),
        "defacto" => Some(Dataset::Defacto),
        _ => None,
    }
}

/// Loads FRANK human annotations.
///
/// Each row needs `hash`, `model_name`, `article`, `summary` and
/// `summary_sentences_annotations`, a list with one object per summary
/// sentence mapping annotator ids to lists of error codes (`NoE` for none).
/// A sentence is labelled 1 when any annotator marked an error on it.
/// The partition comes from an optional `dataset`/`split` field, or else
/// from the id: XSum documents have numeric BBC ids.
pub fn load_frank(path: &Path) -> Result<Vec<NormalizedRecord>, DataError> {
    let source_file = path.display().to_string();
    let mut records = Vec::new();
    for (loc, row) in read_json_rows(path)? {
        let need = |names: &[&str]| {
            str_field(&row, names)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| DataError::schema(path, format!("{loc}.{}", names[0]), "missing or empty"))
        };
        let hash =
            id_field(&row, &["hash", "id"]).ok_or_else(|| DataError::schema(path, format!("{loc}.hash"), "missing"))?;
        let system = need(&["model_name", "system"])?.to_string();
        let article = need(&["article"])?.to_string();
        let summary = need(&["summary"])?.to_string();
        let dataset = match str_field(&row, &["dataset", "split", "partition"]).and_then(parse_dataset) {
            Some(d) => d,
            None if !hash.is_empty() && hash.chars().all(|c| c.is_ascii_digit()) => Dataset::Xsum,
            None => Dataset::CnnDm,
        };

        let annotations =
            row.get("summary_sentences_annotations").and_then(Value::as_array).filter(|a| !a.is_empty()).ok_or_else(
                || DataError::schema(path, format!("{loc}.summary_sentences_annotations"), "missing or empty list"),
            )?;
        let mut labels = Vec::with_capacity(annotations.len());
        let mut types = BTreeSet::new();
        for (si, sentence) in annotations.iter().enumerate() {
            let sloc = format!("{loc}.summary_sentences_annotations[{si}]");
            let by_annotator = sentence
                .as_object()
                .ok_or_else(|| DataError::schema(path, &sloc, "expected an object of annotator -> codes"))?;
            let mut has_error = false;
            for (annotator, codes) in by_annotator {
                let codes: Vec<&str> = match codes {
                    Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
                    Value::String(s) => vec![s.as_str()],
                    _ => {
                        return Err(DataError::schema(path, format!("{sloc}.{annotator}"), "expected a list of codes"))
                    }
                };
                for code in codes {
                    if ErrorType::is_no_error_code(code) {
                        continue;
                    }
                    let t: ErrorType = code.parse().map_err(|_| {
                        DataError::schema(path, format!("{sloc}.{annotator}"), format!("unknown error code {code:?}"))
                    })?;
                    types.insert(t);
                    has_error = true;
                }
            }
            labels.push(u8::from(has_error));
        }

        let score = summary_level_score(&labels).expect("labels are non-empty binary");
        let mut pair = DocumentSummaryPair::new(format!("{hash}:{system}"), article, summary, dataset);
        pair.sentence_labels = Some(labels);
        pair.gold_error_types = Some(types);
        pair.reference_summary = str_field(&row, &["reference", "reference_summary"]).map(str::to_string);
        let label = binarize_human(score.value()).expect("score is in range");
        records.push(NormalizedRecord {
            pair,
            source_file: source_file.clone(),
            system: Some(system),
            human_score: Some(score.value()),
            human_label: Some(label),
            edit_pool: label == Faithfulness::Unfaithful,
        });
    }
    check_unique(path, &records)?;
    Ok(records)
}

/// Hallucinated spans from three annotators and their token-level majority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    /// The summary text the annotators saw.
    pub summary: String,
    /// One entry per annotator, ordered by annotator id. Several spans from
    /// one annotator are joined with `" | "`.
    pub annotator_spans: Vec<Option<String>>,
    pub majority_span: Option<String>,
}

/// Byte ranges of whitespace-separated tokens.
pub fn whitespace_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// Longest run of tokens marked by at least two annotators; the earliest
/// run wins ties. Spans are byte ranges into `summary`.
pub fn majority_span(summary: &str, spans_by_annotator: &[Vec<(usize, usize)>]) -> Option<String> {
    let tokens = whitespace_tokens(summary);
    let votes: Vec<usize> = tokens
        .iter()
        .map(|&(ts, te)| spans_by_annotator.iter().filter(|spans| spans.iter().any(|&(s, e)| s < te && ts < e)).count())
        .collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < tokens.len() {
        if votes[i] < 2 {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && votes[i] >= 2 {
            i += 1;
        }
        if best.is_none_or(|(s, e)| i - start > e - s) {
            best = Some((start, i));
        }
    }
    best.map(|(s, e)| summary[tokens[s].0..tokens[e - 1].1].to_string())
}

#[derive(Debug, Deserialize)]
struct XsumRow {
    bbcid: String,
    system: String,
    summary: String,
    #[serde(default)]
    hallucination_type: Option<String>,
    #[serde(default)]
    hallucinated_span: Option<String>,
    #[serde(default)]
    hallucinated_span_start: Option<String>,
    #[serde(default)]
    hallucinated_span_end: Option<String>,
    worker_id: String,
}

fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices().nth(char_idx).map_or(text.len(), |(b, _)| b)
}

/// Byte range of the annotated span, preferring a literal match of the span
/// text nearest the stated start offset, then the offsets themselves
/// (0-based character positions, end exclusive).
fn locate_span(row: &XsumRow) -> Option<(usize, usize)> {
    let parse_off = |s: &Option<String>| s.as_deref().and_then(|v| v.trim().parse::<usize>().ok());
    let start = parse_off(&row.hallucinated_span_start);
    let end = parse_off(&row.hallucinated_span_end);
    let text =
        row.hallucinated_span.as_deref().map(str::trim).filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("null"));
    if let Some(text) = text {
        let hint = start.map_or(0, |s| char_to_byte(&row.summary, s));
        let found = row.summary.match_indices(text).map(|(b, _)| b).min_by_key(|b| b.abs_diff(hint));
        if let Some(b) = found {
            return Some((b, b + text.len()));
        }
    }
    match (start, end) {
        (Some(s), Some(e)) if e > s => {
            let s = char_to_byte(&row.summary, s);
            let e = char_to_byte(&row.summary, e);
            (s < e).then_some((s, e))
        }
        _ => None,
    }
}

/// Character spans per annotator.
type SpansByWorker = BTreeMap<String, Vec<(usize, usize)>>;

/// Loads the XSum hallucination annotations CSV (columns `bbcid`, `system`,
/// `summary`, `hallucination_type`, `hallucinated_span`,
/// `hallucinated_span_start`, `hallucinated_span_end`, `worker_id`; one row
/// per annotated span). Keys are `"<bbcid>:<system>"`.
pub fn load_xsum_spans(path: &Path) -> Result<BTreeMap<String, SpanAnnotation>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::schema(path, "file", e.to_string()))?;
    let mut grouped: BTreeMap<String, (String, SpansByWorker)> = BTreeMap::new();
    for (i, row) in reader.deserialize::<XsumRow>().enumerate() {
        let loc = format!("row {}", i + 2);
        let row = row.map_err(|e| DataError::schema(path, &loc, e.to_string()))?;
        let key = format!("{}:{}", row.bbcid.trim(), row.system.trim());
        let entry = grouped.entry(key).or_insert_with(|| (row.summary.clone(), BTreeMap::new()));
        if entry.0 != row.summary {
            return Err(DataError::schema(path, loc, "summary text differs between rows of the same pair"));
        }
        let spans = entry.1.entry(row.worker_id.trim().to_string()).or_default();
        let no_span =
            row.hallucination_type.as_deref().is_some_and(|t| t.trim().is_empty() || t.eq_ignore_ascii_case("null"));
        if !no_span {
            if let Some(range) = locate_span(&row) {
                spans.push(range);
            }
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(key, (summary, workers))| {
            let annotator_spans = workers
                .values()
                .map(|spans| {
                    (!spans.is_empty())
                        .then(|| spans.iter().map(|&(s, e)| &summary[s..e]).collect::<Vec<_>>().join(" | "))
                })
                .collect();
            let by_annotator: Vec<Vec<(usize, usize)>> = workers.into_values().collect();
            let majority_span = majority_span(&summary, &by_annotator);
            (key, SpanAnnotation { summary, annotator_spans, majority_span })
        })
        .collect())
}

/// Copies majority spans onto matching records (ids compared with the
/// system name case-folded). A record whose summary differs from the
/// annotated text is skipped with a warning. Returns how many records
/// received a span.
pub fn attach_spans(records: &mut [NormalizedRecord], spans: &BTreeMap<String, SpanAnnotation>) -> usize {
    let fold = |id: &str| match id.rsplit_once(':') {
        Some((doc, sys)) => format!("{doc}:{}", sys.to_lowercase()),
        None => id.to_string(),
    };
    let lookup: HashMap<String, &SpanAnnotation> = spans.iter().map(|(k, v)| (fold(k), v)).collect();
    let mut attached = 0;
    for r in records.iter_mut() {
        let Some(annotation) = lookup.get(&fold(&r.pair.id)) else { continue };
        if normalize_whitespace(&annotation.summary) != normalize_whitespace(&r.pair.input_summary) {
            warn!("{}: annotated summary differs from the record's; span not attached", r.pair.id);
            continue;
        }
        if let Some(span) = &annotation.majority_span {
            r.pair.gold_span = Some(span.clone());
            attached += 1;
        }
    }
    attached
}

/// Loads DeFacto rows: `doc_id`, `article`, `candidate`, optional
/// `ref_summary`, `has_error`, and `feedback.summary` holding the human
/// edit. Rows without errors are kept for critic evaluation but are left
/// out of the edit pool.
pub fn load_defacto(path: &Path) -> Result<Vec<NormalizedRecord>, DataError> {
    let source_file = path.display().to_string();
    let mut records = Vec::new();
    for (i, (loc, row)) in read_json_rows(path)?.into_iter().enumerate() {
        let need = |names: &[&str]| {
            str_field(&row, names)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| DataError::schema(path, format!("{loc}.{}", names[0]), "missing or empty"))
        };
        let id = id_field(&row, &["doc_id", "id"]).unwrap_or_else(|| i.to_string());
        let article = need(&["article"])?.to_string();
        let candidate = need(&["candidate", "summary"])?.to_string();
        let has_error = row
            .get("has_error")
            .and_then(Value::as_bool)
            .ok_or_else(|| DataError::schema(path, format!("{loc}.has_error"), "missing boolean"))?;
        let feedback = row.get("feedback");
        let human_edit = feedback
            .and_then(|f| f.get("summary"))
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if has_error && human_edit.is_none() {
            return Err(DataError::schema(
                path,
                format!("{loc}.feedback.summary"),
                "errorful row without a human edit",
            ));
        }
        let mut pair = DocumentSummaryPair::new(id, article, candidate, Dataset::Defacto);
        pair.reference_summary = str_field(&row, &["ref_summary", "reference"]).map(str::to_string);
        pair.human_edit = human_edit;
        records.push(NormalizedRecord {
            pair,
            source_file: source_file.clone(),
            system: None,
            human_score: None,
            human_label: Some(if has_error { Faithfulness::Unfaithful } else { Faithfulness::Faithful }),
            edit_pool: has_error,
        });
    }
    check_unique(path, &records)?;
    Ok(records)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), DataError> {
    let io_err = |e| DataError::Io(path.display().to_string(), e);
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::Io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| DataError::schema(path, format!("line {}", i + 1), e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

/// Reads a normalized corpus and validates every pair.
pub fn read_corpus(path: &Path) -> Result<Vec<NormalizedRecord>, DataError> {
    let records: Vec<NormalizedRecord> = read_jsonl(path)?;
    for r in &records {
        r.pair.validate().map_err(|e| DataError::schema(path, format!("id {}", r.pair.id), e.to_string()))?;
    }
    check_unique(path, &records)?;
    Ok(records)
}

/// Deterministic subset of `n` records in their original order.
pub fn subsample<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}
