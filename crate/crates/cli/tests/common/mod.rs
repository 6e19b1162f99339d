//! Fixture corpora, replay files and process helpers for the command tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use critedit::data::{write_jsonl, NormalizedRecord};
use critedit::parse::{render_editor_output, EditorOutput, ParseStatus};
use critedit::prompt::{build_critic, build_editor, CriticMode, EditorStrategy, PromptConfig};
use critedit::{binarize_human, bucket_to_likert, summary_level_score, Dataset, DocumentSummaryPair, ErrorType};
use serde_json::{json, Value};

pub fn record(pair: DocumentSummaryPair, edit_pool: bool) -> NormalizedRecord {
    let human_score = pair.human_score().map(f64::from);
    NormalizedRecord {
        pair,
        source_file: "fixture".into(),
        system: None,
        human_score,
        human_label: human_score.map(|s| binarize_human(s).unwrap()),
        edit_pool,
    }
}

pub fn write_corpus(dir: &Path, records: &[NormalizedRecord]) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    write_jsonl(records, &path).unwrap();
    path
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

/// A config for `corpus` writing to `out`, with the given critic spec and
/// extra top-level fields.
pub fn write_config(dir: &Path, corpus: &Path, out: &Path, critic: Value, extra: Value) -> PathBuf {
    let mut config = json!({ "critic": critic, "corpus": corpus, "out": out });
    if let Value::Object(fields) = extra {
        config.as_object_mut().unwrap().extend(fields);
    }
    write_json(&dir.join("config.json"), &config)
}

fn dataset(i: usize) -> Dataset {
    if i.is_multiple_of(2) {
        Dataset::CnnDm
    } else {
        Dataset::Xsum
    }
}

/// Unfaithful pairs with reference summaries, gold spans and gold types.
pub fn edit_corpus(n: usize) -> Vec<NormalizedRecord> {
    (0..n)
        .map(|i| {
            let mut pair = DocumentSummaryPair::new(
                format!("e{i:03}"),
                format!("Report {i} covers a town meeting. The mayor spoke first. Residents asked questions."),
                format!("The governor of town {i} cancelled the meeting."),
                dataset(i),
            );
            pair.sentence_labels = Some(vec![1]);
            pair.gold_span = Some("The governor".into());
            pair.gold_error_types = Some(BTreeSet::from([ErrorType::EntityError]));
            pair.reference_summary = Some(format!("The mayor of town {i} spoke at the meeting."));
            record(pair, true)
        })
        .collect()
}

pub fn revision(pair: &DocumentSummaryPair, v: usize) -> String {
    if v == 0 {
        pair.input_summary.clone()
    } else {
        format!("The mayor of town {} spoke at the meeting, revision {v}.", pair.id)
    }
}

/// `fingerprint -> reply` so that pair `i` needs `needed(i)` edits: the
/// critic gives 2 until the last revision, then 5.
pub fn edit_replay(
    records: &[NormalizedRecord],
    needed: impl Fn(usize) -> usize,
    strategy: EditorStrategy,
    mode: CriticMode,
) -> BTreeMap<String, String> {
    let prompts = PromptConfig::with_mode(mode);
    let (low, high) = match mode {
        CriticMode::Scale5 => ("2", "5"),
        CriticMode::Binary => ("0", "1"),
    };
    let mut map = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let pair = &r.pair;
        let k = needed(i);
        for v in 0..=k {
            let summary = revision(pair, v);
            let critic = build_critic(&prompts, &pair.article, &summary).unwrap();
            map.insert(critic.fingerprint(), if v == k { high } else { low }.to_string());
            if v < k {
                let editor = build_editor(&prompts, strategy, pair, &summary).unwrap();
                let output = EditorOutput {
                    span: pair.gold_span.clone(),
                    error_types: pair.gold_error_types.clone(),
                    edited_summary: revision(pair, v + 1),
                    reasoning: Some("The summary names the wrong official.".into()),
                    parse_status: ParseStatus::Clean,
                    raw: String::new(),
                };
                map.insert(editor.fingerprint(), render_editor_output(&output, strategy));
            }
        }
    }
    map
}

/// Pairs with human scores spanning every bucket. Summaries have at most
/// five sentences, so no nonzero error fraction lands in the top bucket.
pub fn critic_corpus(n: usize) -> Vec<NormalizedRecord> {
    (0..n)
        .map(|i| {
            let sentences = 1 + i % 5;
            let errors = (i / 5) % (sentences + 1);
            let labels: Vec<u8> = (0..sentences).map(|s| u8::from(s < errors)).collect();
            let summary: Vec<String> = (0..sentences).map(|s| format!("Claim {s} about story {i}.")).collect();
            let mut pair = DocumentSummaryPair::new(
                format!("c{i:03}"),
                format!("Story {i} begins here. It continues with detail. It ends with a quote."),
                summary.join(" "),
                dataset(i),
            );
            pair.sentence_labels = Some(labels);
            record(pair, errors > 0)
        })
        .collect()
}

/// A critic that answers every pair with its bucketed human score (scale)
/// or its binarized label (binary).
pub fn oracle_critic_replay(records: &[NormalizedRecord], mode: CriticMode) -> BTreeMap<String, String> {
    let prompts = PromptConfig::with_mode(mode);
    records
        .iter()
        .map(|r| {
            let score = summary_level_score(r.pair.sentence_labels.as_deref().unwrap()).unwrap().value();
            let reply = match mode {
                CriticMode::Scale5 => bucket_to_likert(score).unwrap().value().to_string(),
                CriticMode::Binary => u8::from(score == 0.0).to_string(),
            };
            let req = build_critic(&prompts, &r.pair.article, &r.pair.input_summary).unwrap();
            (req.fingerprint(), reply)
        })
        .collect()
}

pub struct Exit {
    pub code: i32,
    pub stderr: String,
}

/// Runs the `critedit` binary.
pub fn critedit(args: &[&str]) -> Exit {
    let out = Command::new(env!("CARGO_BIN_EXE_critedit")).args(args).output().unwrap();
    Exit { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

/// Every rendered report file, keyed by file name.
pub fn report_files(run_dir: &Path) -> BTreeMap<String, String> {
    fs::read_dir(run_dir.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect()
}
