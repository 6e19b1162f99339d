//! Checks of the dataset loaders against hand-built fixtures.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use critedit::data::{load_frank, load_xsum_spans};
use critedit::{binarize_human, bucket_to_likert, summary_level_score, Faithfulness};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

/// Hand-computed expectations for `frank_sample.json`:
/// id -> (sentence labels, summary score).
pub fn frank_expectations() -> BTreeMap<&'static str, (Vec<u8>, f64)> {
    BTreeMap::from([
        ("30001:BERTS2S", (vec![0], 0.0)),
        ("30002:TConvS2S", (vec![1], 1.0)),
        ("c0ffee01:bus", (vec![0, 0, 1], 1.0 / 3.0)),
        ("c0ffee02:pgn", (vec![0, 1, 1, 0, 0], 0.4)),
        ("c0ffee03:s2s", (vec![0, 0], 0.0)),
        ("c0ffee04:bart", (vec![1, 1], 1.0)),
    ])
}

/// Majority span by direct per-token counting: a whitespace token gets a
/// vote from every annotator with a span covering any of its characters.
pub fn majority_oracle(summary: &str, spans: &BTreeMap<String, Vec<(usize, usize)>>) -> Option<String> {
    let chars: Vec<char> = summary.chars().collect();
    let mut tokens: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        tokens.push((start, i));
    }
    let votes: Vec<usize> = tokens
        .iter()
        .map(|&(s, e)| {
            spans.values().filter(|ranges| (s..e).any(|c| ranges.iter().any(|&(a, b)| a <= c && c < b))).count()
        })
        .collect();
    let mut best: Option<(usize, usize)> = None;
    for start in 0..tokens.len() {
        for end in start + 1..=tokens.len() {
            if votes[start..end].iter().all(|&v| v >= 2) && best.is_none_or(|(bs, be)| end - start > be - bs) {
                best = Some((start, end));
            }
        }
    }
    best.map(|(s, e)| chars[tokens[s].0..tokens[e - 1].1].iter().collect())
}

/// Key -> (summary, annotator -> character spans).
pub type RawSpans = BTreeMap<String, (String, BTreeMap<String, Vec<(usize, usize)>>)>;

/// Reads the span CSV with its character offsets, bypassing the loader.
pub fn raw_xsum_spans(path: &Path) -> RawSpans {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut out = RawSpans::new();
    for row in reader.records() {
        let row = row.unwrap();
        let key = format!("{}:{}", &row[0], &row[1]);
        let entry = out.entry(key).or_insert_with(|| (row[2].to_string(), BTreeMap::new()));
        let ranges = entry.1.entry(row[7].to_string()).or_default();
        if !row[3].is_empty() {
            ranges.push((row[5].parse().unwrap(), row[6].parse().unwrap()));
        }
    }
    out
}

/// Runs every dataset-semantics check; returns a short description.
pub fn check_dataset_semantics() -> Result<String, String> {
    let dir = fixture_dir();
    let records = load_frank(&dir.join("frank_sample.json")).map_err(|e| e.to_string())?;
    let expected = frank_expectations();
    if records.len() != expected.len() {
        return Err(format!("loaded {} FRANK records, expected {}", records.len(), expected.len()));
    }
    for r in &records {
        let (labels, score) = expected.get(r.pair.id.as_str()).ok_or_else(|| format!("unexpected id {}", r.pair.id))?;
        if r.pair.sentence_labels.as_ref() != Some(labels) {
            return Err(format!("{}: labels {:?}", r.pair.id, r.pair.sentence_labels));
        }
        let mean = labels.iter().map(|&l| f64::from(l)).sum::<f64>() / labels.len() as f64;
        let got = r.human_score.ok_or("missing human score")?;
        if (got - score).abs() > 1e-12 || (got - mean).abs() > 1e-12 {
            return Err(format!("{}: score {got}, want {score}", r.pair.id));
        }
        let want_label = if *score > 0.0 { Faithfulness::Unfaithful } else { Faithfulness::Faithful };
        if r.human_label != Some(want_label) || r.edit_pool != (want_label == Faithfulness::Unfaithful) {
            return Err(format!("{}: label {:?}", r.pair.id, r.human_label));
        }
    }
    for labels in [vec![0u8], vec![0, 0, 0, 0, 1], vec![1, 1], vec![0, 1, 0]] {
        let s = summary_level_score(&labels).map_err(|e| e.to_string())?.value();
        let any_error = labels.contains(&1);
        if (binarize_human(s).unwrap() == Faithfulness::Unfaithful) != any_error {
            return Err(format!("binarization of {labels:?}"));
        }
    }
    if bucket_to_likert(0.0).unwrap().value() != 5 || bucket_to_likert(1.0).unwrap().value() != 1 {
        return Err("bucket endpoints".into());
    }

    let path = dir.join("xsum_spans.csv");
    let loaded = load_xsum_spans(&path).map_err(|e| e.to_string())?;
    let raw = raw_xsum_spans(&path);
    if loaded.len() != 10 || raw.len() != 10 {
        return Err(format!("expected 10 span fixtures, got {}", loaded.len()));
    }
    let mut with_majority = BTreeSet::new();
    for (key, (summary, spans)) in &raw {
        let want = majority_oracle(summary, spans);
        let got = loaded.get(key).ok_or_else(|| format!("{key} not loaded"))?;
        if got.majority_span != want {
            return Err(format!("{key}: majority {:?}, oracle {want:?}", got.majority_span));
        }
        if want.is_some() {
            with_majority.insert(key.clone());
        }
    }
    Ok(format!("{} FRANK records, 10 span fixtures ({} with a majority)", records.len(), with_majority.len()))
}
