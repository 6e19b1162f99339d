use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::EvalError;
use crate::backend::AdmissionGate;

pub const QAFACTEVAL: &str = "qafacteval";
pub const DAE: &str = "dae";
pub const FACTCC: &str = "factcc";
/// BERTScore F1 against the reference (or human edit).
pub const BERTSCORE: &str = "bertscore";
/// BERTScore F1 against the input summary, for preservation.
pub const BERTSCORE_INPUT: &str = "bertscore_input";

/// Score-table id for the summary after edit round `k` of a session;
/// `k = 0` is the input summary. A bare pair id refers to the final summary.
pub fn round_score_id(pair_id: &str, k: usize) -> String {
    format!("{pair_id}#{k}")
}

/// Externally computed scores, keyed by metric then id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    scores: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ScoreRow {
    id: String,
    metric: String,
    score: f64,
}

impl ScoreTable {
    /// Reads a CSV with header `id,metric,score`. Metric names are
    /// case-insensitive; later rows override earlier ones.
    pub fn load_csv(path: &Path) -> Result<Self, EvalError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| EvalError::ScoreFile(format!("{}: {e}", path.display())))?;
        let mut table = ScoreTable::default();
        for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
            let row = row.map_err(|e| EvalError::ScoreFile(format!("{}: row {}: {e}", path.display(), i + 2)))?;
            if !row.score.is_finite() {
                return Err(EvalError::ScoreFile(format!("{}: row {}: non-finite score", path.display(), i + 2)));
            }
            table.insert(&row.metric, &row.id, row.score);
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let err = |e: csv::Error| EvalError::ScoreFile(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for (metric, ids) in &self.scores {
            for (id, &score) in ids {
                w.serialize(ScoreRow { id: id.clone(), metric: metric.clone(), score }).map_err(err)?;
            }
        }
        w.flush().map_err(|e| EvalError::ScoreFile(e.to_string()))
    }

    pub fn insert(&mut self, metric: &str, id: &str, score: f64) {
        self.scores.entry(metric.to_lowercase()).or_default().insert(id.to_string(), score);
    }

    pub fn merge(&mut self, other: ScoreTable) {
        for (metric, ids) in other.scores {
            self.scores.entry(metric).or_default().extend(ids);
        }
    }

    pub fn get(&self, metric: &str, id: &str) -> Option<f64> {
        self.scores.get(&metric.to_lowercase())?.get(id).copied()
    }

    pub fn has_metric(&self, metric: &str) -> bool {
        self.scores.contains_key(&metric.to_lowercase())
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores for `ids` in order, warning about ids the table lacks.
    pub fn lookup_all(&self, metric: &str, ids: &[String]) -> Vec<Option<f64>> {
        if !self.has_metric(metric) {
            return vec![None; ids.len()];
        }
        let found: Vec<Option<f64>> = ids.iter().map(|id| self.get(metric, id)).collect();
        let missing: Vec<&str> =
            ids.iter().zip(&found).filter(|(_, s)| s.is_none()).map(|(id, _)| id.as_str()).collect();
        if !missing.is_empty() {
            warn!("{metric}: no score for {} id(s): {}", missing.len(), missing.join(", "));
        }
        found
    }
}

/// One item to score with an external metric.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub id: String,
    pub article: String,
    pub summary: String,
}

/// Client for an external scoring service: `POST {endpoint}/score` with
/// `{"metric", "article", "summary"}`, answered by `{"score": number}`.
pub struct ScorerClient {
    endpoint: String,
    agent: ureq::Agent,
    gate: AdmissionGate,
}

impl ScorerClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build(),
        );
        ScorerClient {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            gate: AdmissionGate::new(max_in_flight.max(1), None),
        }
    }

    pub fn score(&self, metric: &str, article: &str, summary: &str) -> Result<f64, EvalError> {
        let _permit = self.gate.acquire();
        let unavailable = |m: String| EvalError::ScorerUnavailable(m);
        let body = json!({ "metric": metric, "article": article, "summary": summary });
        let mut resp = self
            .agent
            .post(&format!("{}/score", self.endpoint))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| unavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(unavailable(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))?;
        value
            .get("score")
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| unavailable(format!("response has no numeric score: {text}")))
    }

    /// Scores every item with `parallelism` workers. Failed items are left
    /// out of the table and logged; the run carries on without them.
    pub fn score_all(&self, metric: &str, items: &[ScoreRequest], parallelism: usize) -> ScoreTable {
        let next = AtomicUsize::new(0);
        let table = Mutex::new(ScoreTable::default());
        std::thread::scope(|s| {
            for _ in 0..parallelism.clamp(1, items.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    match self.score(metric, &item.article, &item.summary) {
                        Ok(score) => table.lock().unwrap().insert(metric, &item.id, score),
                        Err(e) => warn!("{metric} score for {} unavailable: {e}", item.id),
                    }
                });
            }
        });
        table.into_inner().unwrap()
    }
}
