//! The critic/editor loop.
//!
//! Each session scores the current summary, edits it when the critic finds
//! it unfaithful, and rescores the edit, until the critic is satisfied or
//! the round cap is hit. Every call starts from a fresh message list.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::domain::{DocumentSummaryPair, ErrorType, LikertScore};
use crate::parse::{critic_needs_edit_with, parse_editor, CriticVerdict, EditorOutput};
use crate::prompt::{build_critic, build_editor, CriticMode, EditorStrategy, PromptConfig, PromptError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
}

/// A failed session together with the rounds completed before the failure.
#[derive(Debug, Error)]
#[error("session {} failed after {} round(s): {source}", trace.pair_id, trace.rounds.len())]
pub struct SessionError {
    pub trace: SessionTrace,
    pub source: EngineError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Maximum number of editor calls per session.
    pub max_rounds: usize,
    pub strategy: EditorStrategy,
    pub critic_mode: CriticMode,
    /// Lowest scale verdict that ends the loop.
    pub stop_threshold: LikertScore,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_rounds: 5,
            strategy: EditorStrategy::EditorSpan,
            critic_mode: CriticMode::Scale5,
            stop_threshold: LikertScore::MAX,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_rounds == 0 {
            return Err(EngineError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if !matches!(self.stop_threshold.value(), 4 | 5) {
            return Err(EngineError::InvalidConfig("stop_threshold must be 4 or 5".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminalStatus {
    JudgedFaithful,
    RoundCapReached,
    /// The cap was reached without a single usable edit.
    EditFailed,
    /// A backend or prompt error stopped the session early.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based.
    pub index: usize,
    pub pre_verdict: CriticVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor_output: Option<EditorOutput>,
    pub summary_after: String,
    #[serde(default)]
    pub critic_ms: u64,
    #[serde(default)]
    pub editor_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub pair_id: String,
    pub strategy: EditorStrategy,
    pub critic_mode: CriticMode,
    pub input_summary: String,
    pub rounds: Vec<Round>,
    pub final_summary: String,
    pub terminal_status: TerminalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

/// Collapses whitespace runs and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl SessionTrace {
    fn start(pair: &DocumentSummaryPair, config: &LoopConfig) -> Self {
        SessionTrace {
            pair_id: pair.id.clone(),
            strategy: config.strategy,
            critic_mode: config.critic_mode,
            input_summary: pair.input_summary.clone(),
            rounds: Vec::new(),
            final_summary: pair.input_summary.clone(),
            terminal_status: TerminalStatus::Aborted,
            error: None,
            elapsed_ms: 0,
        }
    }

    /// Rounds in which the editor was called.
    pub fn edit_rounds(&self) -> impl Iterator<Item = &Round> {
        self.rounds.iter().filter(|r| r.editor_output.is_some())
    }

    pub fn edit_count(&self) -> usize {
        self.edit_rounds().count()
    }

    /// Whether the final summary differs from the input beyond whitespace.
    pub fn modified(&self) -> bool {
        normalize_whitespace(&self.final_summary) != normalize_whitespace(&self.input_summary)
    }

    pub fn first_verdict(&self) -> Option<&CriticVerdict> {
        self.rounds.first().map(|r| &r.pre_verdict)
    }

    /// The editor's reading of the original input summary.
    pub fn first_edit(&self) -> Option<&EditorOutput> {
        self.rounds.first().and_then(|r| r.editor_output.as_ref())
    }

    pub fn predicted_span(&self) -> Option<&str> {
        self.first_edit().and_then(|e| e.span.as_deref())
    }

    pub fn predicted_types(&self) -> Option<&std::collections::BTreeSet<ErrorType>> {
        self.first_edit().and_then(|e| e.error_types.as_ref())
    }

    /// Summary after edit round `k` (1-based); round 0 is the input.
    pub fn summary_at(&self, k: usize) -> Option<&str> {
        if k == 0 {
            return Some(&self.input_summary);
        }
        self.edit_rounds().nth(k - 1).map(|r| r.summary_after.as_str())
    }

    /// Copy with every timing field zeroed, for comparing runs.
    pub fn without_timing(&self) -> SessionTrace {
        let mut t = self.clone();
        t.elapsed_ms = 0;
        for r in &mut t.rounds {
            r.critic_ms = 0;
            r.editor_ms = 0;
        }
        t
    }
}

/// Runs sessions against a critic and an editor, which may be the same
/// backend.
pub struct CriticEditorLoop {
    critic: Arc<dyn Backend>,
    editor: Arc<dyn Backend>,
    config: LoopConfig,
    prompts: PromptConfig,
}

impl CriticEditorLoop {
    pub fn new(
        critic: Arc<dyn Backend>,
        editor: Arc<dyn Backend>,
        config: LoopConfig,
        mut prompts: PromptConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        prompts.critic_mode = config.critic_mode;
        Ok(CriticEditorLoop { critic, editor, config, prompts })
    }

    /// Same backend for both roles, default prompts.
    pub fn single(backend: Arc<dyn Backend>, config: LoopConfig) -> Result<Self, EngineError> {
        Self::new(backend.clone(), backend, config, PromptConfig::default())
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    /// One critic call on `summary`, outside any session.
    pub fn judge(&self, pair: &DocumentSummaryPair, summary: &str) -> Result<CriticVerdict, EngineError> {
        let request = build_critic(&self.prompts, &pair.article, summary)?;
        let response = self.critic.complete(&request)?;
        Ok(CriticVerdict::from_response(&response.content, self.config.critic_mode))
    }

    fn edit(&self, pair: &DocumentSummaryPair, summary: &str) -> Result<EditorOutput, EngineError> {
        let request = build_editor(&self.prompts, self.config.strategy, pair, summary)?;
        let response = self.editor.complete(&request)?;
        if !response.has_content() {
            return Ok(EditorOutput::failed(response.content));
        }
        Ok(parse_editor(&response.content, self.config.strategy))
    }

    // The error carries the partial trace on purpose.
    #[allow(clippy::result_large_err)]
    pub fn run_session(&self, pair: &DocumentSummaryPair) -> Result<SessionTrace, SessionError> {
        let started = Instant::now();
        let mut trace = SessionTrace::start(pair, &self.config);
        let result = self.drive(pair, &mut trace);
        trace.elapsed_ms = started.elapsed().as_millis() as u64;
        match result {
            Ok(status) => {
                trace.terminal_status = status;
                Ok(trace)
            }
            Err(source) => {
                trace.terminal_status = TerminalStatus::Aborted;
                trace.error = Some(source.to_string());
                Err(SessionError { trace, source })
            }
        }
    }

    fn drive(&self, pair: &DocumentSummaryPair, trace: &mut SessionTrace) -> Result<TerminalStatus, EngineError> {
        let mut current = pair.input_summary.clone();
        let mut edits = 0;
        let mut any_usable = false;
        loop {
            let index = trace.rounds.len() + 1;
            let t = Instant::now();
            let verdict = self.judge(pair, &current)?;
            let critic_ms = t.elapsed().as_millis() as u64;
            let needs_edit = critic_needs_edit_with(&verdict, self.config.stop_threshold);
            if !needs_edit || edits == self.config.max_rounds {
                trace.rounds.push(Round {
                    index,
                    pre_verdict: verdict,
                    editor_output: None,
                    summary_after: current.clone(),
                    critic_ms,
                    editor_ms: 0,
                });
                trace.final_summary = current;
                return Ok(if !needs_edit {
                    TerminalStatus::JudgedFaithful
                } else if any_usable {
                    TerminalStatus::RoundCapReached
                } else {
                    TerminalStatus::EditFailed
                });
            }

            let t = Instant::now();
            let output = self.edit(pair, &current)?;
            let editor_ms = t.elapsed().as_millis() as u64;
            if output.is_usable() {
                any_usable = true;
                current = output.edited_summary.clone();
            }
            edits += 1;
            trace.rounds.push(Round {
                index,
                pre_verdict: verdict,
                editor_output: Some(output),
                summary_after: current.clone(),
                critic_ms,
                editor_ms,
            });
            trace.final_summary = current.clone();
        }
    }

    /// Runs every pair with up to `parallelism` concurrent sessions and
    /// returns traces in input order. `sink` sees each trace as soon as its
    /// session ends, including aborted ones.
    pub fn run_batch<F>(&self, pairs: &[DocumentSummaryPair], parallelism: usize, sink: F) -> Vec<SessionTrace>
    where
        F: Fn(&SessionTrace) + Sync,
    {
        let slots: Vec<Mutex<Option<SessionTrace>>> = pairs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = parallelism.max(1).min(pairs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(pair) = pairs.get(i) else { break };
                    let trace = match self.run_session(pair) {
                        Ok(t) => t,
                        Err(e) => {
                            warn!("{e}");
                            e.trace
                        }
                    };
                    sink(&trace);
                    *slots[i].lock().unwrap() = Some(trace);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot is filled")).collect()
    }
}

/// Writes one JSON trace per line.
pub fn export_traces(traces: &[SessionTrace], path: &Path) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_traces(path: &Path) -> io::Result<Vec<SessionTrace>> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut traces = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        traces.push(t);
    }
    Ok(traces)
}

/// Per-pair trace files under `<run>/traces/`, so an interrupted run can be
/// resumed by skipping pairs that already finished.
#[derive(Debug, Clone)]
pub struct TraceStore {
    dir: PathBuf,
}

impl TraceStore {
    pub fn open(run_dir: &Path) -> io::Result<Self> {
        let dir = run_dir.join("traces");
        fs::create_dir_all(&dir)?;
        Ok(TraceStore { dir })
    }

    fn file_for(&self, pair_id: &str) -> PathBuf {
        let safe: String = pair_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .take(64)
            .collect();
        let digest = hex::encode(Sha256::digest(pair_id.as_bytes()));
        self.dir.join(format!("{safe}-{}.json", &digest[..12]))
    }

    /// Atomic write of one trace.
    pub fn save(&self, trace: &SessionTrace) -> io::Result<()> {
        let path = self.file_for(&trace.pair_id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(trace)?)?;
        fs::rename(tmp, path)
    }

    pub fn load(&self, pair_id: &str) -> io::Result<Option<SessionTrace>> {
        match fs::read(self.file_for(pair_id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Ids of sessions that finished without error.
    pub fn completed_ids(&self) -> io::Result<HashSet<String>> {
        let mut ids = HashSet::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let trace: SessionTrace = match serde_json::from_slice(&fs::read(&path)?) {
                    Ok(t) => t,
                    Err(e) => {
                        warn!("ignoring unreadable trace {}: {e}", path.display());
                        continue;
                    }
                };
                if trace.terminal_status != TerminalStatus::Aborted {
                    ids.insert(trace.pair_id);
                }
            }
        }
        Ok(ids)
    }
}

/// Runs the pairs not yet completed in `store`, then returns traces for all
/// pairs in input order.
pub fn run_resumable(
    engine: &CriticEditorLoop,
    pairs: &[DocumentSummaryPair],
    parallelism: usize,
    store: &TraceStore,
) -> io::Result<Vec<SessionTrace>> {
    let done = store.completed_ids()?;
    let pending: Vec<DocumentSummaryPair> = pairs.iter().filter(|p| !done.contains(&p.id)).cloned().collect();
    info!("{} of {} sessions already complete", pairs.len() - pending.len(), pairs.len());
    let write_error = Mutex::new(None);
    engine.run_batch(&pending, parallelism, |t| {
        if let Err(e) = store.save(t) {
            write_error.lock().unwrap().get_or_insert(e);
        }
    });
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    pairs
        .iter()
        .map(|p| {
            store
                .load(&p.id)?
                .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no trace written for {}", p.id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::domain::Dataset;

    fn pair() -> DocumentSummaryPair {
        DocumentSummaryPair::new("p", "The article text.", "The input summary.", Dataset::Xsum)
    }

    fn engine(script: Vec<&str>, strategy: EditorStrategy) -> (Arc<ScriptedBackend>, CriticEditorLoop) {
        let mock = Arc::new(ScriptedBackend::list(script));
        let cfg = LoopConfig { strategy, ..Default::default() };
        let e = CriticEditorLoop::single(mock.clone(), cfg).unwrap();
        (mock, e)
    }

    #[test]
    fn faithful_first_means_no_edits() {
        let (mock, e) = engine(vec!["5"], EditorStrategy::Editor);
        let t = e.run_session(&pair()).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::JudgedFaithful);
        assert_eq!(t.edit_count(), 0);
        assert_eq!(mock.call_count(), 1);
        assert_eq!(t.final_summary, "The input summary.");
    }

    #[test]
    fn two_edit_rounds_then_faithful() {
        let (mock, e) = engine(
            vec!["2", "Post-edited summary: edited A", "2", "Post-edited summary: edited B", "5"],
            EditorStrategy::Editor,
        );
        let t = e.run_session(&pair()).unwrap();
        assert_eq!(t.edit_count(), 2);
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.final_summary, "edited B");
        assert_eq!(t.terminal_status, TerminalStatus::JudgedFaithful);
        assert_eq!(mock.call_count(), 5);
    }

    #[test]
    fn failed_edit_keeps_previous_summary() {
        let (_, e) =
            engine(vec!["2", "I cannot do that.", "3", "Post-edited summary: fixed", "5"], EditorStrategy::Editor);
        let t = e.run_session(&pair()).unwrap();
        assert_eq!(t.rounds[0].summary_after, "The input summary.");
        assert_eq!(t.rounds[1].summary_after, "fixed");
        assert_eq!(t.edit_count(), 2);
    }

    #[test]
    fn never_usable_edits_is_edit_failed() {
        let mut script = Vec::new();
        for _ in 0..5 {
            script.extend(["1", "I'm unable to help."]);
        }
        script.push("1");
        let (_, e) = engine(script, EditorStrategy::Editor);
        let t = e.run_session(&pair()).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::EditFailed);
        assert!(!t.modified());
    }

    #[test]
    fn relaxed_threshold_stops_at_four() {
        let mock = Arc::new(ScriptedBackend::list(["4"]));
        let cfg = LoopConfig { stop_threshold: LikertScore::new(4).unwrap(), ..Default::default() };
        let t = CriticEditorLoop::single(mock, cfg).unwrap().run_session(&pair()).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::JudgedFaithful);
    }

    #[test]
    fn backend_error_keeps_partial_trace() {
        let (_, e) = engine(vec!["2", "Post-edited summary: x"], EditorStrategy::Editor);
        let err = e.run_session(&pair()).unwrap_err();
        assert!(matches!(err.source, EngineError::Backend(BackendError::ScriptExhausted(2))));
        assert_eq!(err.trace.rounds.len(), 1);
        assert_eq!(err.trace.terminal_status, TerminalStatus::Aborted);
    }

    #[test]
    fn config_validation() {
        let bad = LoopConfig { max_rounds: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LoopConfig { stop_threshold: LikertScore::new(3).unwrap(), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn summary_at_indexes_edit_rounds() {
        let (_, e) = engine(vec!["2", "Post-edited summary: A", "5"], EditorStrategy::Editor);
        let t = e.run_session(&pair()).unwrap();
        assert_eq!(t.summary_at(0), Some("The input summary."));
        assert_eq!(t.summary_at(1), Some("A"));
        assert_eq!(t.summary_at(2), None);
    }
}
