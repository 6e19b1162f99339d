//! Loop-protocol checks driven by deterministic rule-based mock backends.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use critedit::backend::{Backend, BackendError, ChatRequest, ChatResponse, ScriptedBackend};
use critedit::engine::{CriticEditorLoop, LoopConfig, SessionTrace, TerminalStatus};
use critedit::prompt::EditorStrategy;
use critedit::{Dataset, DocumentSummaryPair};

/// Answers from the request text alone, so replies do not depend on call
/// order or thread interleaving. Records every request.
pub struct RuleBackend {
    rule: Box<dyn Fn(&ChatRequest) -> String + Send + Sync>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl RuleBackend {
    pub fn new(rule: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        RuleBackend { rule: Box::new(rule), seen: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Backend for RuleBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        Ok(ChatResponse::text((self.rule)(request)))
    }
}

/// The summary under review in a critic or editor request.
pub fn summary_in(request: &ChatRequest) -> String {
    let text = &request.messages.last().unwrap().content;
    let (marker, end) =
        if request.messages.len() > 1 { ("Summary Three: ", "\n") } else { ("Inconsistent summary: ", "\n") };
    let start = text.find(marker).expect("summary marker") + marker.len();
    let rest = &text[start..];
    rest[..rest.find(end).unwrap_or(rest.len())].to_string()
}

fn version_text(pair: usize, version: usize, faithful: bool) -> String {
    let tag = if faithful { " Verified." } else { "" };
    format!("Summary of pair {pair} version {version}.{tag}")
}

/// Parses "Summary of pair P version V." back into (P, V).
fn parse_version(summary: &str) -> (usize, usize) {
    let words: Vec<&str> = summary.split_whitespace().collect();
    let num = |w: &str| w.trim_end_matches('.').parse::<usize>().unwrap();
    (num(words[3]), num(words[5]))
}

/// Pair `i` needs `i % 6` edits before its summary is judged faithful.
pub fn corpus(n: usize) -> Vec<DocumentSummaryPair> {
    (0..n)
        .map(|i| {
            DocumentSummaryPair::new(
                format!("pair-{i:03}"),
                format!("Article number {i}. It reports a local event in some detail."),
                version_text(i, 0, i % 6 == 0),
                Dataset::Xsum,
            )
        })
        .collect()
}

/// Critic: 5 for verified summaries, else 2. Editor: bumps the version and
/// marks it verified once the pair's edit budget is reached.
pub fn converging_backend() -> RuleBackend {
    RuleBackend::new(|req| {
        let summary = summary_in(req);
        if req.messages.len() > 1 {
            return if summary.contains("Verified") { "5" } else { "2" }.to_string();
        }
        let (pair, version) = parse_version(&summary);
        let next = version + 1;
        format!(
            "Inconsistent span: span-marker-{pair}-{next}\nPost-edited summary: {}",
            version_text(pair, next, next >= pair % 6)
        )
    })
}

fn engine(backend: Arc<dyn Backend>) -> CriticEditorLoop {
    let config = LoopConfig { strategy: EditorStrategy::EditorSpan, ..LoopConfig::default() };
    CriticEditorLoop::single(backend, config).unwrap()
}

/// (a) a faithful first verdict yields no edit.
pub fn check_faithful_first() -> Result<(), String> {
    let mock = Arc::new(ScriptedBackend::list(["5"]));
    let trace = engine(mock.clone()).run_session(&corpus(1)[0]).map_err(|e| e.to_string())?;
    if trace.edit_count() != 0 || trace.terminal_status != TerminalStatus::JudgedFaithful || mock.call_count() != 1 {
        return Err(format!("faithful-first: {} edits, {:?}", trace.edit_count(), trace.terminal_status));
    }
    if trace.modified() {
        return Err("faithful-first summary was modified".into());
    }
    Ok(())
}

/// (b) a critic that never approves stops after exactly five edits.
pub fn check_round_cap() -> Result<(), String> {
    let backend = Arc::new(RuleBackend::new(|req| {
        if req.messages.len() > 1 {
            "1".to_string()
        } else {
            format!("Inconsistent span: x\nPost-edited summary: Rewritten {}", summary_in(req).len())
        }
    }));
    let trace = engine(backend.clone()).run_session(&corpus(2)[1]).map_err(|e| e.to_string())?;
    let critic_calls = backend.requests().iter().filter(|r| r.messages.len() > 1).count();
    if trace.edit_count() != 5 || trace.terminal_status != TerminalStatus::RoundCapReached || critic_calls != 6 {
        return Err(format!(
            "never-faithful: {} edits, {critic_calls} critic calls, {:?}",
            trace.edit_count(),
            trace.terminal_status
        ));
    }
    Ok(())
}

/// (c) every request carries only the current summary: no earlier
/// version of it and no text from earlier editor outputs.
pub fn check_statelessness(requests: &[ChatRequest]) -> Result<(), String> {
    for req in requests {
        let current = summary_in(req);
        let (pair, version) = parse_version(&current);
        let text: String = req.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        for earlier in 0..version {
            for faithful in [false, true] {
                if text.contains(&version_text(pair, earlier, faithful)) {
                    return Err(format!("request for version {version} of pair {pair} contains version {earlier}"));
                }
            }
        }
        if text.contains("span-marker") {
            return Err(format!("request for pair {pair} contains an earlier editor output"));
        }
    }
    Ok(())
}

pub fn run_corpus(parallelism: usize) -> (Vec<SessionTrace>, Vec<ChatRequest>) {
    let backend = Arc::new(converging_backend());
    let traces = engine(backend.clone()).run_batch(&corpus(24), parallelism, |_| {});
    (traces, backend.requests())
}

/// (d) two runs of the same corpus give identical traces apart from timing.
pub fn check_determinism() -> Result<Vec<SessionTrace>, String> {
    let (first, requests) = run_corpus(4);
    check_statelessness(&requests)?;
    let (second, _) = run_corpus(3);
    let strip = |t: &[SessionTrace]| t.iter().map(SessionTrace::without_timing).collect::<Vec<_>>();
    if strip(&first) != strip(&second) {
        return Err("traces differ between runs".into());
    }
    for (i, t) in first.iter().enumerate() {
        if t.edit_count() != i % 6 || t.terminal_status != TerminalStatus::JudgedFaithful {
            return Err(format!("{}: {} edits, {:?}", t.pair_id, t.edit_count(), t.terminal_status));
        }
    }
    Ok(first)
}

pub fn check_loop_protocol() -> Result<String, String> {
    check_faithful_first()?;
    check_round_cap()?;
    let traces = check_determinism()?;
    Ok(format!("{} sessions, stateless and deterministic", traces.len()))
}
