use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use critedit::backend::{HttpBackend, RecordingBackend};
use critedit::data::{
    attach_spans, load_defacto, load_frank, load_xsum_spans, read_corpus, read_jsonl, subsample, write_jsonl,
    NormalizedRecord,
};
use critedit::engine::{
    export_traces, load_traces, run_resumable, CriticEditorLoop, SessionTrace, TerminalStatus, TraceStore,
};
use critedit::eval::{
    cot_table, critic_eval_report, critic_table, edit_report, edit_table, error_type_slice, per_round_series,
    preservation_table, round_score_id, slice_table, valid_edit_table, CriticEvalOptions, CriticEvalReport,
    CriticObservation, EditReport, RoundSeries, ScoreRequest, ScoreTable, Table, BERTSCORE, BERTSCORE_INPUT, DAE,
    FACTCC, QAFACTEVAL,
};
use critedit::parse::CriticVerdict;
use critedit::prompt::specimen_prompts;
use critedit::{DocumentSummaryPair, ErrorType};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{build_backend, BackendSpec, RunConfig, ScorerSpec};
use crate::{CliError, Outcome, SourceKind};

const RUN_CONFIG: &str = "run_config.json";
const PROMPT_MANIFEST: &str = "prompt_manifest.json";
const CORPUS: &str = "corpus.jsonl";
const RECORDED_REPLIES: &str = "recorded_replies.json";
const CRITIC_VERDICTS: &str = "critic_verdicts.jsonl";
const TRACES: &str = "traces.jsonl";
const SCORES: &str = "scores.csv";
const REPORTS: &str = "reports";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

pub struct IngestOptions {
    pub kind: SourceKind,
    pub input: PathBuf,
    pub spans: Option<PathBuf>,
    pub out: PathBuf,
    pub subsample: Option<usize>,
    pub seed: u64,
}

/// Normalizes a raw dataset to JSONL and returns the record count.
pub fn ingest(o: &IngestOptions) -> Result<usize, CliError> {
    let mut records = match o.kind {
        SourceKind::Frank => load_frank(&o.input)?,
        SourceKind::Defacto => load_defacto(&o.input)?,
    };
    if let Some(path) = &o.spans {
        if o.kind != SourceKind::Frank {
            return Err(CliError::Config("--spans applies only to FRANK input".into()));
        }
        let attached = attach_spans(&mut records, &load_xsum_spans(path)?);
        info!("attached majority spans to {attached} record(s)");
    }
    if let Some(n) = o.subsample {
        if n == 0 {
            return Err(CliError::Config("--subsample must be at least 1".into()));
        }
        records = subsample(&records, n, o.seed);
        info!("kept {} record(s) (subsample {n}, seed {})", records.len(), o.seed);
    }
    if let Some(parent) = o.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_jsonl(&records, &o.out).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(records.len())
}

/// SHA-256 over git's blob framing (`blob <len>\0<content>`).
pub fn git_blob_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptManifest {
    hash_scheme: String,
    prompts: BTreeMap<String, String>,
}

fn prompt_manifest() -> PromptManifest {
    PromptManifest {
        hash_scheme: "sha256 over \"blob <len>\\0<content>\"".into(),
        prompts: specimen_prompts().into_iter().map(|(name, text)| (name, git_blob_hash(&text))).collect(),
    }
}

/// Writes the config, or checks it matches the one already in the run
/// directory so a rerun cannot silently mix settings.
fn persist_config(config: &RunConfig) -> Result<(), CliError> {
    let path = config.out.join(RUN_CONFIG);
    let current = serde_json::to_value(config).map_err(|e| CliError::Io(e.to_string()))?;
    if path.exists() {
        let stored: serde_json::Value = read_json(&path)?;
        if stored != current {
            return Err(CliError::Config(format!(
                "{} holds a different configuration; use a fresh --out directory",
                path.display()
            )));
        }
        return Ok(());
    }
    write_json(&path, &current)
}

fn backend_label(spec: &BackendSpec) -> String {
    match spec {
        BackendSpec::Http(c) => c.model_name.clone(),
        BackendSpec::Scripted { .. } => "scripted".into(),
        BackendSpec::Replay { .. } => "replay".into(),
    }
}

struct Run {
    dir: PathBuf,
    records: Vec<NormalizedRecord>,
    engine: CriticEditorLoop,
    recorders: Vec<Arc<RecordingBackend<HttpBackend>>>,
}

impl Run {
    fn open(config: &RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let prompts = config.prompt_config()?;
        let mut records = read_corpus(&config.corpus)?;
        if let Some(n) = config.subsample {
            records = subsample(&records, n, config.seed);
            info!("subsampled {} pair(s) with seed {}", records.len(), config.seed);
        }
        let critic = build_backend(&config.critic)?;
        let editor = config.editor.as_ref().map(build_backend).transpose()?;

        let dir = config.out.clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        persist_config(config)?;
        write_json(&dir.join(PROMPT_MANIFEST), &prompt_manifest())?;
        write_jsonl(&records, &dir.join(CORPUS)).map_err(|e| CliError::Io(e.to_string()))?;

        let editor_backend = editor.as_ref().map_or_else(|| critic.backend.clone(), |e| e.backend.clone());
        let engine = CriticEditorLoop::new(critic.backend.clone(), editor_backend, config.loop_config.clone(), prompts)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let recorders = [Some(critic), editor].into_iter().flatten().filter_map(|b| b.recorder).collect();
        Ok(Run { dir, records, engine, recorders })
    }

    /// Merges live replies into the run's replay file.
    fn save_recordings(&self) -> Result<(), CliError> {
        if self.recorders.is_empty() {
            return Ok(());
        }
        let path = self.dir.join(RECORDED_REPLIES);
        let mut all: BTreeMap<String, String> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
        for r in &self.recorders {
            all.extend(r.recorded());
        }
        write_json(&path, &all)
    }
}

/// Applies `f` to every item with up to `workers` threads, keeping order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot is filled")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CriticEvalFile {
    critic: String,
    report: CriticEvalReport,
}

/// Runs the critic once on every pair with a human score and writes the
/// agreement report. Pairs with a stored verdict are not re-scored.
pub fn critic_eval(config: &RunConfig) -> Result<Outcome, CliError> {
    let run = Run::open(config)?;
    let scored: Vec<(&DocumentSummaryPair, f64)> =
        run.records.iter().filter_map(|r| Some((&r.pair, r.human_score?))).collect();
    if scored.is_empty() {
        return Err(CliError::Schema(format!("{}: no pair has a human score", config.corpus.display())));
    }

    let verdicts_path = run.dir.join(CRITIC_VERDICTS);
    let mut done: HashMap<String, CriticObservation> = HashMap::new();
    if verdicts_path.exists() {
        for obs in read_jsonl::<CriticObservation>(&verdicts_path)? {
            if obs.verdict.value.is_some() {
                done.insert(obs.pair_id.clone(), obs);
            }
        }
    }
    let pending: Vec<&(&DocumentSummaryPair, f64)> = scored.iter().filter(|(p, _)| !done.contains_key(&p.id)).collect();
    info!("{} of {} critic verdicts already stored", scored.len() - pending.len(), scored.len());
    let fresh = parallel_map(&pending, config.parallelism, |(pair, human)| {
        let verdict = run.engine.judge(pair, &pair.input_summary).unwrap_or_else(|e| {
            warn!("critic failed on {}: {e}", pair.id);
            CriticVerdict { value: None, raw: format!("error: {e}") }
        });
        CriticObservation { pair_id: pair.id.clone(), dataset: pair.dataset, human_score: *human, verdict }
    });
    done.extend(fresh.into_iter().map(|o| (o.pair_id.clone(), o)));
    let observations: Vec<CriticObservation> =
        scored.iter().map(|(p, _)| done.remove(&p.id).expect("every pair observed")).collect();
    run.save_recordings()?;
    write_jsonl(&observations, &verdicts_path).map_err(|e| CliError::Io(e.to_string()))?;

    let options = CriticEvalOptions { bucket_scheme: config.bucket_scheme, ..Default::default() };
    let report = critic_eval_report(&observations, options);
    let failed = report.failed_ids.len();
    let label = format!("{} ({})", backend_label(&config.critic), config.loop_config.critic_mode);
    fs::create_dir_all(run.dir.join(REPORTS)).map_err(io_err(&run.dir))?;
    write_json(&run.dir.join(REPORTS).join("critic_eval.json"), &CriticEvalFile { critic: label, report })?;
    crate::report(&ReportOptions { run_dir: run.dir.clone(), scores_files: Vec::new(), compare: None })?;
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Partial })
}

/// Runs the loop over the edit pool, resuming from stored traces, then
/// scores (when a scorer is configured) and renders every report.
pub fn edit(config: &RunConfig) -> Result<Outcome, CliError> {
    let run = Run::open(config)?;
    let pool: Vec<DocumentSummaryPair> = run.records.iter().filter(|r| r.edit_pool).map(|r| r.pair.clone()).collect();
    if pool.is_empty() {
        return Err(CliError::Schema(format!("{}: no pair is in the edit pool", config.corpus.display())));
    }
    let store = TraceStore::open(&run.dir).map_err(io_err(&run.dir))?;
    let result = run_resumable(&run.engine, &pool, config.parallelism, &store);
    run.save_recordings()?;
    let traces = result.map_err(io_err(&run.dir))?;
    let traces_path = run.dir.join(TRACES);
    export_traces(&traces, &traces_path).map_err(io_err(&traces_path))?;

    if let Some((client, spec)) = config.scorer_client() {
        let path = run.dir.join(SCORES);
        let mut table = if path.exists() { load_scores(&path)? } else { ScoreTable::default() };
        for metric in &spec.metrics {
            let requests: Vec<ScoreRequest> = score_requests(metric, &traces, &pool)
                .into_iter()
                .filter(|r| table.get(metric, &r.id).is_none())
                .collect();
            info!("scoring {} item(s) with {metric}", requests.len());
            table.merge(client.score_all(metric, &requests, spec.max_in_flight));
        }
        table.write_csv(&path).map_err(|e| CliError::Io(e.to_string()))?;
        warn_scorer_gaps(&table, spec, &traces);
    }

    crate::report(&ReportOptions { run_dir: run.dir.clone(), scores_files: Vec::new(), compare: None })?;
    let aborted = traces.iter().filter(|t| t.terminal_status == TerminalStatus::Aborted).count();
    if aborted > 0 {
        warn!("{aborted} session(s) aborted; rerun the same command to retry them");
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Success)
}

/// What to send the scorer for `metric`. Similarity metrics put the
/// comparison text in the `article` field: the reference (or human edit)
/// for `bertscore`, the input summary for `bertscore_input`.
fn score_requests(metric: &str, traces: &[SessionTrace], pool: &[DocumentSummaryPair]) -> Vec<ScoreRequest> {
    let by_id: HashMap<&str, &DocumentSummaryPair> = pool.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = Vec::new();
    for t in traces {
        let Some(pair) = by_id.get(t.pair_id.as_str()) else { continue };
        let source = match metric {
            BERTSCORE => match pair.reference_summary.as_ref().or(pair.human_edit.as_ref()) {
                Some(r) => r.clone(),
                None => continue,
            },
            BERTSCORE_INPUT => {
                out.push(ScoreRequest {
                    id: t.pair_id.clone(),
                    article: t.input_summary.clone(),
                    summary: t.final_summary.clone(),
                });
                continue;
            }
            _ => pair.article.clone(),
        };
        out.push(ScoreRequest { id: t.pair_id.clone(), article: source.clone(), summary: t.final_summary.clone() });
        for k in 0..=t.edit_count() {
            if let Some(s) = t.summary_at(k) {
                out.push(ScoreRequest {
                    id: round_score_id(&t.pair_id, k),
                    article: source.clone(),
                    summary: s.into(),
                });
            }
        }
    }
    out
}

fn warn_scorer_gaps(table: &ScoreTable, spec: &ScorerSpec, traces: &[SessionTrace]) {
    for metric in &spec.metrics {
        let missing = traces.iter().filter(|t| table.get(metric, &t.pair_id).is_none()).count();
        if missing > 0 {
            warn!("{metric}: {missing} final summary score(s) unavailable; their cells stay blank");
        }
    }
}

fn load_scores(path: &Path) -> Result<ScoreTable, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("scores file {} does not exist", path.display())));
    }
    ScoreTable::load_csv(path).map_err(|e| CliError::Schema(e.to_string()))
}

pub struct ReportOptions {
    pub run_dir: PathBuf,
    pub scores_files: Vec<PathBuf>,
    /// Another run directory to compare against per error type.
    pub compare: Option<PathBuf>,
}

/// Everything `report` rendered, for callers that want to inspect it.
#[derive(Debug, Default)]
pub struct ReportOutput {
    /// `(file stem, table)` in rendering order.
    pub tables: Vec<(String, Table)>,
    pub critic: Option<CriticEvalReport>,
    pub edit: Option<EditReport>,
    pub series: Vec<RoundSeries>,
}

impl ReportOutput {
    pub fn table(&self, stem: &str) -> Option<&Table> {
        self.tables.iter().find(|(s, _)| s == stem).map(|(_, t)| t)
    }
}

/// Stored score files of a run plus any extra ones.
fn run_scores(run_dir: &Path, extra: &[PathBuf]) -> Result<ScoreTable, CliError> {
    let mut files = Vec::new();
    let config_path = run_dir.join(RUN_CONFIG);
    if config_path.exists() {
        let stored: RunConfig = read_json(&config_path)?;
        files.extend(stored.scores_files);
    }
    files.extend(extra.iter().cloned());
    let own = run_dir.join(SCORES);
    let mut table = if own.exists() { load_scores(&own)? } else { ScoreTable::default() };
    for f in &files {
        table.merge(load_scores(f)?);
    }
    Ok(table)
}

fn run_traces(run_dir: &Path) -> Result<Option<Vec<SessionTrace>>, CliError> {
    let path = run_dir.join(TRACES);
    if !path.exists() {
        return Ok(None);
    }
    load_traces(&path).map(Some).map_err(|e| CliError::Schema(e.to_string()))
}

/// Re-renders every table the run directory has data for. Missing pieces
/// (no critic evaluation, no traces, no external scores) leave their
/// tables out or their cells blank.
pub fn report(o: &ReportOptions) -> Result<ReportOutput, CliError> {
    let dir = &o.run_dir;
    if !dir.is_dir() {
        return Err(CliError::Config(format!("run directory {} does not exist", dir.display())));
    }
    let reports = dir.join(REPORTS);
    fs::create_dir_all(&reports).map_err(io_err(&reports))?;
    let scores = run_scores(dir, &o.scores_files)?;
    let corpus_path = dir.join(CORPUS);
    let records = if corpus_path.exists() { read_corpus(&corpus_path)? } else { Vec::new() };
    let mut out = ReportOutput::default();

    let critic_path = reports.join("critic_eval.json");
    if critic_path.exists() {
        let file: CriticEvalFile = read_json(&critic_path)?;
        out.tables.push(("critic".into(), critic_table(&[(file.critic.as_str(), &file.report)])));
        out.critic = Some(file.report);
    }

    if let Some(traces) = run_traces(dir)? {
        let pool: Vec<DocumentSummaryPair> = records.iter().filter(|r| r.edit_pool).map(|r| r.pair.clone()).collect();
        let er = edit_report(&traces, &pool, &scores);
        write_json(&reports.join("edit_report.json"), &er)?;
        let rows = [(er.strategy.as_str(), &er)];
        out.tables.push(("editing".into(), edit_table(&rows)));
        out.tables.push(("preservation".into(), preservation_table(&rows)));
        out.tables.push(("cot".into(), cot_table(&rows)));
        out.tables.push(("valid_edit".into(), valid_edit_table(&rows)));

        let mut metrics: Vec<String> = scores.metrics().map(str::to_string).collect();
        if metrics.is_empty() {
            metrics.push(QAFACTEVAL.to_string());
        }
        for m in &metrics {
            let series = per_round_series(&traces, &scores, m);
            let path = reports.join(format!("round_series_{m}.tsv"));
            fs::write(&path, series.to_tsv()).map_err(io_err(&path))?;
            out.series.push(series);
        }
        let path = reports.join("exit_histogram.tsv");
        fs::write(&path, out.series[0].histogram_tsv()).map_err(io_err(&path))?;

        if let Some(other) = &o.compare {
            let other_traces = run_traces(other)?
                .ok_or_else(|| CliError::Config(format!("{} has no {TRACES} to compare against", other.display())))?;
            let other_scores = run_scores(other, &[])?;
            let gold: HashMap<String, BTreeSet<ErrorType>> =
                records.iter().filter_map(|r| Some((r.pair.id.clone(), r.pair.gold_error_types.clone()?))).collect();
            let slices: Vec<_> = ErrorType::ALL
                .iter()
                .map(|&ty| error_type_slice(&other_traces, &traces, &gold, ty, &other_scores, &scores))
                .filter(|s| s.n > 0)
                .collect();
            write_json(&reports.join("slices.json"), &slices)?;
            let label_a = other_traces.first().map_or("baseline".to_string(), |t| t.strategy.name().to_string());
            out.tables.push(("slices".into(), slice_table(&label_a, &er.strategy, &slices)));
        }
        out.edit = Some(er);
    }

    let mut combined = String::new();
    for (stem, table) in &out.tables {
        let md = table.to_markdown();
        for (ext, text) in [("md", &md), ("csv", &table.to_csv())] {
            let path = reports.join(format!("{stem}.{ext}"));
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        combined.push_str(&md);
        combined.push('\n');
    }
    let path = reports.join("report.md");
    fs::write(&path, combined).map_err(io_err(&path))?;
    for m in [QAFACTEVAL, DAE, FACTCC, BERTSCORE] {
        if !scores.has_metric(m) {
            info!("no {m} scores; its cells are blank");
        }
    }
    Ok(out)
}
