use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::{
    balanced_accuracy, mean, pearson, rouge_l, rouge_l_tokens, rouge_n_tokens, spearman, tokenize, type_macro_f1,
};
use super::scores::{round_score_id, ScoreTable, BERTSCORE, BERTSCORE_INPUT, DAE, FACTCC, QAFACTEVAL};
use super::EvalError;
use crate::domain::{
    binarize_human, bucket_to_likert_with, BucketScheme, Dataset, DocumentSummaryPair, ErrorType, Faithfulness,
    LikertScore,
};
use crate::engine::{SessionTrace, TerminalStatus};
use crate::parse::{CriticVerdict, VerdictValue};

/// One critic judgment of a human-annotated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticObservation {
    pub pair_id: String,
    pub dataset: Dataset,
    pub human_score: f64,
    /// A verdict without a value marks a failed call or unparseable reply.
    pub verdict: CriticVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticEvalOptions {
    pub bucket_scheme: BucketScheme,
    /// Lowest scale verdict read as a faithful prediction.
    pub faithful_threshold: LikertScore,
}

impl Default for CriticEvalOptions {
    fn default() -> Self {
        CriticEvalOptions { bucket_scheme: BucketScheme::default(), faithful_threshold: LikertScore::MAX }
    }
}

/// Correlation and balanced accuracy over one partition. A statistic is
/// `None` when it is undefined for the data (constant scores, one class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub n: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticEvalReport {
    pub options: CriticEvalOptions,
    pub overall: CorrelationRow,
    /// Keyed by partition name (`CNN_DM`, `XSUM`, ...).
    pub partitions: BTreeMap<String, CorrelationRow>,
    /// Pairs whose critic call failed or whose reply had no score.
    pub failed_ids: Vec<String>,
}

fn verdict_numeric(v: VerdictValue) -> f64 {
    match v {
        VerdictValue::Scale(s) => f64::from(s.value()),
        VerdictValue::Binary(b) => f64::from(b),
    }
}

fn verdict_label(v: VerdictValue, threshold: LikertScore) -> Faithfulness {
    let faithful = match v {
        VerdictValue::Scale(s) => s >= threshold,
        VerdictValue::Binary(b) => b == 1,
    };
    if faithful {
        Faithfulness::Faithful
    } else {
        Faithfulness::Unfaithful
    }
}

fn correlation_row(rows: &[(f64, f64, Faithfulness, Faithfulness)]) -> CorrelationRow {
    let critic: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let human: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let pred: Vec<Faithfulness> = rows.iter().map(|r| r.2).collect();
    let gold: Vec<Faithfulness> = rows.iter().map(|r| r.3).collect();
    CorrelationRow {
        n: rows.len(),
        pearson: pearson(&critic, &human).ok(),
        spearman: spearman(&critic, &human).ok(),
        balanced_accuracy: balanced_accuracy(&pred, &gold).ok(),
    }
}

/// Correlates critic verdicts with bucketed human scores, and compares
/// binarized verdicts with binarized human scores.
pub fn critic_eval_report(observations: &[CriticObservation], options: CriticEvalOptions) -> CriticEvalReport {
    let mut failed_ids = Vec::new();
    let mut by_partition: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut all = Vec::new();
    for obs in observations {
        let Some(value) = obs.verdict.value else {
            failed_ids.push(obs.pair_id.clone());
            continue;
        };
        let (Ok(bucket), Ok(gold)) =
            (bucket_to_likert_with(obs.human_score, options.bucket_scheme), binarize_human(obs.human_score))
        else {
            warn!("{}: human score {} out of range; skipped", obs.pair_id, obs.human_score);
            failed_ids.push(obs.pair_id.clone());
            continue;
        };
        let row =
            (verdict_numeric(value), f64::from(bucket.value()), verdict_label(value, options.faithful_threshold), gold);
        by_partition.entry(obs.dataset.as_str().to_string()).or_default().push(row);
        all.push(row);
    }
    CriticEvalReport {
        options,
        overall: correlation_row(&all),
        partitions: by_partition.iter().map(|(k, rows)| (k.clone(), correlation_row(rows))).collect(),
        failed_ids,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditRates {
    pub pool_size: usize,
    pub modified: usize,
    /// Modified and finally judged faithful by the critic.
    pub valid: usize,
    /// Percent of the pool.
    pub edit_rate: f64,
    /// Percent of the pool. A reconstruction: modified AND the final
    /// critic verdict was faithful.
    pub valid_edit_rate: f64,
}

/// Edit % and ValidEdit % over the pool ids. Pool ids without a trace
/// count as unmodified.
pub fn edit_rates(traces: &[SessionTrace], pool: &BTreeSet<String>) -> Result<EditRates, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let by_id: HashMap<&str, &SessionTrace> = traces.iter().map(|t| (t.pair_id.as_str(), t)).collect();
    let (mut modified, mut valid, mut missing) = (0, 0, 0);
    for id in pool {
        match by_id.get(id.as_str()) {
            Some(t) if t.modified() => {
                modified += 1;
                if t.terminal_status == TerminalStatus::JudgedFaithful {
                    valid += 1;
                }
            }
            Some(_) => {}
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("{missing} pool id(s) have no trace; counted as unmodified");
    }
    let pct = |k: usize| k as f64 * 100.0 / pool.len() as f64;
    Ok(EditRates { pool_size: pool.len(), modified, valid, edit_rate: pct(modified), valid_edit_rate: pct(valid) })
}

/// Sessions whose critic asked for an edit of the input summary.
pub fn critic_flagged_ids(traces: &[SessionTrace]) -> BTreeSet<String> {
    traces.iter().filter(|t| t.first_edit().is_some()).map(|t| t.pair_id.clone()).collect()
}

/// Mean ROUGE F1 scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeSummary {
    pub n: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

impl RougeSummary {
    fn over<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Option<Self> {
        let scores: Vec<[f64; 3]> = pairs
            .into_iter()
            .map(|(cand, reference)| {
                let (c, r) = (tokenize(cand), tokenize(reference));
                [rouge_n_tokens(&c, &r, 1).f1, rouge_n_tokens(&c, &r, 2).f1, rouge_l_tokens(&c, &r).f1]
            })
            .collect();
        let col = |i: usize| mean(scores.iter().map(|s| s[i])).unwrap_or(0.0);
        (!scores.is_empty()).then(|| RougeSummary { n: scores.len(), rouge1: col(0), rouge2: col(1), rouge_l: col(2) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub strategy: String,
    pub sessions: usize,
    /// Pool = the human-flagged unfaithful pairs that were run.
    pub human_pool: Option<EditRates>,
    /// Pool = sessions whose critic flagged the input summary.
    pub critic_pool: Option<EditRates>,
    /// Final summaries against reference summaries.
    pub rouge_reference: Option<RougeSummary>,
    /// Final summaries against human post-edits.
    pub rouge_human_edit: Option<RougeSummary>,
    /// Final summaries against the input summaries.
    pub preservation: Option<RougeSummary>,
    pub span_rouge_l: Option<f64>,
    pub type_macro_f1: Option<f64>,
    /// Mean external score of the final summaries, by metric; `None` when
    /// no scores were supplied.
    pub external: BTreeMap<String, Option<f64>>,
    pub status_counts: BTreeMap<String, usize>,
    pub failed_ids: Vec<String>,
}

const EXTERNAL_METRICS: [&str; 5] = [QAFACTEVAL, DAE, FACTCC, BERTSCORE, BERTSCORE_INPUT];

/// Assembles the editing metrics for one strategy. `pairs` is the edit
/// pool the traces were produced from.
pub fn edit_report(traces: &[SessionTrace], pairs: &[DocumentSummaryPair], scores: &ScoreTable) -> EditReport {
    let pair_by_id: HashMap<&str, &DocumentSummaryPair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let strategy = traces.first().map(|t| t.strategy);
    let with_pair: Vec<(&SessionTrace, &DocumentSummaryPair)> =
        traces.iter().filter_map(|t| pair_by_id.get(t.pair_id.as_str()).map(|p| (t, *p))).collect();

    let pool: BTreeSet<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let human_pool = edit_rates(traces, &pool).ok();
    let critic_pool = edit_rates(traces, &critic_flagged_ids(traces)).ok();

    let rouge_reference = RougeSummary::over(
        with_pair.iter().filter_map(|(t, p)| Some((t.final_summary.as_str(), p.reference_summary.as_deref()?))),
    );
    let rouge_human_edit = RougeSummary::over(
        with_pair.iter().filter_map(|(t, p)| Some((t.final_summary.as_str(), p.human_edit.as_deref()?))),
    );
    let preservation = RougeSummary::over(traces.iter().map(|t| (t.final_summary.as_str(), t.input_summary.as_str())));

    let span_rouge_l = strategy.filter(|s| s.predicts_span()).and_then(|_| {
        mean(with_pair.iter().filter_map(|(t, p)| {
            let gold = p.gold_span.as_deref()?;
            let edit = t.first_edit()?;
            Some(rouge_l(edit.span.as_deref().unwrap_or(""), gold).f1)
        }))
    });
    let type_macro_f1 = strategy.filter(|s| s.predicts_types()).and_then(|_| {
        let (pred, gold): (Vec<_>, Vec<_>) = with_pair
            .iter()
            .filter_map(|(t, p)| {
                let gold = p.gold_error_types.clone()?;
                let edit = t.first_edit()?;
                Some((edit.error_types.clone().unwrap_or_default(), gold))
            })
            .unzip();
        type_macro_f1(&pred, &gold).ok()
    });

    let ids: Vec<String> = traces.iter().map(|t| t.pair_id.clone()).collect();
    let external = EXTERNAL_METRICS
        .iter()
        .map(|&m| (m.to_string(), mean(scores.lookup_all(m, &ids).into_iter().flatten())))
        .collect();

    let mut status_counts = BTreeMap::new();
    for t in traces {
        *status_counts.entry(format!("{:?}", t.terminal_status)).or_insert(0) += 1;
    }
    EditReport {
        strategy: strategy.map_or_else(String::new, |s| s.name().to_string()),
        sessions: traces.len(),
        human_pool,
        critic_pool,
        rouge_reference,
        rouge_human_edit,
        preservation,
        span_rouge_l,
        type_macro_f1,
        external,
        status_counts,
        failed_ids: traces
            .iter()
            .filter(|t| t.terminal_status == TerminalStatus::Aborted)
            .map(|t| t.pair_id.clone())
            .collect(),
    }
}

/// Two strategies compared on the pairs whose gold types contain a type
/// that strategy B also predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub error_type: ErrorType,
    pub n: usize,
    pub ids: Vec<String>,
    /// Metric name -> (strategy A mean, strategy B mean).
    pub metrics: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

pub fn error_type_slice(
    traces_a: &[SessionTrace],
    traces_b: &[SessionTrace],
    gold_types: &HashMap<String, BTreeSet<ErrorType>>,
    error_type: ErrorType,
    scores_a: &ScoreTable,
    scores_b: &ScoreTable,
) -> SliceReport {
    let ids: Vec<String> = traces_b
        .iter()
        .filter(|t| gold_types.get(&t.pair_id).is_some_and(|g| g.contains(&error_type)))
        .filter(|t| t.predicted_types().is_some_and(|p| p.contains(&error_type)))
        .map(|t| t.pair_id.clone())
        .collect();
    let id_set: BTreeSet<String> = ids.iter().cloned().collect();
    let on_slice = |traces: &[SessionTrace]| -> Vec<SessionTrace> {
        traces.iter().filter(|t| id_set.contains(&t.pair_id)).cloned().collect()
    };
    let (slice_a, slice_b) = (on_slice(traces_a), on_slice(traces_b));

    let mut metrics = BTreeMap::new();
    let rate = |t: &[SessionTrace]| edit_rates(t, &id_set).ok().map(|r| r.edit_rate);
    metrics.insert("edit %".to_string(), (rate(&slice_a), rate(&slice_b)));
    for m in [QAFACTEVAL, DAE, FACTCC, BERTSCORE] {
        let avg = |table: &ScoreTable| mean(ids.iter().filter_map(|id| table.get(m, id)));
        metrics.insert(m.to_string(), (avg(scores_a), avg(scores_b)));
    }
    SliceReport { error_type, n: ids.len(), ids, metrics }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub pair_id: String,
    pub score: Option<f64>,
}

/// Score of every intermediate summary by edit round, plus how many
/// sessions stopped after each number of edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSeries {
    pub metric: String,
    pub rows: Vec<RoundRow>,
    /// Edits made -> sessions. Sums to the number of sessions.
    pub exit_histogram: BTreeMap<usize, usize>,
}

impl RoundSeries {
    pub fn distinct_rounds(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.round).collect()
    }

    /// Plot-ready `round\tpair_id\tscore` rows; missing scores are blank.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("round\tpair_id\t{}\n", self.metric);
        for r in &self.rows {
            let score = r.score.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{}\t{}\t{}", r.round, r.pair_id, score);
        }
        out
    }

    pub fn histogram_tsv(&self) -> String {
        let mut out = String::from("edits\tsessions\n");
        for (k, n) in &self.exit_histogram {
            let _ = writeln!(out, "{k}\t{n}");
        }
        out
    }
}

/// One row per edit round of every session, scored from `scores` under the
/// ids given by [`round_score_id`].
pub fn per_round_series(traces: &[SessionTrace], scores: &ScoreTable, metric: &str) -> RoundSeries {
    let mut rows = Vec::new();
    let mut exit_histogram = BTreeMap::new();
    for t in traces {
        let edits = t.edit_count();
        *exit_histogram.entry(edits).or_insert(0) += 1;
        for k in 1..=edits {
            rows.push(RoundRow {
                round: k,
                pair_id: t.pair_id.clone(),
                score: scores.get(metric, &round_score_id(&t.pair_id, k)),
            });
        }
    }
    RoundSeries { metric: metric.to_string(), rows, exit_histogram }
}
