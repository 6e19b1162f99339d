use serde::Serialize;

use super::report::{CorrelationRow, CriticEvalReport, EditReport, RougeSummary, SliceReport};
use super::scores::{BERTSCORE, BERTSCORE_INPUT, DAE, FACTCC, QAFACTEVAL};
use crate::domain::Dataset;

/// A rendered report table. Unavailable values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Printed under the markdown table.
    pub notes: Vec<String>,
}

impl Table {
    fn new(title: &str, headers: &[&str]) -> Self {
        Table {
            title: title.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let mut out = format!("### {}\n\n", self.title);
        out.push_str(&line(&self.headers));
        out.push_str(&line(&vec!["---".to_string(); self.headers.len()]));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        for note in &self.notes {
            out.push_str(&format!("\n_{note}_\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }
}

fn cell(value: Option<f64>, scale: f64, decimals: usize) -> String {
    value.map_or_else(String::new, |v| format!("{:.*}", decimals, v * scale))
}

fn partition_label(key: &str) -> &str {
    match key {
        k if k == Dataset::CnnDm.as_str() => "CNN/DM",
        k if k == Dataset::Xsum.as_str() => "XSum",
        k if k == Dataset::Defacto.as_str() => "DeFacto",
        other => other,
    }
}

/// PCC, ρ and BAcc for CNN/DM, XSum (plus any other partition present)
/// and overall, one row per critic.
pub fn critic_table(rows: &[(&str, &CriticEvalReport)]) -> Table {
    let mut partitions = vec![Dataset::CnnDm.as_str().to_string(), Dataset::Xsum.as_str().to_string()];
    for (_, r) in rows {
        for k in r.partitions.keys() {
            if !partitions.contains(k) {
                partitions.push(k.clone());
            }
        }
    }
    let mut groups: Vec<String> = partitions.iter().map(|p| partition_label(p).to_string()).collect();
    groups.push("Overall".into());
    let mut headers = vec!["Critic".to_string()];
    for g in &groups {
        for stat in ["PCC", "ρ", "BAcc"] {
            headers.push(format!("{g} {stat}"));
        }
    }
    let mut table = Table::new("Critic agreement with human judgments", &[]);
    table.headers = headers;
    for (label, report) in rows {
        let mut row = vec![label.to_string()];
        let stats = |r: Option<&CorrelationRow>| {
            [
                cell(r.and_then(|r| r.pearson), 1.0, 3),
                cell(r.and_then(|r| r.spearman), 1.0, 3),
                cell(r.and_then(|r| r.balanced_accuracy), 1.0, 3),
            ]
        };
        for p in &partitions {
            row.extend(stats(report.partitions.get(p)));
        }
        row.extend(stats(Some(&report.overall)));
        table.rows.push(row);
        if !report.failed_ids.is_empty() {
            table
                .notes
                .push(format!("{label}: {} pair(s) without a critic score were excluded", report.failed_ids.len()));
        }
    }
    table
}

fn rouge_cells(r: Option<&RougeSummary>) -> [String; 3] {
    [cell(r.map(|r| r.rouge1), 100.0, 2), cell(r.map(|r| r.rouge2), 100.0, 2), cell(r.map(|r| r.rouge_l), 100.0, 2)]
}

fn external(r: &EditReport, metric: &str) -> Option<f64> {
    r.external.get(metric).copied().flatten()
}

/// QAFE, DAE, FactCC, R1, R2, RL, BS-F1 and Edit % per strategy. ROUGE is
/// against reference summaries, or human post-edits where there are none.
pub fn edit_table(rows: &[(&str, &EditReport)]) -> Table {
    let mut table =
        Table::new("Post-editing results", &["Method", "QAFE", "DAE", "FactCC", "R1", "R2", "RL", "BS-F1", "Edit %"]);
    for (label, r) in rows {
        let mut row = vec![label.to_string()];
        row.push(cell(external(r, QAFACTEVAL), 1.0, 3));
        row.push(cell(external(r, DAE), 1.0, 3));
        row.push(cell(external(r, FACTCC), 1.0, 3));
        row.extend(rouge_cells(r.rouge_reference.as_ref().or(r.rouge_human_edit.as_ref())));
        row.push(cell(external(r, BERTSCORE), 100.0, 2));
        row.push(cell(r.human_pool.map(|p| p.edit_rate), 1.0, 1));
        table.rows.push(row);
    }
    table
}

/// Similarity of the final summaries to the input summaries.
pub fn preservation_table(rows: &[(&str, &EditReport)]) -> Table {
    let mut table = Table::new("Input-summary preservation", &["Method", "R1", "R2", "RL", "BS-F1"]);
    for (label, r) in rows {
        let mut row = vec![label.to_string()];
        row.extend(rouge_cells(r.preservation.as_ref()));
        row.push(cell(external(r, BERTSCORE_INPUT), 100.0, 2));
        table.rows.push(row);
    }
    table
}

/// Quality of the chain-of-thought predictions from the first edit round.
pub fn cot_table(rows: &[(&str, &EditReport)]) -> Table {
    let mut table = Table::new("Predicted spans and error types", &["Method", "Span RL", "Type F1"]);
    for (label, r) in rows {
        table.rows.push(vec![label.to_string(), cell(r.span_rouge_l, 100.0, 2), cell(r.type_macro_f1, 100.0, 2)]);
    }
    table
}

pub fn valid_edit_table(rows: &[(&str, &EditReport)]) -> Table {
    let mut table = Table::new(
        "Edit and ValidEdit rates",
        &["Method", "Edit %", "ValidEdit %", "Edit % (critic-flagged)", "ValidEdit % (critic-flagged)"],
    );
    for (label, r) in rows {
        table.rows.push(vec![
            label.to_string(),
            cell(r.human_pool.map(|p| p.edit_rate), 1.0, 1),
            cell(r.human_pool.map(|p| p.valid_edit_rate), 1.0, 1),
            cell(r.critic_pool.map(|p| p.edit_rate), 1.0, 1),
            cell(r.critic_pool.map(|p| p.valid_edit_rate), 1.0, 1),
        ]);
    }
    table.notes.push(
        "ValidEdit % is a reconstructed definition: the summary was modified and the critic judged the final \
         summary faithful."
            .into(),
    );
    table.notes.push(
        "Edit % counts whitespace-normalized changes over human-flagged unfaithful summaries; the critic-flagged \
         columns use the summaries the critic sent to the editor."
            .into(),
    );
    table
}

pub fn slice_table(label_a: &str, label_b: &str, slices: &[SliceReport]) -> Table {
    let mut table =
        Table::new("Results by correctly predicted error type", &["Error type", "Metric", label_a, label_b]);
    for s in slices {
        let name = format!("{} (n={})", s.error_type.short_name(), s.n);
        for (metric, (a, b)) in &s.metrics {
            let scale = if metric == BERTSCORE { 100.0 } else { 1.0 };
            table.rows.push(vec![name.clone(), metric.clone(), cell(*a, scale, 3), cell(*b, scale, 3)]);
        }
    }
    table
}
