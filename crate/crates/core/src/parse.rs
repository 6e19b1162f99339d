//! Parsing of critic and editor responses.
//!
//! Formatting failures are reported as data (`ParseStatus`) rather than
//! errors, because how often a model drifts from the requested format is
//! itself a measured quantity.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use log::debug;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{format_error_types, ErrorType, LikertScore};
use crate::prompt::{CriticMode, EditorStrategy, Section};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no {mode} score found in critic response {raw:?}")]
    NoScoreFound { mode: CriticMode, raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum VerdictValue {
    Scale(LikertScore),
    Binary(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticVerdict {
    /// `None` when the response held no usable score.
    pub value: Option<VerdictValue>,
    pub raw: String,
}

impl CriticVerdict {
    pub fn mode(&self) -> Option<CriticMode> {
        self.value.map(|v| match v {
            VerdictValue::Scale(_) => CriticMode::Scale5,
            VerdictValue::Binary(_) => CriticMode::Binary,
        })
    }

    pub fn likert(&self) -> Option<LikertScore> {
        match self.value {
            Some(VerdictValue::Scale(s)) => Some(s),
            _ => None,
        }
    }

    /// Parses `raw`; an unparseable response yields a verdict with no value.
    pub fn from_response(raw: &str, mode: CriticMode) -> Self {
        match parse_critic(raw, mode) {
            Ok(v) => v,
            Err(e) => {
                debug!("{e}");
                CriticVerdict { value: None, raw: raw.to_string() }
            }
        }
    }
}

/// Whether the verdict calls for an edit with the default stop rule
/// (only a 5 counts as faithful on the scale).
pub fn critic_needs_edit(verdict: &CriticVerdict) -> bool {
    critic_needs_edit_with(verdict, LikertScore::MAX)
}

/// Scale verdicts below `stop_threshold` need an edit; binary verdicts need
/// one when they are 0. Missing scores count as unfaithful.
pub fn critic_needs_edit_with(verdict: &CriticVerdict, stop_threshold: LikertScore) -> bool {
    match verdict.value {
        Some(VerdictValue::Scale(s)) => s < stop_threshold,
        Some(VerdictValue::Binary(b)) => b == 0,
        None => true,
    }
}

static LABELLED_SCORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)ranking[^:\n]*:[\s*_]*(\d+)\b").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").unwrap());

fn in_range(n: &str, mode: CriticMode) -> Option<VerdictValue> {
    let n: u8 = n.parse().ok()?;
    match mode {
        CriticMode::Scale5 => LikertScore::new(n).ok().map(VerdictValue::Scale),
        CriticMode::Binary => (n <= 1).then_some(VerdictValue::Binary(n)),
    }
}

/// Accepts a bare digit, a "Ranking ...: d" line, or else the first
/// whole-number token in range for `mode`.
pub fn parse_critic(raw: &str, mode: CriticMode) -> Result<CriticVerdict, ParseError> {
    let verdict = |value| CriticVerdict { value: Some(value), raw: raw.to_string() };
    let trimmed = raw.trim().trim_matches(|c: char| c == '*' || c == '_' || c == '.');
    if let Some(v) = in_range(trimmed, mode) {
        return Ok(verdict(v));
    }
    for cap in LABELLED_SCORE.captures_iter(raw) {
        if let Some(v) = in_range(&cap[1], mode) {
            return Ok(verdict(v));
        }
    }
    for m in NUMBER.find_iter(raw) {
        if m.as_str().contains('.') {
            continue;
        }
        if let Some(v) = in_range(m.as_str(), mode) {
            return Ok(verdict(v));
        }
    }
    Err(ParseError::NoScoreFound { mode, raw: raw.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseStatus {
    /// Every mandatory section was found.
    Clean,
    /// Sections were missing but a usable summary paragraph was found.
    Recovered,
    /// No usable summary, or the model refused.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_types: Option<BTreeSet<ErrorType>>,
    /// Empty when `parse_status` is `Failed`.
    pub edited_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub parse_status: ParseStatus,
    pub raw: String,
}

impl EditorOutput {
    pub fn failed(raw: impl Into<String>) -> Self {
        EditorOutput {
            span: None,
            error_types: None,
            edited_summary: String::new(),
            reasoning: None,
            parse_status: ParseStatus::Failed,
            raw: raw.into(),
        }
    }

    pub fn is_usable(&self) -> bool {
        self.parse_status != ParseStatus::Failed
    }
}

/// Phrases that mark a refusal when no section header could be parsed.
pub const REFUSAL_PHRASES: &[&str] = &[
    "cannot",
    "can't",
    "can not",
    "unable to",
    "as an ai",
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "i won't",
    "i will not",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeaderKind {
    Section(Section),
    /// Recognised so that it terminates the previous section, then dropped.
    Ignored,
}

const HEADER_ALIASES: &[(&str, HeaderKind)] = &[
    ("inconsistent span", HeaderKind::Section(Section::Span)),
    ("predicted error span", HeaderKind::Section(Section::Span)),
    ("predicted span", HeaderKind::Section(Section::Span)),
    ("error span", HeaderKind::Section(Section::Span)),
    ("inconsistent error types", HeaderKind::Section(Section::ErrorTypes)),
    ("error types", HeaderKind::Section(Section::ErrorTypes)),
    ("error type", HeaderKind::Section(Section::ErrorTypes)),
    ("post-edited summary", HeaderKind::Section(Section::PostEditedSummary)),
    ("post edited summary", HeaderKind::Section(Section::PostEditedSummary)),
    ("postedited summary", HeaderKind::Section(Section::PostEditedSummary)),
    ("edited summary", HeaderKind::Section(Section::PostEditedSummary)),
    ("reasoning", HeaderKind::Section(Section::Reasoning)),
    ("human-annotated error span", HeaderKind::Ignored),
];

static HEADER_LINE: LazyLock<Regex> = LazyLock::new(|| {
    let names: Vec<String> = HEADER_ALIASES.iter().map(|(n, _)| regex::escape(n)).collect();
    // Optional markdown decoration (#, *, _, >, list bullets) around the name,
    // then a colon; the rest of the line starts the body.
    Regex::new(&format!(r"(?i)^[\s>#*_-]*(?:\d+[.)]\s*)?[*_]*({})[*_\s]*:[*_]*\s*(.*)$", names.join("|"))).unwrap()
});

fn header_kind(name: &str) -> HeaderKind {
    let name = name.to_lowercase();
    HEADER_ALIASES.iter().find(|(n, _)| *n == name).map(|(_, k)| *k).expect("regex only matches known headers")
}

/// Splits `raw` into `(header, body)` pairs in order of appearance.
fn sections(raw: &str) -> Vec<(HeaderKind, String)> {
    let mut out: Vec<(HeaderKind, Vec<&str>)> = Vec::new();
    for line in raw.lines() {
        if let Some(cap) = HEADER_LINE.captures(line) {
            let first = cap.get(2).map_or("", |m| m.as_str());
            out.push((header_kind(&cap[1]), vec![first]));
        } else if let Some((_, body)) = out.last_mut() {
            body.push(line);
        }
    }
    out.into_iter().map(|(k, lines)| (k, clean_body(&lines.join("\n")))).collect()
}

fn clean_body(body: &str) -> String {
    body.trim().trim_matches(|c: char| c == '*' || c == '_').trim().to_string()
}

fn looks_like_refusal(raw: &str) -> bool {
    let lower = raw.to_lowercase().replace('\u{2019}', "'");
    REFUSAL_PHRASES.iter().any(|p| lower.contains(p))
}

/// Last blank-line separated paragraph, unless it starts with a header.
fn final_paragraph(raw: &str) -> Option<String> {
    let para = raw.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).last()?;
    if para.lines().next().is_some_and(|l| HEADER_LINE.is_match(l)) {
        return None;
    }
    Some(clean_body(para))
}

/// Extracts the sections of `strategy`'s answer format from `raw`.
pub fn parse_editor(raw: &str, strategy: EditorStrategy) -> EditorOutput {
    let found = sections(raw);
    let wanted = strategy.footer();
    let get = |section: Section| -> Option<String> {
        if !wanted.contains(&section) {
            return None;
        }
        found
            .iter()
            .find(|(k, body)| *k == HeaderKind::Section(section) && !body.is_empty())
            .map(|(_, body)| body.clone())
    };

    let span = get(Section::Span);
    let error_types = get(Section::ErrorTypes).map(|t| parse_error_types(&t));
    let reasoning = get(Section::Reasoning);
    let summary = get(Section::PostEditedSummary);

    // Reasoning is requested but not needed to use the edit.
    let mandatory_present = wanted.iter().all(|&s| match s {
        Section::Span => span.is_some(),
        Section::ErrorTypes => error_types.is_some(),
        Section::PostEditedSummary => summary.is_some(),
        Section::Reasoning => true,
    });

    let any_header = !found.is_empty();
    let (edited_summary, parse_status) = match summary {
        Some(s) if mandatory_present => (s, ParseStatus::Clean),
        Some(s) => (s, ParseStatus::Recovered),
        None if !any_header && looks_like_refusal(raw) => (String::new(), ParseStatus::Failed),
        None => match final_paragraph(raw) {
            Some(p) if !p.is_empty() => (p, ParseStatus::Recovered),
            _ => (String::new(), ParseStatus::Failed),
        },
    };
    if parse_status == ParseStatus::Failed {
        return EditorOutput::failed(raw);
    }
    EditorOutput { span, error_types, edited_summary, reasoning, parse_status, raw: raw.to_string() }
}

static TYPE_SEPARATORS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\s*(?:[,;/\n]|\band\b|&)\s*").unwrap());

/// Maps a free-text list of error types onto the taxonomy. Unknown tokens
/// are dropped.
pub fn parse_error_types(fragment: &str) -> BTreeSet<ErrorType> {
    let mut out = BTreeSet::new();
    for token in TYPE_SEPARATORS.split(fragment) {
        let token = token.trim().trim_matches(|c: char| !c.is_alphanumeric()).trim();
        if token.is_empty() || ErrorType::is_no_error_code(token) {
            continue;
        }
        match token.parse::<ErrorType>() {
            Ok(t) => {
                out.insert(t);
            }
            Err(_) => debug!("dropping unknown error type {token:?}"),
        }
    }
    out
}

/// Renders `output` in `strategy`'s answer format; the inverse of
/// [`parse_editor`] for well-formed outputs.
pub fn render_editor_output(output: &EditorOutput, strategy: EditorStrategy) -> String {
    let mut parts = Vec::new();
    for &section in strategy.footer() {
        let body = match section {
            Section::Span => output.span.clone(),
            Section::ErrorTypes => output.error_types.as_ref().map(format_error_types),
            Section::PostEditedSummary => Some(output.edited_summary.clone()),
            Section::Reasoning => output.reasoning.clone(),
        };
        if let Some(body) = body {
            parts.push(format!("{} {}", section.header(), body));
        }
    }
    parts.join("\n")
}
