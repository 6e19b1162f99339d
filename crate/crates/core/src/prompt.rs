//! Prompt construction for the critic and the editor.
//!
//! Rendering is a pure function of its arguments: nothing from earlier
//! rounds of a session can reach a prompt.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatRequest, Message};
use crate::domain::{format_error_types, DocumentSummaryPair, ErrorType};

/// Demonstrations shipped with the crate.
pub const DEFAULT_DEMOS_JSON: &str = include_str!("../data/critic_demos.json");

/// Number of sentences kept from each demonstration article.
pub const DEMO_ARTICLE_SENTENCES: usize = 5;

pub const CRITIC_SYSTEM: &str = "You are a helpful assistant that scores the faithfulness of a generated summary with respect to the summarized article.";

const SCALE_INSTRUCTION: &str =
    "Score as 5 faithful, 4 mostly faithful, 3 neutral, 2 mostly unfaithful, or 1 unfaithful.";
const SCALE_ANSWER_CUE: &str = "Ranking (5, 4, 3, 2, or 1):";
const BINARY_INSTRUCTION: &str = "Score as 1 factual or 0 nonfactual.";
const BINARY_ANSWER_CUE: &str = "Ranking (1 or 0):";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("no {0} demonstrations configured")]
    MissingDemos(CriticMode),
    #[error("invalid demonstrations: {0}")]
    InvalidDemos(String),
    #[error("strategy {strategy} needs a gold {field} on pair {pair_id}")]
    MissingGoldAnnotation { strategy: EditorStrategy, field: &'static str, pair_id: String },
    #[error("empty {0}")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    #[default]
    #[serde(alias = "scale")]
    Scale5,
    Binary,
}

impl fmt::Display for CriticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriticMode::Scale5 => "scale",
            CriticMode::Binary => "binary",
        })
    }
}

impl FromStr for CriticMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scale" | "scale5" => Ok(CriticMode::Scale5),
            "binary" => Ok(CriticMode::Binary),
            other => Err(format!("unknown critic mode {other:?} (expected scale or binary)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditorStrategy {
    Editor,
    EditorSpan,
    EditorType,
    EditorSpanType,
    GoldSpan,
    GoldType,
    GoldSpanType,
}

/// A labelled section the editor is asked to fill in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Span,
    ErrorTypes,
    PostEditedSummary,
    Reasoning,
}

impl Section {
    pub fn header(self) -> &'static str {
        match self {
            Section::Span => "Inconsistent span:",
            Section::ErrorTypes => "Error types:",
            Section::PostEditedSummary => "Post-edited summary:",
            Section::Reasoning => "Reasoning:",
        }
    }
}

impl EditorStrategy {
    pub const ALL: [EditorStrategy; 7] = [
        EditorStrategy::Editor,
        EditorStrategy::EditorSpan,
        EditorStrategy::EditorType,
        EditorStrategy::EditorSpanType,
        EditorStrategy::GoldSpan,
        EditorStrategy::GoldType,
        EditorStrategy::GoldSpanType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EditorStrategy::Editor => "Editor",
            EditorStrategy::EditorSpan => "EditorSpan",
            EditorStrategy::EditorType => "EditorType",
            EditorStrategy::EditorSpanType => "EditorSpan+Type",
            EditorStrategy::GoldSpan => "GoldSpan",
            EditorStrategy::GoldType => "GoldType",
            EditorStrategy::GoldSpanType => "GoldSpan+Type",
        }
    }

    /// Sections of the answer format, in the order they are listed.
    /// Snake-case name for file names.
    pub fn file_stem(self) -> &'static str {
        match self {
            EditorStrategy::Editor => "editor",
            EditorStrategy::EditorSpan => "editor_span",
            EditorStrategy::EditorType => "editor_type",
            EditorStrategy::EditorSpanType => "editor_span_type",
            EditorStrategy::GoldSpan => "gold_span",
            EditorStrategy::GoldType => "gold_type",
            EditorStrategy::GoldSpanType => "gold_span_type",
        }
    }

    pub fn footer(self) -> &'static [Section] {
        use Section::*;
        match self {
            EditorStrategy::Editor => &[PostEditedSummary],
            EditorStrategy::EditorSpan => &[Span, PostEditedSummary],
            EditorStrategy::EditorType => &[ErrorTypes, PostEditedSummary],
            EditorStrategy::EditorSpanType => &[Span, ErrorTypes, PostEditedSummary, Reasoning],
            EditorStrategy::GoldSpan | EditorStrategy::GoldType | EditorStrategy::GoldSpanType => {
                &[PostEditedSummary, Reasoning]
            }
        }
    }

    pub fn predicts_span(self) -> bool {
        self.footer().contains(&Section::Span)
    }

    pub fn predicts_types(self) -> bool {
        self.footer().contains(&Section::ErrorTypes)
    }

    pub fn uses_gold_span(self) -> bool {
        matches!(self, EditorStrategy::GoldSpan | EditorStrategy::GoldSpanType)
    }

    pub fn uses_gold_types(self) -> bool {
        matches!(self, EditorStrategy::GoldType | EditorStrategy::GoldSpanType)
    }

    /// Whether the prompt opens with the error-type glossary.
    pub fn has_glossary(self) -> bool {
        !matches!(self, EditorStrategy::Editor | EditorStrategy::EditorSpan)
    }

    fn instruction(self) -> &'static str {
        match self {
            EditorStrategy::Editor => "Please edit the summary to make it more consistent with the source article",
            EditorStrategy::EditorSpan => "Find the span in the summary that is inconsistent with the source article, then edit the summary to make it more consistent with the source article",
            EditorStrategy::EditorType => "Find the error type(s) in the summary that is inconsistent with the source article, then edit the summary based on the inconsistent error types to make it more consistent with the source article",
            EditorStrategy::EditorSpanType => "Find the span and corresponding error type(s) in the summary that is inconsistent with the source article, then edit the summary based on the inconsistent span and error types to make it more consistent with the source article",
            EditorStrategy::GoldSpan => "Given the span(s) in the summary that are inconsistent with the source article, edit the summary based on the span to make it more consistent with the source article",
            EditorStrategy::GoldType => "Given the error type(s) in the summary that are inconsistent with the source article, edit the summary based on the error types to make it more consistent with the source article",
            EditorStrategy::GoldSpanType => "Given the span(s) and the error type(s) in the summary that are inconsistent with the source article, edit the summary based on the span and error types to make it more consistent with the source article",
        }
    }

    fn answer_lead(self) -> &'static str {
        match self {
            EditorStrategy::Editor | EditorStrategy::EditorSpan => "Answer in the following format",
            EditorStrategy::EditorType => {
                "Explain your reasoning step by step and answer in the following strict format"
            }
            EditorStrategy::EditorSpanType => "Explain your reasoning step by step and answer in the following strict format (if there are multiple inconsistent spans, give only one)",
            EditorStrategy::GoldSpan | EditorStrategy::GoldType | EditorStrategy::GoldSpanType => {
                "Explain your reasoning step by step and answer in the following strict format."
            }
        }
    }
}

impl fmt::Display for EditorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditorStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
        Ok(match key.as_str() {
            "editor" => EditorStrategy::Editor,
            "editorspan" | "span" => EditorStrategy::EditorSpan,
            "editortype" | "type" => EditorStrategy::EditorType,
            "editorspantype" | "spantype" => EditorStrategy::EditorSpanType,
            "goldspan" => EditorStrategy::GoldSpan,
            "goldtype" => EditorStrategy::GoldType,
            "goldspantype" => EditorStrategy::GoldSpanType,
            _ => return Err(format!("unknown editor strategy {s:?}")),
        })
    }
}

/// One-line descriptions of the error categories, listed before type-aware
/// editor instructions.
pub fn error_type_glossary() -> String {
    let mut out = String::from("A summary can be inconsistent with its source article in different ways, such as\n");
    for t in ErrorType::ALL {
        let description = match t {
            ErrorType::PredicateError => "The predicate in the summary is inconsistent with the source article;",
            ErrorType::EntityError => "The primary arguments (or their attributes) of the predicate are wrong;",
            ErrorType::CircumstanceError => "The additional information (like location or time) specifying the circumstance around a predicate is wrong;",
            ErrorType::OutOfArticleError => "The summary contains information not present in the source article;",
            ErrorType::GrammaticalError => "The grammar of the summary is so wrong that it becomes meaningless;",
            ErrorType::CoreferenceError => "A pronoun/reference with wrong or nonexisting antecedent;",
            ErrorType::DiscourseLinkError => "Error in how multiple summary statements are linked together in the discourse (for example temporal ordering/causal link);",
            ErrorType::OtherError => {
                out.push_str("and Other Error.");
                continue;
            }
        };
        out.push_str(&format!("{}: {}\n", t.long_name(), description));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub article: String,
    pub summary: String,
    /// Likert value for scale demos, 0/1 for binary demos.
    pub target: u8,
}

/// In-context examples for the critic: two scale demos rated 2 and 4, and
/// two binary demos labelled 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticDemos {
    #[serde(default)]
    pub scale: Vec<Demo>,
    #[serde(default)]
    pub binary: Vec<Demo>,
}

impl CriticDemos {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_DEMOS_JSON).expect("bundled demonstrations are valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let demos: CriticDemos = serde_json::from_str(text).map_err(|e| PromptError::InvalidDemos(e.to_string()))?;
        demos.validate()?;
        Ok(demos)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PromptError::InvalidDemos(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Empty lists are allowed (and reported as `MissingDemos` at render
    /// time); non-empty lists must carry exactly the expected targets.
    pub fn validate(&self) -> Result<(), PromptError> {
        let check = |demos: &[Demo], want: [u8; 2], what: &str| -> Result<(), PromptError> {
            if demos.is_empty() {
                return Ok(());
            }
            let targets: Vec<u8> = demos.iter().map(|d| d.target).collect();
            if targets != want {
                return Err(PromptError::InvalidDemos(format!(
                    "{what} demo targets must be {want:?}, got {targets:?}"
                )));
            }
            if demos.iter().any(|d| d.article.trim().is_empty() || d.summary.trim().is_empty()) {
                return Err(PromptError::InvalidDemos(format!("{what} demo has empty text")));
            }
            Ok(())
        };
        check(&self.scale, [2, 4], "scale")?;
        check(&self.binary, [0, 1], "binary")
    }

    fn for_mode(&self, mode: CriticMode) -> Result<&[Demo], PromptError> {
        let demos = match mode {
            CriticMode::Scale5 => &self.scale,
            CriticMode::Binary => &self.binary,
        };
        if demos.len() == 2 {
            Ok(demos)
        } else {
            Err(PromptError::MissingDemos(mode))
        }
    }
}

impl Default for CriticDemos {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub critic_mode: CriticMode,
    pub demos: CriticDemos,
    /// Overrides the dataset-derived sentence budget when set.
    #[serde(default)]
    pub sentence_budget: Option<usize>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    1024
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            critic_mode: CriticMode::Scale5,
            demos: CriticDemos::builtin(),
            sentence_budget: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

impl PromptConfig {
    pub fn with_mode(critic_mode: CriticMode) -> Self {
        PromptConfig { critic_mode, ..Default::default() }
    }

    pub fn budget_for(&self, pair: &DocumentSummaryPair) -> usize {
        self.sentence_budget.unwrap_or_else(|| pair.sentence_budget())
    }

    fn request(&self, messages: Vec<Message>) -> ChatRequest {
        let mut req = ChatRequest::new(messages);
        req.temperature = self.temperature;
        req.max_tokens = self.max_tokens;
        req
    }
}

const ORDINALS: [&str; 3] = ["One", "Two", "Three"];

fn critic_turn(ordinal: &str, instruction: &str, cue: &str, article: &str, summary: &str) -> String {
    format!(
        "Is Summary {ordinal} faithful or not based on Article {ordinal}? {instruction}\n\
         Article {ordinal}: {article}\n\
         Summary {ordinal}: {summary}\n\
         {cue}"
    )
}

/// Builds the critic prompt for `config.critic_mode`.
pub fn build_critic(config: &PromptConfig, article: &str, summary: &str) -> Result<ChatRequest, PromptError> {
    match config.critic_mode {
        CriticMode::Scale5 => build_critic_prompt(config, article, summary),
        CriticMode::Binary => build_critic_prompt_binary(config, article, summary),
    }
}

/// Few-shot five-point critic prompt.
pub fn build_critic_prompt(config: &PromptConfig, article: &str, summary: &str) -> Result<ChatRequest, PromptError> {
    render_critic(config, CriticMode::Scale5, SCALE_INSTRUCTION, SCALE_ANSWER_CUE, article, summary)
}

/// Few-shot binary critic prompt.
pub fn build_critic_prompt_binary(
    config: &PromptConfig,
    article: &str,
    summary: &str,
) -> Result<ChatRequest, PromptError> {
    render_critic(config, CriticMode::Binary, BINARY_INSTRUCTION, BINARY_ANSWER_CUE, article, summary)
}

fn render_critic(
    config: &PromptConfig,
    mode: CriticMode,
    instruction: &str,
    cue: &str,
    article: &str,
    summary: &str,
) -> Result<ChatRequest, PromptError> {
    if article.trim().is_empty() {
        return Err(PromptError::EmptyInput("article"));
    }
    if summary.trim().is_empty() {
        return Err(PromptError::EmptyInput("summary"));
    }
    let demos = config.demos.for_mode(mode)?;
    let mut messages = vec![Message::system(CRITIC_SYSTEM)];
    for (demo, ordinal) in demos.iter().zip(ORDINALS) {
        let demo_article = truncate_to_sentences(&demo.article, DEMO_ARTICLE_SENTENCES);
        messages.push(Message::user(critic_turn(ordinal, instruction, cue, demo_article, &demo.summary)));
        messages.push(Message::assistant(demo.target.to_string()));
    }
    // The target article is never truncated.
    messages.push(Message::user(critic_turn(ORDINALS[2], instruction, cue, article, summary)));
    Ok(config.request(messages))
}

/// Single-turn editor prompt for `current_summary`.
pub fn build_editor_prompt(
    strategy: EditorStrategy,
    pair: &DocumentSummaryPair,
    sentence_budget: usize,
    current_summary: &str,
) -> Result<ChatRequest, PromptError> {
    let text = render_editor_prompt(strategy, pair, sentence_budget, current_summary)?;
    Ok(ChatRequest::new(vec![Message::user(text)]))
}

/// Like [`build_editor_prompt`], with sampling settings from `config`.
pub fn build_editor(
    config: &PromptConfig,
    strategy: EditorStrategy,
    pair: &DocumentSummaryPair,
    current_summary: &str,
) -> Result<ChatRequest, PromptError> {
    let text = render_editor_prompt(strategy, pair, config.budget_for(pair), current_summary)?;
    Ok(config.request(vec![Message::user(text)]))
}

fn render_editor_prompt(
    strategy: EditorStrategy,
    pair: &DocumentSummaryPair,
    sentence_budget: usize,
    current_summary: &str,
) -> Result<String, PromptError> {
    if current_summary.trim().is_empty() {
        return Err(PromptError::EmptyInput("summary"));
    }
    let missing = |field| PromptError::MissingGoldAnnotation { strategy, field, pair_id: pair.id.clone() };
    let mut body = format!(
        "{} in {sentence_budget} sentence(s):\nSource article: {}\nInconsistent summary: {current_summary}",
        strategy.instruction(),
        pair.article,
    );
    if strategy.uses_gold_span() {
        let span = pair.gold_span.as_deref().filter(|s| !s.trim().is_empty()).ok_or_else(|| missing("span"))?;
        body.push_str(&format!("\nInconsistent span: {span}"));
    }
    if strategy.uses_gold_types() {
        let types = pair.gold_error_types.as_ref().filter(|t| !t.is_empty()).ok_or_else(|| missing("error types"))?;
        body.push_str(&format!("\nInconsistent error types: {}", format_error_types(types)));
    }

    let mut footer = String::from(strategy.answer_lead());
    for section in strategy.footer() {
        footer.push('\n');
        footer.push_str(section.header());
    }

    let mut blocks = Vec::with_capacity(3);
    if strategy.has_glossary() {
        blocks.push(error_type_glossary());
    }
    blocks.push(body);
    blocks.push(footer);
    Ok(blocks.join("\n\n"))
}

const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "gen.", "gov.", "sen.", "rep.", "lt.", "col.",
    "capt.", "sgt.", "rev.", "hon.", "u.s.", "u.k.", "u.n.", "e.u.", "inc.", "co.", "corp.", "ltd.", "no.", "vs.",
    "etc.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '\u{201c}', '\u{2018}'];

/// Byte offsets just past each sentence terminator.
///
/// A sentence ends at `.`, `!` or `?` (plus any closing quotes) when the next
/// non-space character is an uppercase letter, optionally behind an opening
/// quote, and the word ending in the period is not a known abbreviation.
pub fn sentence_ends(text: &str) -> Vec<usize> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut ends = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (matches!(chars[j].1, '.' | '!' | '?') || CLOSERS.contains(&chars[j].1)) {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k >= chars.len() {
            i = j;
            continue;
        }
        while k < chars.len() && OPENERS.contains(&chars[k].1) {
            k += 1;
        }
        let next_upper = chars.get(k).is_some_and(|&(_, c)| c.is_uppercase());
        if next_upper && !(c == '.' && ends_with_abbreviation(&text[..chars[i].0 + 1])) {
            ends.push(end);
        }
        i = j;
    }
    ends
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let word = prefix.rsplit(|c: char| c.is_whitespace() || OPENERS.contains(&c)).next().unwrap_or("").to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// The first `k` sentences of `text`, or all of it when it is shorter.
pub fn truncate_to_sentences(text: &str, k: usize) -> &str {
    let k = k.max(1);
    match sentence_ends(text).get(k - 1) {
        Some(&end) => text[..end].trim_end(),
        None => text,
    }
}

/// Every prompt template rendered on one fixed pair with fixed demos,
/// keyed by a file name. The golden files hold the same text, and run
/// manifests record its hash so template drift is detectable.
pub fn specimen_prompts() -> Vec<(String, String)> {
    let demo = |article: &str, summary: &str, target: u8| Demo {
        article: article.to_string(),
        summary: summary.to_string(),
        target,
    };
    let long = "Sentence one is here. Sentence two is here. Sentence three is here. Sentence four is here. \
                Sentence five is here. Sentence six is here.";
    let short = "Another article. It is short.";
    let demos = CriticDemos {
        scale: vec![demo(long, "The demo summary one.", 2), demo(short, "The demo summary two.", 4)],
        binary: vec![demo(long, "The demo summary one.", 0), demo(short, "The demo summary two.", 1)],
    };
    let mut pair = DocumentSummaryPair::new(
        "specimen",
        "The council voted on Tuesday to close the Elm Street library. The branch will shut in March. \
         Residents plan to protest.",
        "The council voted to open a new library on Elm Street.",
        crate::domain::Dataset::Xsum,
    );
    pair.gold_span = Some("open a new library".into());
    pair.gold_error_types = Some([ErrorType::PredicateError, ErrorType::EntityError].into());

    let mut out = Vec::new();
    for (mode, name) in [(CriticMode::Scale5, "critic_scale"), (CriticMode::Binary, "critic_binary")] {
        let config = PromptConfig { demos: demos.clone(), ..PromptConfig::with_mode(mode) };
        let req = build_critic(&config, &pair.article, &pair.input_summary).expect("specimen demos are valid");
        out.push((format!("{name}.txt"), req.transcript()));
    }
    for strategy in EditorStrategy::ALL {
        let req = build_editor_prompt(strategy, &pair, pair.sentence_budget(), &pair.input_summary)
            .expect("specimen pair has gold annotations");
        out.push((format!("{}.txt", strategy.file_stem()), req.transcript()));
    }
    out
}
