//! Domain types shared across the pipeline and the score transformations
//! applied to human factuality judgments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("sentence label list is empty")]
    EmptyLabels,
    #[error("sentence label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("Likert value {0} is outside 1..=5")]
    InvalidLikert(u8),
    #[error("unknown error type {0:?}")]
    UnknownErrorType(String),
    #[error("invalid pair: {0}")]
    InvalidPair(String),
}

/// Source corpus of a document/summary pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dataset {
    CnnDm,
    Xsum,
    Defacto,
}

impl Dataset {
    /// Number of sentences the editor is asked to produce.
    ///
    /// CNN/DM summaries are three sentences long, XSum summaries one.
    /// DeFacto is built on XSum and shares its budget.
    pub fn sentence_budget(self) -> usize {
        match self {
            Dataset::CnnDm => 3,
            Dataset::Xsum | Dataset::Defacto => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::CnnDm => "CNN_DM",
            Dataset::Xsum => "XSUM",
            Dataset::Defacto => "DEFACTO",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The eight categories of the FRANK factual error typology.
///
/// Variant order is the order in which the categories are listed to the
/// editor, and `Ord` follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    PredicateError,
    EntityError,
    CircumstanceError,
    OutOfArticleError,
    GrammaticalError,
    CoreferenceError,
    DiscourseLinkError,
    OtherError,
}

impl ErrorType {
    pub const ALL: [ErrorType; 8] = [
        ErrorType::PredicateError,
        ErrorType::EntityError,
        ErrorType::CircumstanceError,
        ErrorType::OutOfArticleError,
        ErrorType::GrammaticalError,
        ErrorType::CoreferenceError,
        ErrorType::DiscourseLinkError,
        ErrorType::OtherError,
    ];

    /// Human-readable name, as used in prompts.
    pub fn long_name(self) -> &'static str {
        match self {
            ErrorType::PredicateError => "Predicate Error",
            ErrorType::EntityError => "Entity Error",
            ErrorType::CircumstanceError => "Circumstance Error",
            ErrorType::OutOfArticleError => "Out of Article Error",
            ErrorType::GrammaticalError => "Grammatical Error",
            ErrorType::CoreferenceError => "Coreference Error",
            ErrorType::DiscourseLinkError => "Discourse Link Error",
            ErrorType::OtherError => "Other Error",
        }
    }

    /// Abbreviated name used in result tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ErrorType::PredicateError => "PredE",
            ErrorType::EntityError => "EntE",
            ErrorType::CircumstanceError => "CircE",
            ErrorType::OutOfArticleError => "OutE",
            ErrorType::GrammaticalError => "GramE",
            ErrorType::CoreferenceError => "CorefE",
            ErrorType::DiscourseLinkError => "LinkE",
            ErrorType::OtherError => "OthE",
        }
    }

    /// FRANK annotation codes that mean "no error" rather than a category.
    pub fn is_no_error_code(s: &str) -> bool {
        matches!(normalize_key(s).as_str(), "noe" | "noerror" | "none")
    }
}

fn normalize_key(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

impl FromStr for ErrorType {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use ErrorType::*;
        let t = match normalize_key(s).as_str() {
            "predicateerror" | "predicate" | "prede" | "rele" | "relationerror" => PredicateError,
            "entityerror" | "entity" | "ente" => EntityError,
            "circumstanceerror" | "circumstance" | "circe" => CircumstanceError,
            "outofarticleerror" | "outofarticle" | "oute" => OutOfArticleError,
            "grammaticalerror" | "grammatical" | "grammar" | "grammarerror" | "grame" => GrammaticalError,
            "coreferenceerror" | "coreference" | "corefe" => CoreferenceError,
            "discourselinkerror" | "discourselink" | "linkerror" | "link" | "linke" => DiscourseLinkError,
            "othererror" | "other" | "othe" | "othere" => OtherError,
            _ => return Err(DomainError::UnknownErrorType(s.to_string())),
        };
        Ok(t)
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.long_name())
    }
}

/// Comma-separated long names in glossary order.
pub fn format_error_types(types: &BTreeSet<ErrorType>) -> String {
    types.iter().map(|t| t.long_name()).collect::<Vec<_>>().join(", ")
}

/// Five-point faithfulness rating; 5 is fully faithful, 1 fully unfaithful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LikertScore(u8);

impl LikertScore {
    pub const MIN: LikertScore = LikertScore(1);
    pub const MAX: LikertScore = LikertScore(5);

    pub fn new(value: u8) -> Result<Self, DomainError> {
        if (1..=5).contains(&value) {
            Ok(LikertScore(value))
        } else {
            Err(DomainError::InvalidLikert(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for LikertScore {
    type Error = DomainError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        LikertScore::new(v)
    }
}

impl From<LikertScore> for u8 {
    fn from(s: LikertScore) -> u8 {
        s.0
    }
}

impl fmt::Display for LikertScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fraction of summary sentences that contain at least one factual error.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HumanFactualityScore(f64);

impl HumanFactualityScore {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if (0.0..=1.0).contains(&value) {
            Ok(HumanFactualityScore(value))
        } else {
            Err(DomainError::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HumanFactualityScore {
    type Error = DomainError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        HumanFactualityScore::new(v)
    }
}

impl From<HumanFactualityScore> for f64 {
    fn from(s: HumanFactualityScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Faithfulness {
    Faithful,
    Unfaithful,
}

/// How continuous human scores are mapped onto the Likert scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketScheme {
    /// Five left-closed intervals of width 0.2; `[0.8, 1.0]` is closed.
    #[default]
    EqualWidth,
    /// 5 only for a score of exactly 0, with `(0, 1]` split into four
    /// equal right-closed intervals.
    ZeroIsFaithful,
}

/// A source article paired with a system summary and optional gold
/// annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummaryPair {
    pub id: String,
    pub article: String,
    pub input_summary: String,
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_error_types: Option<BTreeSet<ErrorType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_span: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_edit: Option<String>,
}

impl DocumentSummaryPair {
    /// A pair without annotations.
    pub fn new(
        id: impl Into<String>,
        article: impl Into<String>,
        input_summary: impl Into<String>,
        dataset: Dataset,
    ) -> Self {
        DocumentSummaryPair {
            id: id.into(),
            article: article.into(),
            input_summary: input_summary.into(),
            dataset,
            sentence_labels: None,
            gold_error_types: None,
            gold_span: None,
            reference_summary: None,
            human_edit: None,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.article.trim().is_empty() {
            return Err(DomainError::InvalidPair(format!("{}: empty article", self.id)));
        }
        if self.input_summary.trim().is_empty() {
            return Err(DomainError::InvalidPair(format!("{}: empty summary", self.id)));
        }
        if let Some(labels) = &self.sentence_labels {
            summary_level_score(labels)?;
        }
        Ok(())
    }

    /// Human score derived from the sentence labels, when present.
    pub fn human_score(&self) -> Option<HumanFactualityScore> {
        self.sentence_labels.as_deref().and_then(|l| summary_level_score(l).ok())
    }

    pub fn sentence_budget(&self) -> usize {
        self.dataset.sentence_budget()
    }
}

/// Mean of per-sentence binary error labels.
pub fn summary_level_score(sentence_labels: &[u8]) -> Result<HumanFactualityScore, DomainError> {
    if sentence_labels.is_empty() {
        return Err(DomainError::EmptyLabels);
    }
    if let Some(&bad) = sentence_labels.iter().find(|&&l| l > 1) {
        return Err(DomainError::InvalidLabel(bad));
    }
    let errors = sentence_labels.iter().filter(|&&l| l == 1).count();
    HumanFactualityScore::new(errors as f64 / sentence_labels.len() as f64)
}

pub fn bucket_to_likert(score: f64) -> Result<LikertScore, DomainError> {
    bucket_to_likert_with(score, BucketScheme::EqualWidth)
}

pub fn bucket_to_likert_with(score: f64, scheme: BucketScheme) -> Result<LikertScore, DomainError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(DomainError::OutOfRange(score));
    }
    let value = match scheme {
        BucketScheme::EqualWidth => {
            if score < 0.2 {
                5
            } else if score < 0.4 {
                4
            } else if score < 0.6 {
                3
            } else if score < 0.8 {
                2
            } else {
                1
            }
        }
        BucketScheme::ZeroIsFaithful => {
            if score == 0.0 {
                5
            } else if score <= 0.25 {
                4
            } else if score <= 0.5 {
                3
            } else if score <= 0.75 {
                2
            } else {
                1
            }
        }
    };
    LikertScore::new(value)
}

/// Any error in any sentence makes the summary unfaithful.
pub fn binarize_human(score: f64) -> Result<Faithfulness, DomainError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(DomainError::OutOfRange(score));
    }
    Ok(if score > 0.0 { Faithfulness::Unfaithful } else { Faithfulness::Faithful })
}
