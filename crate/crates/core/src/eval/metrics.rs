use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{ErrorType, Faithfulness};

/// Lowercased alphanumeric runs; no stemming or stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Scores from an overlap count and the candidate/reference sizes.
    pub fn from_counts(overlap: usize, candidate_len: usize, reference_len: usize) -> Self {
        let ratio = |den: usize| if den == 0 { 0.0 } else { overlap as f64 / den as f64 };
        let (precision, recall) = (ratio(candidate_len), ratio(reference_len));
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        RougeScore { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
///
/// # Panics
/// If `n` is 0.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand.iter().map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0))).sum();
    let total = |m: &HashMap<&[String], usize>| m.values().sum::<usize>();
    RougeScore::from_counts(overlap, total(&cand), total(&refs))
}

/// ROUGE-L from the token-level longest common subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

fn check_pairs(xs: &[f64], ys: &[f64]) -> Result<(), EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::DegenerateInput("need at least two observations".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    check_pairs(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    check_pairs(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Mean of the true-positive and true-negative rates, with Unfaithful as
/// the positive class.
pub fn balanced_accuracy(pred: &[Faithfulness], gold: &[Faithfulness]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gold.len()));
    }
    let rate = |class: Faithfulness| {
        let total = gold.iter().filter(|&&g| g == class).count();
        let hit = pred.iter().zip(gold).filter(|&(&p, &g)| g == class && p == class).count();
        (total > 0).then(|| hit as f64 / total as f64)
    };
    match (rate(Faithfulness::Unfaithful), rate(Faithfulness::Faithful)) {
        (Some(tpr), Some(tnr)) => Ok((tpr + tnr) / 2.0),
        _ => Err(EvalError::MissingClass),
    }
}

/// Unweighted mean of per-type F1 over the types that occur in at least
/// one predicted or gold set.
pub fn type_macro_f1(pred: &[BTreeSet<ErrorType>], gold: &[BTreeSet<ErrorType>]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gold.len()));
    }
    let f1s: Vec<f64> = ErrorType::ALL
        .iter()
        .filter_map(|t| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (p, g) in pred.iter().zip(gold) {
                match (p.contains(t), g.contains(t)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            (tp + fp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        })
        .collect();
    if f1s.is_empty() {
        return Err(EvalError::EmptyInput("no error types in predictions or gold".into()));
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
