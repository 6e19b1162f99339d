//! Brute-force and closed-form reference implementations the metric code
//! is checked against.

#![allow(dead_code)]

use std::collections::BTreeSet;

use critedit::eval::{average_ranks, balanced_accuracy, pearson, rouge_l_tokens, rouge_n_tokens, spearman};
use critedit::Faithfulness;

pub const TOLERANCE: f64 = 1e-9;
const ALPHABET: [&str; 3] = ["a", "b", "c"];

/// Every token string of length 0..=max_len over the three-symbol alphabet.
pub fn all_strings(max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for sym in ALPHABET {
                let mut t = s.clone();
                t.push(sym.to_string());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn f1(overlap: f64, cand: f64, reference: f64) -> [f64; 3] {
    let p = if cand == 0.0 { 0.0 } else { overlap / cand };
    let r = if reference == 0.0 { 0.0 } else { overlap / reference };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    [p, r, f]
}

/// Every possible n-gram over the alphabet.
fn all_grams(n: usize) -> Vec<Vec<String>> {
    all_strings(n).into_iter().filter(|g| g.len() == n).collect()
}

/// Counts occurrences of every possible n-gram over the alphabet.
fn oracle_rouge_n(cand: &[String], reference: &[String], grams: &[Vec<String>]) -> [f64; 3] {
    let n = grams[0].len();
    let count = |text: &[String], g: &[String]| {
        if text.len() < n {
            return 0;
        }
        (0..=text.len() - n).filter(|&i| text[i..i + n] == *g).count()
    };
    let (mut overlap, mut total_c, mut total_r) = (0, 0, 0);
    for g in grams {
        let (c, r) = (count(cand, g), count(reference, g));
        overlap += c.min(r);
        total_c += c;
        total_r += r;
    }
    f1(overlap as f64, total_c as f64, total_r as f64)
}

/// All subsequences of `tokens`, each encoded as a base-4 integer with
/// digits 1..=3 so different lengths never collide.
fn subsequences(tokens: &[String]) -> Vec<(u32, usize)> {
    let digit = |t: &String| ALPHABET.iter().position(|a| a == t).unwrap() as u32 + 1;
    let mut out: Vec<(u32, usize)> = (0u32..1 << tokens.len())
        .map(|mask| {
            let picked = tokens.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0);
            picked.fold((0, 0), |(code, len), (_, t)| (code * 4 + digit(t), len + 1))
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Length of the longest element common to two sorted subsequence sets.
fn longest_common(a: &[(u32, usize)], b: &[(u32, usize)]) -> usize {
    let (mut i, mut j, mut best) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                best = best.max(a[i].1);
                i += 1;
                j += 1;
            }
        }
    }
    best
}

fn close3(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= TOLERANCE)
}

/// Compares ROUGE-1/2/L with the oracles on every ordered pair of strings
/// of up to `max_len` tokens. Returns the number of pairs checked.
pub fn check_rouge_exhaustive(max_len: usize) -> Result<usize, String> {
    let strings = all_strings(max_len);
    let subseqs: Vec<Vec<(u32, usize)>> = strings.iter().map(|s| subsequences(s)).collect();
    let grams = [all_grams(1), all_grams(2)];
    let mut checked = 0;
    for (i, cand) in strings.iter().enumerate() {
        for (j, reference) in strings.iter().enumerate() {
            for (n, grams) in [(1, &grams[0]), (2, &grams[1])] {
                let got = rouge_n_tokens(cand, reference, n);
                let want = oracle_rouge_n(cand, reference, grams);
                if !close3([got.precision, got.recall, got.f1], want) {
                    return Err(format!("ROUGE-{n} {cand:?} vs {reference:?}: got {got:?}, want {want:?}"));
                }
            }
            let lcs = longest_common(&subseqs[i], &subseqs[j]);
            let want = f1(lcs as f64, cand.len() as f64, reference.len() as f64);
            let got = rouge_l_tokens(cand, reference);
            if !close3([got.precision, got.recall, got.f1], want) {
                return Err(format!("ROUGE-L {cand:?} vs {reference:?}: got {got:?}, want {want:?}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Deterministic pseudo-random vectors, some with ties.
pub fn fixture_vectors() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    let mut out = vec![
        (vec![1.0, 2.0, 3.0, 5.0], vec![1.0, 3.0, 2.0, 5.0]),
        (vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]),
        (vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]),
        (vec![1.0, 2.0, 2.0, 3.0], vec![1.0, 3.0, 2.0, 4.0]),
        (vec![5.0, 4.0, 4.0, 1.0, 2.0], vec![4.0, 4.0, 3.0, 1.0, 1.0]),
    ];
    for k in 0..20 {
        let n = 3 + k % 9;
        let tied = k % 2 == 0;
        let value = |v: f64| if tied { (v * 5.0).floor() + 1.0 } else { v * 100.0 };
        let xs: Vec<f64> = (0..n).map(|_| value(next())).collect();
        let ys: Vec<f64> = xs.iter().map(|x| value(next()) + if k % 3 == 0 { *x } else { 0.0 }).collect();
        out.push((xs, ys));
    }
    out
}

/// Computational (raw-sum) form of the product-moment correlation.
fn oracle_pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 1e-12).then(|| (n * sxy - sx * sy) / den)
}

/// Rank = count of smaller values plus the midpoint of the tie block.
fn oracle_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (rx, ry) = (oracle_ranks(xs), oracle_ranks(ys));
    let distinct = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len() == v.len();
    if distinct(xs) && distinct(ys) {
        let n = xs.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        return Some(1.0 - 6.0 * d2 / (n * (n * n - 1.0)));
    }
    oracle_pearson(&rx, &ry)
}

fn oracle_bacc(tp: usize, fn_: usize, tn: usize, fp: usize) -> f64 {
    (tp as f64 / (tp + fn_) as f64 + tn as f64 / (tn + fp) as f64) / 2.0
}

fn agree(name: &str, got: Option<f64>, want: Option<f64>) -> Result<(), String> {
    match (got, want) {
        (Some(g), Some(w)) if (g - w).abs() <= TOLERANCE => Ok(()),
        (None, None) => Ok(()),
        _ => Err(format!("{name}: got {got:?}, want {want:?}")),
    }
}

/// Checks Pearson, Spearman and balanced accuracy against closed forms.
/// Returns the number of fixtures checked.
pub fn check_statistics_fixtures() -> Result<usize, String> {
    let vectors = fixture_vectors();
    for (k, (xs, ys)) in vectors.iter().enumerate() {
        agree(&format!("pearson #{k}"), pearson(xs, ys).ok(), oracle_pearson(xs, ys))?;
        agree(&format!("spearman #{k}"), spearman(xs, ys).ok(), oracle_spearman(xs, ys))?;
        if average_ranks(xs) != oracle_ranks(xs) {
            return Err(format!("ranks #{k}"));
        }
    }
    use Faithfulness::{Faithful as F, Unfaithful as U};
    let mut bacc_cases = 0;
    for tp in 0..4 {
        for fn_ in 0..4 {
            for tn in 0..4 {
                for fp in 0..4 {
                    if tp + fn_ == 0 || tn + fp == 0 {
                        continue;
                    }
                    let mut pred = Vec::new();
                    let mut gold = Vec::new();
                    for (n, p, g) in [(tp, U, U), (fn_, F, U), (tn, F, F), (fp, U, F)] {
                        pred.extend(std::iter::repeat_n(p, n));
                        gold.extend(std::iter::repeat_n(g, n));
                    }
                    let got = balanced_accuracy(&pred, &gold).ok();
                    agree(&format!("bacc {tp}/{fn_}/{tn}/{fp}"), got, Some(oracle_bacc(tp, fn_, tn, fp)))?;
                    bacc_cases += 1;
                }
            }
        }
    }
    Ok(vectors.len() + bacc_cases)
}
