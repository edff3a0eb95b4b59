//! Answer normalization and per-sample metrics.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::sandbox::extract::last_boxed;
use crate::sandbox::{NestedError, NestedSandbox};
use crate::text::{fenced_blocks, last_block_defining};

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$").expect("valid regex"))
}

fn grouped_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$").expect("valid regex"))
}

/// Canonical rendering of a numeric string: integer-valued numbers without a
/// fractional part, others in shortest round-trip form.
pub fn canonical_number(text: &str) -> Option<String> {
    let plain = if grouped_re().is_match(text) { text.replace(',', "") } else { text.to_string() };
    if !number_re().is_match(&plain) {
        return None;
    }
    let v: f64 = plain.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        return Some(format!("{}", v as i64));
    }
    Some(format!("{v}"))
}

fn is_math(text: &str) -> bool {
    text.contains(['\\', '{', '}', '^'])
}

/// Every normalization step except article removal.
pub fn normalize_basic(text: &str) -> String {
    let mut s = text.trim().to_lowercase();
    let mut math = is_math(&s);
    if let Some(inner) = last_boxed(&s) {
        s = inner.to_string();
        math = true;
    }
    for token in ["\\left", "\\right", "\\!"] {
        s = s.replace(token, "");
    }
    let s = s
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | ',' | '$'))
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | ',' | '.' | '$'));
    let s: String = if math {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    } else {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    };
    canonical_number(&s).unwrap_or(s)
}

/// Normalized form used for exact-match accuracy: [`normalize_basic`] with
/// the articles "a", "an" and "the" removed outside math.
pub fn normalize_answer(text: &str) -> String {
    let s = normalize_basic(text);
    if is_math(&s) {
        return s;
    }
    s.split(' ')
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn choice_letter(normalized: &str) -> Option<char> {
    let mut chars = normalized.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if ('a'..='j').contains(&c) => Some(c),
        _ => None,
    }
}

/// First standalone option letter (a to j) in `text`.
pub fn first_choice(text: &str) -> Option<char> {
    normalize_basic(text)
        .split(|c: char| !c.is_alphanumeric())
        .find_map(choice_letter)
}

/// 1.0 when prediction and gold normalize equal. A gold answer that is a
/// single option letter switches to multiple-choice matching.
pub fn accuracy(prediction: &str, gold: &str) -> f64 {
    let g = normalize_basic(gold);
    let hit = match choice_letter(&g) {
        Some(letter) => first_choice(prediction) == Some(letter),
        None => normalize_answer(prediction) == normalize_answer(gold),
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

fn f1_tokens(text: &str) -> Vec<String> {
    normalize_basic(text)
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|t| !t.is_empty())
        .map(|t| canonical_number(&t).unwrap_or(t))
        .collect()
}

/// Harmonic mean of token precision and recall (multiset overlap).
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = f1_tokens(prediction);
    let g = f1_tokens(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// The code a prediction submits: the last fenced block defining
/// `entry_point` when there is one, else the whole prediction.
pub fn submitted_code(prediction: &str, entry_point: &str) -> String {
    let blocks = fenced_blocks(prediction);
    match last_block_defining(&blocks, entry_point) {
        Some(b) => b.body.clone(),
        None => prediction.to_string(),
    }
}

/// 1.0 iff the code passes every test.
pub fn pass_at_1(nested: &NestedSandbox, code: &str, tests: &[String], entry_point: &str) -> Result<f64, NestedError> {
    let verdict = nested.run_tests(code, tests, entry_point)?;
    Ok(if verdict.passed { 1.0 } else { 0.0 })
}
