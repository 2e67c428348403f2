//! Answer matching and MRR@k.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Numeric,
    Exact,
    MultipleChoice,
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(\()?\s*([-\x{2212}])?\s*\$?\s*(\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)(\))?",
    )
    .expect("valid regex")
});

/// The last numeric literal in `text`.
///
/// Handles `$`, thousands separators, a trailing `%` (the number is taken
/// as written, so "5%" is 5), accounting negatives "(1,250)", and minus
/// signs that do not follow a letter or digit (so "2022-23" is not negative).
pub fn extract_last_number(text: &str) -> Option<f64> {
    let caps = NUMBER.captures_iter(text).last()?;
    let digits = caps.get(3)?.as_str().replace(',', "");
    let mut value: f64 = digits.parse().ok()?;
    let parenthesized = caps.get(1).is_some() && caps.get(4).is_some();
    let signed = caps.get(2).is_some_and(|sign| {
        !text[..sign.start()]
            .chars()
            .next_back()
            .is_some_and(char::is_alphanumeric)
    });
    if parenthesized || signed {
        value = -value;
    }
    Some(value)
}

/// True when the last number in `predicted` is within `tolerance` relative
/// error of `gold` (inclusive). A zero gold requires an exact zero.
pub fn numeric_match(predicted: &str, gold: f64, tolerance: f64) -> bool {
    let Some(value) = extract_last_number(predicted) else {
        return false;
    };
    if gold == 0.0 {
        return value == 0.0;
    }
    // Tiny slack absorbs decimal representation error at the boundary.
    (value - gold).abs() <= tolerance * gold.abs() * (1.0 + 1e-12)
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

static ANSWER_LETTER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:answer|option|choice)\s*(?:is|:)?\s*\(?([a-j])\)?(?:[^a-z0-9]|$)")
        .expect("valid regex")
});
static LONE_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([A-J])\b").expect("valid regex"));

/// The option letter a multiple-choice reply commits to, uppercased.
pub fn extract_option_letter(text: &str) -> Option<char> {
    let bare = text.trim().trim_matches(|c: char| !c.is_alphanumeric());
    if bare.len() == 1 {
        let c = bare.chars().next()?.to_ascii_uppercase();
        return ('A'..='J').contains(&c).then_some(c);
    }
    if let Some(c) = ANSWER_LETTER.captures(text).and_then(|c| c.get(1)) {
        return c.as_str().chars().next().map(|c| c.to_ascii_uppercase());
    }
    let mut letters: Vec<char> = LONE_LETTER
        .captures_iter(text)
        .filter_map(|c| c.get(1)?.as_str().chars().next())
        .collect();
    letters.dedup();
    match letters.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// Case-insensitive, whitespace-normalized equality; for multiple choice
/// the option letters are compared.
pub fn exact_match(predicted: &str, gold: &str, answer_type: AnswerType) -> bool {
    match answer_type {
        AnswerType::MultipleChoice => match (
            extract_option_letter(predicted),
            extract_option_letter(gold),
        ) {
            (Some(p), Some(g)) => p == g,
            _ => normalize(predicted) == normalize(gold),
        },
        _ => normalize(predicted) == normalize(gold),
    }
}

/// Dispatches on answer type. Numeric golds that do not parse as a number
/// are compared exactly.
pub fn answer_matches(predicted: &str, gold: &str, answer_type: AnswerType) -> bool {
    match answer_type {
        AnswerType::Numeric => match extract_last_number(gold) {
            Some(g) => numeric_match(predicted, g, DEFAULT_TOLERANCE),
            None => exact_match(predicted, gold, AnswerType::Exact),
        },
        other => exact_match(predicted, gold, other),
    }
}

/// One evaluated query: ranked answer texts and the gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub gold_answer: String,
    pub answer_type: AnswerType,
    /// Ranked answers, best first. Empty when the query errored.
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    /// 1-based rank of the first matching answer within the top `k`.
    pub fn gold_rank(&self, k: usize) -> Option<usize> {
        self.answers
            .iter()
            .take(k)
            .position(|a| answer_matches(a, &self.gold_answer, self.answer_type))
            .map(|i| i + 1)
    }

    pub fn reciprocal_rank(&self, k: usize) -> f64 {
        self.gold_rank(k).map_or(0.0, |r| 1.0 / r as f64)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("MRR is undefined over an empty record set")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

pub fn mrr_at_k(records: &[EvalRecord], k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(records.iter().map(|r| r.reciprocal_rank(k)).sum::<f64>() / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_boundaries() {
        assert!(numeric_match("105", 100.0, 0.05));
        assert!(numeric_match("95", 100.0, 0.05));
        assert!(!numeric_match("106", 100.0, 0.05));
        assert!(!numeric_match("94.9", 100.0, 0.05));
        assert!(numeric_match("0", 0.0, 0.05));
        assert!(!numeric_match("0.0001", 0.0, 0.05));
        assert!(!numeric_match("no number here", 1.0, 0.05));
        assert!(numeric_match("-105", -100.0, 0.05));
    }

    #[test]
    fn literal_extraction() {
        let cases: [(&str, Option<f64>); 14] = [
            ("The change was $(1,250) thousand", Some(-1250.0)),
            ("Diluted EPS was $1.97.", Some(1.97)),
            ("grew 12.5% in 2023 to 4,003", Some(4003.0)),
            ("margin of 12.5%", Some(12.5)),
            ("a loss of -3.2 million", Some(-3.2)),
            ("fiscal 2022-2023", Some(2023.0)),
            ("Form 10-K", Some(10.0)),
            ("$ 1,000,000", Some(1_000_000.0)),
            ("−42", Some(-42.0)),
            ("(7)", Some(-7.0)),
            ("value .5", Some(0.5)),
            ("-$4", Some(-4.0)),
            ("nothing", None),
            ("", None),
        ];
        for (text, expected) in cases {
            assert_eq!(extract_last_number(text), expected, "{text}");
        }
    }

    #[test]
    fn exact_and_choice() {
        assert!(exact_match("B", "b", AnswerType::Exact));
        assert!(exact_match("  New   York ", "new york", AnswerType::Exact));
        assert!(!exact_match("B and C", "B", AnswerType::Exact));
        assert!(exact_match(
            "The answer is B.",
            "B",
            AnswerType::MultipleChoice
        ));
        assert!(exact_match("(c)", "C", AnswerType::MultipleChoice));
        assert!(!exact_match("B and C", "B", AnswerType::MultipleChoice));
        assert!(exact_match(
            "Option D: the widow",
            "D",
            AnswerType::MultipleChoice
        ));
    }

    fn record(answers: &[&str], gold: &str) -> EvalRecord {
        EvalRecord {
            query_id: "q".into(),
            gold_answer: gold.into(),
            answer_type: AnswerType::Numeric,
            answers: answers.iter().map(|s| s.to_string()).collect(),
            error: None,
        }
    }

    #[test]
    fn mrr_examples() {
        let first = vec![record(&["1.97"], "1.97"), record(&["42", "7"], "42")];
        assert_eq!(mrr_at_k(&first, 1).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&[record(&["1", "2", "3"], "2")], 3).unwrap(), 0.5);
        assert_eq!(mrr_at_k(&[record(&["1", "2", "3"], "2")], 1).unwrap(), 0.0);
        assert_eq!(mrr_at_k(&[], 1), Err(MetricError::Empty));
        assert_eq!(mrr_at_k(&first, 0), Err(MetricError::ZeroK));
    }
}
