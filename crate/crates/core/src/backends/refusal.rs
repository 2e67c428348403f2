/// The exact token the per-chunk prompt asks for when evidence is absent.
pub const REFUSAL_SENTINEL: &str = "ANSWER_NOT_IN_CONTEXT";

/// Phrases matched against the lowercased, punctuation-stripped reply.
pub const REFUSAL_PHRASES: [&str; 4] = [
    "answer not in context",
    "not in the provided context",
    "cannot find the answer",
    "no relevant information",
];

pub fn detect_refusal(text: &str) -> bool {
    if text.contains(REFUSAL_SENTINEL) {
        return true;
    }
    let normalized: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    let normalized = normalized.split_whitespace().collect::<Vec<_>>().join(" ");
    REFUSAL_PHRASES.iter().any(|p| normalized.contains(p))
}

/// `exp(mean logprob)` over the reply tokens; `None` without log-probabilities.
pub fn confidence_of(logprobs: Option<&[f64]>) -> Option<f64> {
    let lp = logprobs?;
    if lp.is_empty() {
        return None;
    }
    let mean = lp.iter().sum::<f64>() / lp.len() as f64;
    Some(mean.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refusals() {
        assert!(detect_refusal("ANSWER_NOT_IN_CONTEXT"));
        assert!(detect_refusal("  ANSWER_NOT_IN_CONTEXT\n"));
        assert!(!detect_refusal("The diluted EPS was $1.97."));
        assert!(detect_refusal("I cannot find the answer in this excerpt."));
        assert!(detect_refusal("Answer: not in context"));
        assert!(detect_refusal("There is NO relevant   information here."));
        assert!(!detect_refusal(""));
    }

    #[test]
    fn confidences() {
        assert_eq!(confidence_of(Some(&[0.0, 0.0, 0.0])), Some(1.0));
        let c = confidence_of(Some(&[-1.0, -1.0])).unwrap();
        assert!((c - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert_eq!(confidence_of(None), None);
        assert_eq!(confidence_of(Some(&[])), None);
    }
}
