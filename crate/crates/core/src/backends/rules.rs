//! Offline directive extractor driven by cue phrases.
//!
//! Answers the directive-extraction prompt with schema JSON built from simple
//! sentence cues ("look in", "ignore", "report", "NOT"). Intended for
//! `--rules-only` runs and demos without a model; anything else it is asked
//! gets a refusal.

use async_trait::async_trait;
use serde_json::json;

use super::{BackendError, Completion, CompletionBackend, TokenUsage};
use crate::directives::StructuralDirective;
use crate::document::count_tokens;

const STRUCTURAL_CUES: [&str; 8] = [
    "the answer is likely in ",
    "the answer is in ",
    "look in ",
    "look at ",
    "focus on ",
    "search in ",
    "search ",
    "check ",
];
const FILTER_CUES: [&str; 5] = ["ignore ", "skip ", "exclude ", "disregard ", "filter out "];
const NEGATIVE_CUES: [&str; 7] = [
    "do not confuse with ",
    "don't confuse with ",
    "do not include ",
    "don't include ",
    "avoid ",
    "never ",
    "not ",
];
const POSITIVE_CUES: [&str; 6] = [
    "the answer should reference ",
    "the answer involves ",
    "answer should reference ",
    "only return ",
    "report ",
    "return ",
];

#[derive(Debug, Clone)]
pub struct RuleExtractor {
    model_id: String,
}

impl Default for RuleExtractor {
    fn default() -> Self {
        Self {
            model_id: "rules-extractor".into(),
        }
    }
}

fn strip_cue<'a>(sentence: &'a str, cues: &[&str]) -> Option<&'a str> {
    cues.iter().find_map(|cue| {
        sentence
            .get(..cue.len())
            .filter(|p| p.eq_ignore_ascii_case(cue))
            .map(|_| sentence[cue.len()..].trim())
    })
}

fn items(list: &str) -> Vec<String> {
    list.replace(", and ", ", ")
        .replace(" and ", ", ")
        .replace(" or ", ", ")
        .split(',')
        .map(|s| s.trim().trim_start_matches("the ").trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Extracts `(structural, filters, validations)` from knowledge text.
pub fn extract_by_rules(knowledge: &str) -> (Vec<String>, Vec<String>, Vec<(String, bool)>) {
    let mut structural = Vec::new();
    let mut filters = Vec::new();
    let mut validations = Vec::new();
    let sentences = knowledge
        .split(['.', ';', '\n', '!'])
        .map(str::trim)
        .filter(|s| !s.is_empty());
    for sentence in sentences {
        if let Some(rest) = strip_cue(sentence, &STRUCTURAL_CUES) {
            for item in items(rest) {
                let directive = StructuralDirective::new(item.as_str());
                structural.push(directive.target_kind.map_or(item, |k| k.to_string()));
            }
        } else if let Some(rest) = strip_cue(sentence, &FILTER_CUES) {
            filters.extend(
                items(rest)
                    .into_iter()
                    .filter(|i| !i.starts_with("chunks not relevant")),
            );
        } else if let Some(rest) = strip_cue(sentence, &NEGATIVE_CUES) {
            validations.push((rest.to_string(), true));
        } else if let Some(rest) = strip_cue(sentence, &POSITIVE_CUES) {
            // "diluted computations, NOT basic computations"
            let lower = rest.to_ascii_lowercase();
            match lower.find(", not ") {
                Some(at) => {
                    validations.push((rest[..at].trim().to_string(), false));
                    validations.push((rest[at + ", not ".len()..].trim().to_string(), true));
                }
                None => validations.push((rest.to_string(), false)),
            }
        }
    }
    (structural, filters, validations)
}

#[async_trait]
impl CompletionBackend for RuleExtractor {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let knowledge = prompt
            .split_once("<knowledge>")
            .and_then(|(_, rest)| rest.split_once("</knowledge>"))
            .map(|(k, _)| k.trim());
        let text = match knowledge {
            Some(k) => {
                let (s, f, v) = extract_by_rules(k);
                let validations: Vec<_> = v
                    .into_iter()
                    .map(|(text, negated)| json!({"text": text, "negated": negated}))
                    .collect();
                json!({"structural": s, "filters": f, "validations": validations}).to_string()
            }
            None => super::REFUSAL_SENTINEL.to_string(),
        };
        Ok(Completion {
            usage: TokenUsage::new(
                self.model_id.clone(),
                count_tokens(prompt) as u64,
                count_tokens(&text) as u64,
            ),
            logprobs: None,
            text,
        })
    }
}
