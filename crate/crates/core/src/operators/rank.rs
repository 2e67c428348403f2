use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ValidationScore;

/// One chunk's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub response_id: String,
    pub chunk_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub confidence: Option<f64>,
    pub is_refusal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationScore>,
    /// Set when the generation call failed and this is a synthetic refusal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CandidateResponse {
    pub fn score(&self) -> f64 {
        self.validation.as_ref().map_or(0.0, |v| v.score)
    }
}

/// Non-refusals by validation score, highest first; ties by chunk index.
pub fn rank_by_validation(candidates: &[CandidateResponse], k: usize) -> Vec<CandidateResponse> {
    let mut ranked: Vec<CandidateResponse> = candidates
        .iter()
        .filter(|c| !c.is_refusal)
        .cloned()
        .collect();
    ranked.sort_by(|a, b| {
        b.score()
            .partial_cmp(&a.score())
            .unwrap_or(Ordering::Equal)
            .then(a.chunk_index.cmp(&b.chunk_index))
    });
    ranked.truncate(k);
    ranked
}

/// Non-refusals with a confidence first (highest first), then the rest in
/// chunk order; ties by chunk index.
pub fn rank_by_confidence(candidates: &[CandidateResponse], k: usize) -> Vec<CandidateResponse> {
    let mut ranked: Vec<CandidateResponse> = candidates
        .iter()
        .filter(|c| !c.is_refusal)
        .cloned()
        .collect();
    ranked.sort_by(|a, b| {
        let by_conf = match (a.confidence, b.confidence) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_conf.then(a.chunk_index.cmp(&b.chunk_index))
    });
    ranked.truncate(k);
    ranked
}
