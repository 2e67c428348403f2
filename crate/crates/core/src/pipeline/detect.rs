use serde::{Deserialize, Serialize};

use crate::operators::CandidateResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    AllRefusal,
    LowVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackSignal {
    pub kind: SignalKind,
    pub evidence: String,
}

/// Raised when no response carries an answer, including when no chunk
/// reached generation at all.
pub fn detect_context_loss(responses: &[CandidateResponse]) -> Option<FallbackSignal> {
    if responses.is_empty() {
        return Some(FallbackSignal {
            kind: SignalKind::AllRefusal,
            evidence: "no chunks reached generation".into(),
        });
    }
    let refused = responses.iter().filter(|r| r.is_refusal).count();
    (refused == responses.len()).then(|| FallbackSignal {
        kind: SignalKind::AllRefusal,
        evidence: format!("{refused}/{} responses refused", responses.len()),
    })
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Raised when validation scores cannot tell responses apart: population
/// variance below `epsilon` over two or more scores, or a single score whose
/// magnitude is below `epsilon` while validation directives exist.
pub fn detect_nondiscriminative_validation(
    scores: &[f64],
    epsilon: f64,
    has_directives: bool,
) -> Option<FallbackSignal> {
    match scores {
        [] => None,
        [only] => (has_directives && only.abs() < epsilon).then(|| FallbackSignal {
            kind: SignalKind::LowVariance,
            evidence: format!("single score {only:.6e} below {epsilon:e}"),
        }),
        _ => {
            let variance = population_variance(scores);
            (variance < epsilon).then(|| FallbackSignal {
                kind: SignalKind::LowVariance,
                evidence: format!(
                    "score variance {variance:.6e} < {epsilon:e} over {} responses",
                    scores.len()
                ),
            })
        }
    }
}
