use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::backends::{cosine_sim, BackendError, EmbeddingVector, ModelRouter};
use crate::directives::{Polarity, ValidationDirective};
use crate::trace::{CostStage, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTerm {
    pub directive: String,
    pub polarity: Polarity,
    pub similarity: f64,
    /// `similarity` for positive directives, `-similarity` for negative ones.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub response_id: String,
    pub score: f64,
    pub per_directive_terms: Vec<ValidationTerm>,
}

impl ValidationScore {
    pub fn empty(response_id: impl Into<String>) -> Self {
        Self {
            response_id: response_id.into(),
            score: 0.0,
            per_directive_terms: Vec::new(),
        }
    }
}

/// Scores a response embedding against pre-embedded directives:
/// Σ cos over positives minus Σ cos over negatives, summed in directive order.
pub fn score_against(
    response_id: impl Into<String>,
    response: &EmbeddingVector,
    directives: &[(ValidationDirective, EmbeddingVector)],
) -> ValidationScore {
    let mut score = 0.0;
    let per_directive_terms = directives
        .iter()
        .map(|(d, v)| {
            let similarity = cosine_sim(response, v);
            let contribution = match d.polarity {
                Polarity::Positive => similarity,
                Polarity::Negative => -similarity,
            };
            score += contribution;
            ValidationTerm {
                directive: d.raw_text.clone(),
                polarity: d.polarity,
                similarity,
                contribution,
            }
        })
        .collect();
    ValidationScore {
        response_id: response_id.into(),
        score,
        per_directive_terms,
    }
}

/// Holds embedded validation directives so each is embedded once per query.
pub struct ValidationScorer<'a> {
    router: &'a ModelRouter,
    trace: &'a Trace,
    directives: Vec<(ValidationDirective, EmbeddingVector)>,
}

impl<'a> ValidationScorer<'a> {
    /// Embeds every directive, charging the calls to the validate stage.
    pub async fn new(
        directives: &[ValidationDirective],
        router: &'a ModelRouter,
        trace: &'a Trace,
    ) -> Result<ValidationScorer<'a>, BackendError> {
        let embedded = join_all(directives.iter().map(|d| router.embed(&d.raw_text))).await;
        let mut out = Vec::with_capacity(directives.len());
        let mut failure = None;
        for (d, e) in directives.iter().zip(embedded) {
            match e {
                Ok(e) => {
                    trace.call(CostStage::Validate, e.usage);
                    out.push((d.clone(), e.vector));
                }
                Err(err) => {
                    trace.failed_call(CostStage::Validate, router.embedder_model_id());
                    failure.get_or_insert(err);
                }
            }
        }
        match failure {
            Some(err) => Err(err),
            None => Ok(Self {
                router,
                trace,
                directives: out,
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    /// Scores several responses, embedding them concurrently and recording
    /// calls in input order.
    pub async fn score_all(
        &self,
        responses: &[(String, &str)],
    ) -> Result<Vec<ValidationScore>, BackendError> {
        if self.directives.is_empty() {
            return Ok(responses
                .iter()
                .map(|(id, _)| ValidationScore::empty(id.clone()))
                .collect());
        }
        let embedded = join_all(responses.iter().map(|(_, text)| self.router.embed(text))).await;
        let mut scores = Vec::with_capacity(responses.len());
        let mut failure = None;
        for ((id, _), e) in responses.iter().zip(embedded) {
            match e {
                Ok(e) => {
                    self.trace.call(CostStage::Validate, e.usage);
                    scores.push(score_against(id.clone(), &e.vector, &self.directives));
                }
                Err(err) => {
                    self.trace
                        .failed_call(CostStage::Validate, self.router.embedder_model_id());
                    failure.get_or_insert(err);
                }
            }
        }
        match failure {
            Some(err) => Err(err),
            None => Ok(scores),
        }
    }
}

/// One-shot form of [`ValidationScorer`] for a single response.
pub async fn validate_score(
    response_id: &str,
    response: &str,
    directives: &[ValidationDirective],
    router: &ModelRouter,
    trace: &Trace,
) -> Result<ValidationScore, BackendError> {
    let scorer = ValidationScorer::new(directives, router, trace).await?;
    let mut scores = scorer
        .score_all(&[(response_id.to_string(), response)])
        .await?;
    Ok(scores.remove(0))
}
