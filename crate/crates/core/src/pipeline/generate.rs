use futures::future::join_all;

use crate::backends::{BackendError, ModelRouter, Role};
use crate::chunking::Chunk;
use crate::operators::CandidateResponse;
use crate::trace::{CostStage, Trace};

pub const ANSWER_TEMPLATE_VERSION: &str = "v1";
const ANSWER_TEMPLATE: &str = include_str!("../../resources/answer_chunk.v1.txt");

/// The per-chunk question-answering prompt, including the refusal sentinel
/// instruction.
pub fn answer_prompt(question: &str, context: &str) -> String {
    ANSWER_TEMPLATE
        .replace("{{question}}", question.trim())
        .replace("{{context}}", context)
}

pub struct GenerateOutcome {
    /// In chunk order.
    pub candidates: Vec<CandidateResponse>,
    pub errors: Vec<BackendError>,
}

impl GenerateOutcome {
    /// Every call failed; nothing the model said is in the candidates.
    pub fn total_outage(&self) -> bool {
        !self.candidates.is_empty() && self.errors.len() == self.candidates.len()
    }
}

/// One expensive-role call per chunk. A failed call becomes a refusal
/// carrying the error, so the result always has one candidate per chunk.
pub async fn generate_responses(
    chunks: &[Chunk],
    question: &str,
    router: &ModelRouter,
    trace: &Trace,
) -> GenerateOutcome {
    let pass = trace.pass();
    let prompts: Vec<String> = chunks
        .iter()
        .map(|c| answer_prompt(question, &c.text))
        .collect();
    let replies = join_all(prompts.iter().map(|p| router.generate(Role::Expensive, p))).await;

    let mut candidates = Vec::with_capacity(chunks.len());
    let mut errors = Vec::new();
    for (chunk, reply) in chunks.iter().zip(replies) {
        let response_id = format!("p{pass}-c{}", chunk.index);
        let candidate = match reply {
            Ok(g) => {
                trace.call(CostStage::ExpensiveLlm, g.usage);
                CandidateResponse {
                    response_id,
                    chunk_id: chunk.chunk_id.clone(),
                    chunk_index: chunk.index,
                    text: g.text,
                    confidence: g.confidence,
                    is_refusal: g.is_refusal,
                    validation: None,
                    error: None,
                }
            }
            Err(e) => {
                trace.failed_call(CostStage::ExpensiveLlm, router.model_id(Role::Expensive));
                let c = CandidateResponse {
                    response_id,
                    chunk_id: chunk.chunk_id.clone(),
                    chunk_index: chunk.index,
                    text: crate::backends::REFUSAL_SENTINEL.to_string(),
                    confidence: None,
                    is_refusal: true,
                    validation: None,
                    error: Some(e.to_string()),
                };
                errors.push(e);
                c
            }
        };
        candidates.push(candidate);
    }
    GenerateOutcome { candidates, errors }
}
