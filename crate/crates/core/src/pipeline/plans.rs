//! Single-call baselines.

use crate::backends::{BackendError, ModelRouter, Role};
use crate::chunking::chunk_full_document;
use crate::document::StructuredDocument;
use crate::operators::CandidateResponse;
use crate::trace::{CostStage, PipelineStage, Trace};

use super::{answer_prompt, select_context, PipelineError, QueryRequest};

/// Context-length rejections tolerated before giving up; each halves the limit.
const MAX_SHRINKS: usize = 2;

/// Keeps the head of `text` within `limit` estimated tokens.
fn truncate_tokens(text: &str, limit: usize) -> &str {
    let max_bytes = limit.saturating_mul(4);
    if text.len() <= max_bytes {
        return text;
    }
    let mut end = max_bytes;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

fn backend_error(source: BackendError, trace: &Trace) -> PipelineError {
    PipelineError::Backend {
        source,
        trace: trace.entries(),
    }
}

async fn single_call(
    context: &str,
    chunk_id: &str,
    request: &QueryRequest,
    router: &ModelRouter,
    trace: &Trace,
) -> Result<CandidateResponse, BackendError> {
    let prompt = answer_prompt(&request.question, context);
    match router.generate(Role::Expensive, &prompt).await {
        Ok(g) => {
            trace.call(CostStage::ExpensiveLlm, g.usage);
            Ok(CandidateResponse {
                response_id: format!("p{}-c0", trace.pass()),
                chunk_id: chunk_id.to_string(),
                chunk_index: 0,
                text: g.text,
                confidence: g.confidence,
                is_refusal: g.is_refusal,
                validation: None,
                error: None,
            })
        }
        Err(e) => {
            trace.failed_call(CostStage::ExpensiveLlm, router.model_id(Role::Expensive));
            Err(e)
        }
    }
}

/// The whole document in one call, truncated to the context limit.
pub(super) async fn vanilla(
    doc: &StructuredDocument,
    request: &QueryRequest,
    router: &ModelRouter,
    trace: &Trace,
) -> Result<Vec<CandidateResponse>, PipelineError> {
    let full = doc.full_text();
    let mut limit = request.config.context_limit;
    let mut shrinks = 0;
    loop {
        let context = truncate_tokens(&full, limit);
        trace.stage(
            PipelineStage::Generate,
            format!("whole document, {} of {} bytes", context.len(), full.len()),
        );
        match single_call(context, &doc.doc_id, request, router, trace).await {
            Ok(c) => return Ok(vec![c]),
            Err(BackendError::ContextLength(msg)) if shrinks < MAX_SHRINKS && limit > 1 => {
                shrinks += 1;
                limit /= 2;
                trace.note(format!(
                    "context rejected ({msg}); retrying with {limit} tokens"
                ));
            }
            Err(e) => return Err(backend_error(e, trace)),
        }
    }
}

/// Top-k chunks by similarity, concatenated in document order, in one call.
pub(super) async fn rag(
    doc: &StructuredDocument,
    request: &QueryRequest,
    router: &ModelRouter,
    trace: &Trace,
) -> Result<Vec<CandidateResponse>, PipelineError> {
    let config = &request.config;
    let chunks = chunk_full_document(doc, config.chunk_budget)?;
    trace.stage(
        PipelineStage::Select,
        format!("{} chunks, top_k {}", chunks.len(), config.top_k),
    );
    let selected = select_context(chunks, &request.question, config.top_k, router, trace)
        .await
        .map_err(|e| backend_error(e, trace))?;
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let context = selected
        .iter()
        .map(|c| c.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    trace.stage(
        PipelineStage::Generate,
        format!("{} chunks in one call", selected.len()),
    );
    let id = selected
        .iter()
        .map(|c| c.chunk_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    single_call(&context, &id, request, router, trace)
        .await
        .map(|c| vec![c])
        .map_err(|e| backend_error(e, trace))
}
