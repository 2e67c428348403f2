use std::cmp::Ordering;

use futures::future::join_all;

use crate::backends::{cosine_sim, BackendError, ModelRouter};
use crate::chunking::Chunk;
use crate::trace::{CostStage, Trace};

/// Picks the `top_k` chunks most similar to the question and returns them in
/// document order. When there are at most `top_k` chunks nothing is embedded.
pub async fn select_context(
    chunks: Vec<Chunk>,
    question: &str,
    top_k: usize,
    router: &ModelRouter,
    trace: &Trace,
) -> Result<Vec<Chunk>, BackendError> {
    if chunks.len() <= top_k {
        return Ok(chunks);
    }

    let query = router.embed(question).await;
    let query = match query {
        Ok(e) => {
            trace.call(CostStage::Embedding, e.usage);
            e.vector
        }
        Err(err) => {
            trace.failed_call(CostStage::Embedding, router.embedder_model_id());
            return Err(err);
        }
    };

    let embedded = join_all(chunks.iter().map(|c| async move {
        if c.text.trim().is_empty() {
            None
        } else {
            Some(router.embed(&c.text).await)
        }
    }))
    .await;

    let mut scored: Vec<(f64, Chunk)> = Vec::with_capacity(chunks.len());
    let mut failure = None;
    for (chunk, e) in chunks.into_iter().zip(embedded) {
        let similarity = match e {
            None => f64::NEG_INFINITY,
            Some(Ok(e)) => {
                trace.call(CostStage::Embedding, e.usage);
                cosine_sim(&query, &e.vector)
            }
            Some(Err(err)) => {
                trace.failed_call(CostStage::Embedding, router.embedder_model_id());
                failure.get_or_insert(err);
                f64::NEG_INFINITY
            }
        };
        scored.push((similarity, chunk));
    }
    if let Some(err) = failure {
        return Err(err);
    }

    scored.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    let mut selected: Vec<Chunk> = scored.into_iter().take(top_k).map(|(_, c)| c).collect();
    selected.sort_by_key(|c| c.index);
    Ok(selected)
}
