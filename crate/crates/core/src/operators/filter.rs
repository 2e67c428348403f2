use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::backends::{ModelRouter, Role};
use crate::chunking::Chunk;
use crate::directives::{serialize_filters, FilterDirective};
use crate::trace::{CostStage, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub chunk_id: String,
    pub keep: bool,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<Chunk>,
    pub decisions: Vec<FilterDecision>,
    /// Every chunk was judged discardable, so all were kept instead.
    pub all_discard_guard: bool,
}

impl FilterOutcome {
    pub fn discarded(&self) -> usize {
        self.decisions.iter().filter(|d| !d.keep).count()
    }
}

/// Only an explicit DISCARD drops a chunk; KEEP and anything malformed keep it.
pub fn decide_keep(reply: &str) -> bool {
    let first = reply.split_whitespace().next().map(|t| {
        t.trim_matches(|c: char| c.is_ascii_punctuation())
            .to_uppercase()
    });
    first.as_deref() != Some("DISCARD")
}

pub fn filter_prompt(filters: &[FilterDirective], question: &str, chunk: &Chunk) -> String {
    format!(
        "{}\n<excerpt>\n{}\n</excerpt>\n",
        serialize_filters(filters, question),
        chunk.text
    )
}

/// Screens chunks with one filter-role call each. Output preserves input
/// order. Calls run concurrently up to the router's limit; failed calls keep
/// their chunk.
pub async fn filter_chunks(
    chunks: &[Chunk],
    filters: &[FilterDirective],
    question: &str,
    router: &ModelRouter,
    trace: &Trace,
) -> FilterOutcome {
    if filters.is_empty() {
        return FilterOutcome {
            kept: chunks.to_vec(),
            decisions: Vec::new(),
            all_discard_guard: false,
        };
    }

    let prompts: Vec<String> = chunks
        .iter()
        .map(|c| filter_prompt(filters, question, c))
        .collect();
    let replies = join_all(prompts.iter().map(|p| router.generate(Role::Filter, p))).await;

    let mut decisions = Vec::with_capacity(chunks.len());
    for (chunk, reply) in chunks.iter().zip(replies) {
        let decision = match reply {
            Ok(g) => {
                trace.call(CostStage::Filter, g.usage);
                FilterDecision {
                    chunk_id: chunk.chunk_id.clone(),
                    keep: decide_keep(&g.text),
                    raw_reply: g.text,
                }
            }
            Err(e) => {
                trace.failed_call(CostStage::Filter, router.model_id(Role::Filter));
                tracing::warn!(chunk = chunk.index, error = %e, "filter call failed, keeping chunk");
                FilterDecision {
                    chunk_id: chunk.chunk_id.clone(),
                    keep: true,
                    raw_reply: format!("error: {e}"),
                }
            }
        };
        decisions.push(decision);
    }

    let all_discard_guard = !chunks.is_empty() && decisions.iter().all(|d| !d.keep);
    let kept = if all_discard_guard {
        chunks.to_vec()
    } else {
        chunks
            .iter()
            .zip(&decisions)
            .filter(|(_, d)| d.keep)
            .map(|(c, _)| c.clone())
            .collect()
    };
    FilterOutcome {
        kept,
        decisions,
        all_discard_guard,
    }
}
