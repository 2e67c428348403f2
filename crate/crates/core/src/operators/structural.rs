use std::collections::BTreeMap;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::backends::{cosine_sim, EmbeddingVector, ModelRouter};
use crate::directives::StructuralDirective;
use crate::document::{ElementId, PrunedDocument, StructuredDocument};
use crate::trace::{CostStage, Trace};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralOutcome {
    pub pruned: PrunedDocument,
    /// Elements matched per directive, in directive order.
    pub matches_per_directive: Vec<(String, usize)>,
    /// Directives were given but none matched; the full document is kept.
    pub no_match: bool,
}

/// Keeps the union of elements matched by any directive.
///
/// An element matches a directive when the directive names its kind
/// generically, or when the cosine similarity between the directive text and
/// the element's `kind label` key reaches `threshold`. With no directives, no
/// matches, or an embedding failure the full document is returned with
/// `is_full_fallback` set.
pub async fn structural_prune(
    doc: &StructuredDocument,
    directives: &[StructuralDirective],
    threshold: f64,
    router: &ModelRouter,
    trace: &Trace,
) -> StructuralOutcome {
    if directives.is_empty() {
        return StructuralOutcome {
            pruned: PrunedDocument::full(doc),
            matches_per_directive: Vec::new(),
            no_match: false,
        };
    }

    let mut keys: Vec<String> = Vec::new();
    let mut key_index: BTreeMap<String, usize> = BTreeMap::new();
    let element_keys: Vec<usize> = doc
        .elements
        .iter()
        .map(|e| {
            let key = e.match_key();
            *key_index.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            })
        })
        .collect();

    let texts: Vec<&str> = directives
        .iter()
        .map(|d| d.raw_text.as_str())
        .chain(keys.iter().map(String::as_str))
        .collect();
    let embedded = join_all(texts.iter().map(|t| router.embed(t))).await;
    let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(embedded.len());
    let mut failure = None;
    for result in embedded {
        match result {
            Ok(e) => {
                trace.call(CostStage::Structural, e.usage);
                vectors.push(e.vector);
            }
            Err(err) => {
                trace.failed_call(CostStage::Structural, router.embedder_model_id());
                failure.get_or_insert(err);
            }
        }
    }
    if let Some(err) = failure {
        trace.note(format!(
            "structural matching unavailable ({err}); keeping full document"
        ));
        return StructuralOutcome {
            pruned: PrunedDocument::full(doc),
            matches_per_directive: directives.iter().map(|d| (d.raw_text.clone(), 0)).collect(),
            no_match: true,
        };
    }
    let (directive_vecs, key_vecs) = vectors.split_at(directives.len());

    let mut retained: Vec<ElementId> = Vec::new();
    let mut matches_per_directive = Vec::with_capacity(directives.len());
    let mut keep = vec![false; doc.elements.len()];
    for (directive, dvec) in directives.iter().zip(directive_vecs) {
        let mut count = 0;
        for (i, element) in doc.elements.iter().enumerate() {
            let by_kind = directive.target_kind == Some(element.kind);
            if by_kind || cosine_sim(dvec, &key_vecs[element_keys[i]]) >= threshold {
                count += 1;
                keep[i] = true;
            }
        }
        matches_per_directive.push((directive.raw_text.clone(), count));
    }
    for (i, element) in doc.elements.iter().enumerate() {
        if keep[i] {
            retained.push(element.element_id.clone());
        }
    }

    if retained.is_empty() {
        return StructuralOutcome {
            pruned: PrunedDocument::full(doc),
            matches_per_directive,
            no_match: true,
        };
    }
    StructuralOutcome {
        pruned: PrunedDocument::retain(doc, retained),
        matches_per_directive,
        no_match: false,
    }
}
