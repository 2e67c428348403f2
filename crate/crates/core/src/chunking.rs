//! Layout-aware greedy chunking.
//!
//! Elements are packed in document order; a new chunk starts whenever the
//! next piece would push the running total past the budget. Tables are never
//! split. An oversized non-table element starts a fresh chunk and is cut at
//! whitespace into budget-sized pieces; its id then appears in each of the
//! consecutive chunks holding one of its pieces.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::document::{
    count_tokens, DocumentError, ElementId, ElementKind, PrunedDocument, StructuralElement,
    StructuredDocument,
};

const PIECE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_element_ids: Vec<ElementId>,
    pub text: String,
    /// Sum of the packed pieces' token estimates (the packing measure).
    pub token_count: usize,
    pub index: usize,
}

struct Piece<'a> {
    element: &'a StructuralElement,
    range: Range<usize>,
    tokens: usize,
}

impl Piece<'_> {
    fn text(&self) -> &str {
        &self.element.text[self.range.clone()]
    }
}

/// Chunks the retained elements of `view` under a token budget.
pub fn chunk_document(
    doc: &StructuredDocument,
    view: &PrunedDocument,
    budget: usize,
) -> Result<Vec<Chunk>, DocumentError> {
    if budget == 0 {
        return Err(DocumentError::ZeroBudget);
    }
    if view.source_doc_id != doc.doc_id {
        return Err(DocumentError::DocumentMismatch {
            view: view.source_doc_id.clone(),
            doc: doc.doc_id.clone(),
        });
    }

    let mut chunks = Vec::new();
    let mut current: Vec<Piece<'_>> = Vec::new();
    let mut current_tokens = 0usize;

    for element in view.elements(doc) {
        let oversized = element.token_count > budget && element.kind != ElementKind::Table;
        let pieces = if oversized {
            split_element(element, budget)
        } else {
            vec![Piece {
                element,
                range: 0..element.text.len(),
                tokens: element.token_count,
            }]
        };
        if oversized && !current.is_empty() {
            flush(&doc.doc_id, &mut current, &mut current_tokens, &mut chunks);
        }
        for piece in pieces {
            if !current.is_empty() && current_tokens + piece.tokens > budget {
                flush(&doc.doc_id, &mut current, &mut current_tokens, &mut chunks);
            }
            current_tokens += piece.tokens;
            current.push(piece);
        }
    }
    if !current.is_empty() {
        flush(&doc.doc_id, &mut current, &mut current_tokens, &mut chunks);
    }
    Ok(chunks)
}

/// Chunks every element of `doc`.
pub fn chunk_full_document(
    doc: &StructuredDocument,
    budget: usize,
) -> Result<Vec<Chunk>, DocumentError> {
    chunk_document(doc, &PrunedDocument::full(doc), budget)
}

fn flush<'a>(
    doc_id: &str,
    current: &mut Vec<Piece<'a>>,
    tokens: &mut usize,
    chunks: &mut Vec<Chunk>,
) {
    let pieces = std::mem::take(current);
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    let mut ids: Vec<ElementId> = Vec::with_capacity(pieces.len());
    for piece in &pieces {
        hasher.update([0x1f]);
        hasher.update(piece.element.element_id.as_str().as_bytes());
        hasher.update(format!("\x1e{}..{}", piece.range.start, piece.range.end).as_bytes());
        if ids.last() != Some(&piece.element.element_id) {
            ids.push(piece.element.element_id.clone());
        }
    }
    let digest = hasher.finalize();
    let text = pieces
        .iter()
        .map(Piece::text)
        .collect::<Vec<_>>()
        .join(PIECE_SEPARATOR);
    chunks.push(Chunk {
        chunk_id: hex::encode(&digest[..16]),
        source_element_ids: ids,
        text,
        token_count: *tokens,
        index: chunks.len(),
    });
    *tokens = 0;
}

/// Cuts an element into pieces of at most `budget` tokens, each ending at the
/// last whitespace that fits (hard cut on a char boundary when none does).
fn split_element(element: &StructuralElement, budget: usize) -> Vec<Piece<'_>> {
    let text = element.text.as_str();
    let limit = budget.saturating_mul(4);
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let rest = &text[start..];
        if count_tokens(rest) <= budget {
            pieces.push(Piece {
                element,
                range: start..text.len(),
                tokens: count_tokens(rest),
            });
            break;
        }
        let soft = rest
            .char_indices()
            .filter(|(_, c)| c.is_whitespace())
            .map(|(i, c)| i + c.len_utf8())
            .take_while(|&end| end <= limit)
            .last();
        let end = soft.unwrap_or_else(|| {
            let mut end = limit.min(rest.len());
            while !rest.is_char_boundary(end) {
                end -= 1;
            }
            end.max(rest.chars().next().map_or(1, char::len_utf8))
        });
        pieces.push(Piece {
            element,
            range: start..start + end,
            tokens: count_tokens(&rest[..end]),
        });
        start += end;
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::ElementInput;

    fn doc_with(sizes: &[(ElementKind, usize)]) -> StructuredDocument {
        let inputs = sizes
            .iter()
            .enumerate()
            .map(|(i, (kind, tokens))| {
                ElementInput::new(format!("e{}", i + 1), *kind, "x".repeat(tokens * 4))
            })
            .collect();
        StructuredDocument::new("doc", inputs).unwrap()
    }

    fn ids(chunk: &Chunk) -> Vec<&str> {
        chunk
            .source_element_ids
            .iter()
            .map(ElementId::as_str)
            .collect()
    }

    #[test]
    fn greedy_packing_example() {
        let doc = doc_with(&[(ElementKind::Paragraph, 1500); 3]);
        let chunks = chunk_full_document(&doc, 4000).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(ids(&chunks[0]), vec!["e1", "e2"]);
        assert_eq!(ids(&chunks[1]), vec!["e3"]);
        assert_eq!(chunks[0].token_count, 3000);
    }

    #[test]
    fn oversized_table_is_a_lone_chunk() {
        let doc = doc_with(&[(ElementKind::Table, 9000)]);
        let chunks = chunk_full_document(&doc, 4000).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 9000);

        let doc = doc_with(&[
            (ElementKind::Paragraph, 10),
            (ElementKind::Table, 9000),
            (ElementKind::Paragraph, 10),
        ]);
        let chunks = chunk_full_document(&doc, 4000).unwrap();
        let layout: Vec<_> = chunks.iter().map(ids).collect();
        assert_eq!(layout, vec![vec!["e1"], vec!["e2"], vec!["e3"]]);
    }

    #[test]
    fn oversized_paragraph_splits_at_whitespace() {
        let word = "abcdefg "; // 8 bytes
        let text = word.repeat(1000); // 8000 bytes = 2000 tokens
        let doc = StructuredDocument::new(
            "d",
            vec![
                ElementInput::new("a", ElementKind::Paragraph, "short"),
                ElementInput::new("b", ElementKind::Paragraph, text.clone()),
            ],
        )
        .unwrap();
        let chunks = chunk_full_document(&doc, 300).unwrap();
        assert_eq!(ids(&chunks[0]), vec!["a"]);
        for c in &chunks {
            assert!(c.token_count <= 300, "{}", c.token_count);
        }
        let rebuilt: String = chunks[1..].iter().map(|c| c.text.as_str()).collect();
        assert_eq!(rebuilt, text);
        // Every non-final piece ends exactly on a whitespace boundary.
        for c in &chunks[1..chunks.len() - 1] {
            assert!(c.text.ends_with(' '));
            assert_eq!(c.text.len(), 1200);
        }
    }

    #[test]
    fn no_whitespace_falls_back_to_char_boundary() {
        let text = "é".repeat(3000); // 6000 bytes, 2-byte chars
        let doc = StructuredDocument::new(
            "d",
            vec![ElementInput::new("a", ElementKind::Other, text.clone())],
        )
        .unwrap();
        let chunks = chunk_full_document(&doc, 101).unwrap();
        let rebuilt: String = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(rebuilt, text);
        assert!(chunks.iter().all(|c| c.token_count <= 101));
    }

    #[test]
    fn respects_pruned_view_and_budget_errors() {
        let doc = doc_with(&[
            (ElementKind::Table, 10),
            (ElementKind::Paragraph, 10),
            (ElementKind::Table, 10),
        ]);
        let view = PrunedDocument::retain(&doc, [ElementId::from("e1"), ElementId::from("e3")]);
        let chunks = chunk_document(&doc, &view, 4000).unwrap();
        assert_eq!(ids(&chunks[0]), vec!["e1", "e3"]);
        assert_eq!(
            chunk_document(&doc, &view, 0),
            Err(DocumentError::ZeroBudget)
        );
        let empty = PrunedDocument::retain(&doc, []);
        assert!(chunk_document(&doc, &empty, 10).unwrap().is_empty());
    }

    #[test]
    fn chunk_ids_are_stable_and_distinct() {
        let doc = doc_with(&[(ElementKind::Paragraph, 1500); 3]);
        let a = chunk_full_document(&doc, 4000).unwrap();
        let b = chunk_full_document(&doc, 4000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].chunk_id, a[1].chunk_id);
        let c = chunk_full_document(&doc, 1500).unwrap();
        assert_ne!(a[0].chunk_id, c[0].chunk_id);
    }
}
