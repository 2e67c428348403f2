//! Structure-aware documents and the deterministic token estimate.
//!
//! A document arrives as pre-parsed JSON (see [`parse_structured_document`])
//! and is kept as an ordered list of tagged [`StructuralElement`]s. Pruning
//! produces a [`PrunedDocument`] view that the chunker in [`crate::chunking`]
//! turns into model-sized slices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Deterministic, model-free token estimate: `ceil(byte_length / 4)`.
pub fn count_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocumentError {
    #[error("invalid document JSON: {0}")]
    Json(String),
    #[error("element {index}: {message}")]
    Element { index: usize, message: String },
    #[error("element {index}: duplicate element id `{id}`")]
    DuplicateId { index: usize, id: String },
    #[error("element {index}: parent `{parent}` does not exist")]
    UnknownParent { index: usize, parent: String },
    #[error("parent references form a cycle through `{0}`")]
    ParentCycle(String),
    #[error("chunk budget must be positive")]
    ZeroBudget,
    #[error("pruned view belongs to document `{view}`, not `{doc}`")]
    DocumentMismatch { view: String, doc: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Table,
    Section,
    Paragraph,
    Figure,
    Footnote,
    Other,
}

impl ElementKind {
    pub const ALL: [ElementKind; 6] = [
        ElementKind::Table,
        ElementKind::Section,
        ElementKind::Paragraph,
        ElementKind::Figure,
        ElementKind::Footnote,
        ElementKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Table => "table",
            ElementKind::Section => "section",
            ElementKind::Paragraph => "paragraph",
            ElementKind::Figure => "figure",
            ElementKind::Footnote => "footnote",
            ElementKind::Other => "other",
        }
    }

    /// Exact (case-insensitive) tag lookup. Unknown tags yield `None`.
    pub fn from_tag(tag: &str) -> Option<Self> {
        let tag = tag.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|k| k.as_str() == tag)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralElement {
    pub element_id: ElementId,
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub text: String,
    pub token_count: usize,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ElementId>,
}

impl StructuralElement {
    /// Text used to match this element against structural directives:
    /// the kind tag followed by the label, when there is one.
    pub fn match_key(&self) -> String {
        match &self.label {
            Some(label) => format!("{} {}", self.kind, label),
            None => self.kind.to_string(),
        }
    }
}

/// One element as written in the Document JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementInput {
    pub id: String,
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl ElementInput {
    pub fn new(id: impl Into<String>, kind: ElementKind, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            label: None,
            text: text.into(),
            parent: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }
}

// Wire form; `kind` stays a string so unknown tags can be mapped to `other`.
#[derive(Deserialize)]
struct RawElement {
    id: String,
    kind: String,
    #[serde(default)]
    label: Option<String>,
    text: String,
    #[serde(default)]
    parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDocument {
    pub doc_id: String,
    pub elements: Vec<StructuralElement>,
    pub total_tokens: usize,
}

impl StructuredDocument {
    /// Builds a document from elements in input order, assigning `order`
    /// and token counts and checking id uniqueness and the parent forest.
    pub fn new(
        doc_id: impl Into<String>,
        inputs: Vec<ElementInput>,
    ) -> Result<Self, DocumentError> {
        let mut index_of: HashMap<String, usize> = HashMap::with_capacity(inputs.len());
        for (index, input) in inputs.iter().enumerate() {
            if index_of.insert(input.id.clone(), index).is_some() {
                return Err(DocumentError::DuplicateId {
                    index,
                    id: input.id.clone(),
                });
            }
        }

        let mut parent_index = vec![None; inputs.len()];
        for (index, input) in inputs.iter().enumerate() {
            if let Some(parent) = &input.parent {
                match index_of.get(parent) {
                    Some(&p) => parent_index[index] = Some(p),
                    None => {
                        return Err(DocumentError::UnknownParent {
                            index,
                            parent: parent.clone(),
                        })
                    }
                }
            }
        }
        for start in 0..inputs.len() {
            let mut cursor = parent_index[start];
            let mut steps = 0;
            while let Some(p) = cursor {
                steps += 1;
                if p == start || steps > inputs.len() {
                    return Err(DocumentError::ParentCycle(inputs[start].id.clone()));
                }
                cursor = parent_index[p];
            }
        }

        let elements: Vec<StructuralElement> = inputs
            .into_iter()
            .enumerate()
            .map(|(order, input)| StructuralElement {
                element_id: ElementId(input.id),
                kind: input.kind,
                label: input.label,
                token_count: count_tokens(&input.text),
                text: input.text,
                order,
                parent: input.parent.map(ElementId),
            })
            .collect();
        let total_tokens = elements.iter().map(|e| e.token_count).sum();
        Ok(Self {
            doc_id: doc_id.into(),
            elements,
            total_tokens,
        })
    }

    /// Treats unstructured text as a document whose paragraphs (blank-line
    /// separated) are all of kind `other`.
    pub fn from_plain_text(doc_id: impl Into<String>, text: &str) -> Self {
        let inputs = text
            .split("\n\n")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .enumerate()
            .map(|(i, p)| ElementInput::new(format!("p{i}"), ElementKind::Other, p))
            .collect();
        Self::new(doc_id, inputs).expect("generated ids are unique and parentless")
    }

    pub fn element(&self, id: &ElementId) -> Option<&StructuralElement> {
        self.elements.iter().find(|e| &e.element_id == id)
    }

    pub fn element_ids(&self) -> BTreeSet<ElementId> {
        self.elements.iter().map(|e| e.element_id.clone()).collect()
    }

    /// All element texts joined in document order.
    pub fn full_text(&self) -> String {
        self.elements
            .iter()
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// The Document JSON input form of this document.
    pub fn to_input(&self) -> DocumentInput {
        DocumentInput {
            doc_id: self.doc_id.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| ElementInput {
                    id: e.element_id.0.clone(),
                    kind: e.kind,
                    label: e.label.clone(),
                    text: e.text.clone(),
                    parent: e.parent.as_ref().map(|p| p.0.clone()),
                })
                .collect(),
        }
    }
}

/// Serializable Document JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentInput {
    pub doc_id: String,
    pub elements: Vec<ElementInput>,
}

/// Parses the Document JSON format.
///
/// Errors name the offending element index. Unknown `kind` strings map to
/// [`ElementKind::Other`] with a warning.
pub fn parse_structured_document(input: &str) -> Result<StructuredDocument, DocumentError> {
    let value: Value =
        serde_json::from_str(input).map_err(|e| DocumentError::Json(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DocumentError::Json("top level must be an object".into()))?;
    let doc_id = obj
        .get("doc_id")
        .and_then(Value::as_str)
        .ok_or_else(|| DocumentError::Json("missing string field `doc_id`".into()))?;
    let elements = obj
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| DocumentError::Json("missing array field `elements`".into()))?;

    let mut inputs = Vec::with_capacity(elements.len());
    for (index, raw) in elements.iter().enumerate() {
        let raw: RawElement =
            serde_json::from_value(raw.clone()).map_err(|e| DocumentError::Element {
                index,
                message: e.to_string(),
            })?;
        let kind = ElementKind::from_tag(&raw.kind).unwrap_or_else(|| {
            tracing::warn!(index, kind = %raw.kind, "unknown element kind, treating as `other`");
            ElementKind::Other
        });
        inputs.push(ElementInput {
            id: raw.id,
            kind,
            label: raw.label,
            text: raw.text,
            parent: raw.parent,
        });
    }
    StructuredDocument::new(doc_id, inputs)
}

/// The subset of a document's elements kept by structural pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedDocument {
    pub source_doc_id: String,
    pub retained_element_ids: BTreeSet<ElementId>,
    pub is_full_fallback: bool,
}

impl PrunedDocument {
    pub fn full(doc: &StructuredDocument) -> Self {
        Self {
            source_doc_id: doc.doc_id.clone(),
            retained_element_ids: doc.element_ids(),
            is_full_fallback: true,
        }
    }

    /// Keeps the given ids; ids not present in `doc` are dropped.
    pub fn retain(doc: &StructuredDocument, ids: impl IntoIterator<Item = ElementId>) -> Self {
        let all = doc.element_ids();
        Self {
            source_doc_id: doc.doc_id.clone(),
            retained_element_ids: ids.into_iter().filter(|id| all.contains(id)).collect(),
            is_full_fallback: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.retained_element_ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.retained_element_ids.len()
    }

    /// Retained elements in document order.
    pub fn elements<'a>(
        &'a self,
        doc: &'a StructuredDocument,
    ) -> impl Iterator<Item = &'a StructuralElement> + 'a {
        doc.elements
            .iter()
            .filter(move |e| self.retained_element_ids.contains(&e.element_id))
    }

    pub fn retained_tokens(&self, doc: &StructuredDocument) -> usize {
        self.elements(doc).map(|e| e.token_count).sum()
    }
}
