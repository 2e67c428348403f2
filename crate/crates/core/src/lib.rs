//! Directive-driven question answering over long, structured documents.
//!
//! Free-form domain knowledge is compiled into a [`DirectiveSet`] whose
//! structural, filter and validation directives drive three operators around
//! an otherwise plain chunk-select-generate loop:
//!
//! ```text
//! knowledge ─► directives ─► structural prune ─► select top-k ─► filter ─► generate ─► validate/rank
//! ```
//!
//! [`Engine::execute_query`] runs the whole pipeline with its two fallbacks
//! (context re-execution after an all-refusal pass, confidence ranking when
//! validation scores do not discriminate). Backends are reached through a
//! [`ModelRouter`]; [`backends::mock`] provides scripted, deterministic ones.

pub mod backends;
pub mod chunking;
pub mod directives;
pub mod document;
pub mod evaluation;
pub mod operators;
pub mod pipeline;
pub mod store;
pub mod trace;

pub use backends::{BackendError, ModelRouter, Role};
pub use chunking::{chunk_document, chunk_full_document, Chunk};
pub use directives::{
    DirectiveSet, FilterDirective, Polarity, StructuralDirective, ValidationDirective,
};
pub use document::{count_tokens, parse_structured_document, PrunedDocument, StructuredDocument};
pub use evaluation::{CostReport, PriceTable};
pub use pipeline::{Engine, PipelineConfig, PipelineError, Plan, QueryRequest, QueryResult};
pub use store::{DocumentSource, DocumentStore, MemoryStore, StoreError};
pub use trace::{CostStage, FallbackEvent, Trace, TraceEntry};
