//! The three domain operators and the two ranking rules.
//!
//! * [`structural_prune`] keeps the document elements matching structural directives.
//! * [`filter_chunks`] runs the cheap classifier over candidate chunks.
//! * [`ValidationScorer`] scores responses against validation directives, and
//!   [`rank_by_validation`] / [`rank_by_confidence`] order them.

mod filter;
mod rank;
mod structural;
mod validate;

pub use filter::{decide_keep, filter_chunks, filter_prompt, FilterDecision, FilterOutcome};
pub use rank::{rank_by_confidence, rank_by_validation, CandidateResponse};
pub use structural::{structural_prune, StructuralOutcome, DEFAULT_MATCH_THRESHOLD};
pub use validate::{
    score_against, validate_score, ValidationScore, ValidationScorer, ValidationTerm,
};
