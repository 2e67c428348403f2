//! Per-query execution trace and token ledger.
//!
//! Every stage boundary, backend call and fallback is appended with a logical
//! sequence number. Fan-out operators collect their results first and then
//! record calls in input order, so traces replay byte-identically under
//! deterministic backends.

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backends::TokenUsage;

/// Cost accounting buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostStage {
    KnowledgeParser,
    Structural,
    Filter,
    ExpensiveLlm,
    Validate,
    Embedding,
}

impl CostStage {
    pub const ALL: [CostStage; 6] = [
        CostStage::KnowledgeParser,
        CostStage::Structural,
        CostStage::Filter,
        CostStage::ExpensiveLlm,
        CostStage::Validate,
        CostStage::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CostStage::KnowledgeParser => "knowledge_parser",
            CostStage::Structural => "structural",
            CostStage::Filter => "filter",
            CostStage::ExpensiveLlm => "expensive_llm",
            CostStage::Validate => "validate",
            CostStage::Embedding => "embedding",
        }
    }
}

impl fmt::Display for CostStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    KnowledgeParser,
    Structural,
    Select,
    Filter,
    Generate,
    Validate,
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackEvent {
    ContextFallback,
    RankingFallback,
    StructuralNoMatch,
    FilterAllDiscard,
}

impl FallbackEvent {
    pub const ALL: [FallbackEvent; 4] = [
        FallbackEvent::ContextFallback,
        FallbackEvent::RankingFallback,
        FallbackEvent::StructuralNoMatch,
        FallbackEvent::FilterAllDiscard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FallbackEvent::ContextFallback => "context_fallback",
            FallbackEvent::RankingFallback => "ranking_fallback",
            FallbackEvent::StructuralNoMatch => "structural_no_match",
            FallbackEvent::FilterAllDiscard => "filter_all_discard",
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Stage {
        stage: PipelineStage,
        detail: String,
    },
    Call {
        stage: CostStage,
        usage: TokenUsage,
        #[serde(default, skip_serializing_if = "is_false")]
        failed: bool,
    },
    Fallback {
        event: FallbackEvent,
        evidence: String,
    },
    Note {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub pass: u32,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Default)]
struct State {
    entries: Vec<TraceEntry>,
    pass: u32,
}

/// Append-only recorder shared by one query's stages.
pub struct Trace {
    state: Mutex<State>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(State {
                entries: Vec::new(),
                pass: 1,
            }),
        }
    }

    pub fn set_pass(&self, pass: u32) {
        self.state.lock().expect("trace poisoned").pass = pass;
    }

    pub fn pass(&self) -> u32 {
        self.state.lock().expect("trace poisoned").pass
    }

    pub fn record(&self, event: TraceEvent) {
        let mut state = self.state.lock().expect("trace poisoned");
        let seq = state.entries.len() as u64;
        let pass = state.pass;
        state.entries.push(TraceEntry { seq, pass, event });
    }

    pub fn stage(&self, stage: PipelineStage, detail: impl Into<String>) {
        self.record(TraceEvent::Stage {
            stage,
            detail: detail.into(),
        });
    }

    pub fn call(&self, stage: CostStage, usage: TokenUsage) {
        self.record(TraceEvent::Call {
            stage,
            usage,
            failed: false,
        });
    }

    /// A call that produced no usage; recorded with zero tokens.
    pub fn failed_call(&self, stage: CostStage, model_id: &str) {
        self.record(TraceEvent::Call {
            stage,
            usage: TokenUsage::new(model_id, 0, 0),
            failed: true,
        });
    }

    pub fn fallback(&self, event: FallbackEvent, evidence: impl Into<String>) {
        self.record(TraceEvent::Fallback {
            event,
            evidence: evidence.into(),
        });
    }

    pub fn note(&self, message: impl Into<String>) {
        self.record(TraceEvent::Note {
            message: message.into(),
        });
    }

    pub fn entries(&self) -> Vec<TraceEntry> {
        self.state.lock().expect("trace poisoned").entries.clone()
    }

    pub fn into_entries(self) -> Vec<TraceEntry> {
        self.state.into_inner().expect("trace poisoned").entries
    }
}

/// The token ledger view of a trace: every recorded call, in order.
pub fn ledger(entries: &[TraceEntry]) -> impl Iterator<Item = (CostStage, &TokenUsage)> + '_ {
    entries.iter().filter_map(|e| match &e.event {
        TraceEvent::Call { stage, usage, .. } => Some((*stage, usage)),
        _ => None,
    })
}

/// Stages entered, in order, for one pass.
pub fn stage_sequence(entries: &[TraceEntry], pass: u32) -> Vec<PipelineStage> {
    entries
        .iter()
        .filter(|e| e.pass == pass)
        .filter_map(|e| match e.event {
            TraceEvent::Stage { stage, .. } => Some(stage),
            _ => None,
        })
        .collect()
}
