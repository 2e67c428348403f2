//! End-to-end query execution with fallback handling.
//!
//! A query runs: directive parsing, structural pruning, context selection,
//! filtering, per-chunk generation, then validation ranking. If every
//! response refuses after a narrowing operator changed the context, the
//! query is re-executed once on the full document with pruning and filtering
//! disabled. If validation scores do not discriminate, ranking falls back to
//! model confidence.

mod detect;
mod generate;
mod plans;
mod select;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ModelRouter};
use crate::chunking::chunk_document;
use crate::directives::{parse_prompt, DirectiveSet};
use crate::document::{DocumentError, PrunedDocument, StructuredDocument};
use crate::evaluation::cost::{compute_cost, CostError, CostReport, PriceTable};
use crate::operators::{
    filter_chunks, rank_by_confidence, rank_by_validation, structural_prune, CandidateResponse,
    ValidationScorer,
};
use crate::store::{DocumentSource, StoreError};
use crate::trace::{ledger, FallbackEvent, PipelineStage, Trace, TraceEntry, TraceEvent};

pub use detect::{
    detect_context_loss, detect_nondiscriminative_validation, population_variance, FallbackSignal,
    SignalKind,
};
pub use generate::{answer_prompt, generate_responses, GenerateOutcome, ANSWER_TEMPLATE_VERSION};
pub use select::select_context;

pub const QUERY_RESULT_SCHEMA: &str = "focusqa.query_result/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub chunk_budget: usize,
    pub match_threshold: f64,
    pub variance_epsilon: f64,
    pub answer_k: usize,
    pub structural: bool,
    pub filter: bool,
    pub validate: bool,
    /// Token limit for the single-call vanilla plan.
    pub context_limit: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            chunk_budget: 4000,
            match_threshold: crate::operators::DEFAULT_MATCH_THRESHOLD,
            variance_epsilon: 1e-4,
            answer_k: 5,
            structural: true,
            filter: true,
            validate: true,
            context_limit: 200_000,
        }
    }
}

impl PipelineConfig {
    pub fn with_operators(mut self, structural: bool, filter: bool, validate: bool) -> Self {
        self.structural = structural;
        self.filter = filter;
        self.validate = validate;
        self
    }

    pub fn any_operator(&self) -> bool {
        self.structural || self.filter || self.validate
    }

    fn check(&self) -> Result<(), PipelineError> {
        let bad = |what: &str| {
            Err(PipelineError::InvalidRequest(format!(
                "{what} must be positive"
            )))
        };
        if self.top_k == 0 {
            return bad("top_k");
        }
        if self.answer_k == 0 {
            return bad("answer_k");
        }
        if self.chunk_budget == 0 {
            return bad("chunk_budget");
        }
        if self.context_limit == 0 {
            return bad("context_limit");
        }
        if !self.match_threshold.is_finite() {
            return Err(PipelineError::InvalidRequest(
                "match_threshold must be finite".into(),
            ));
        }
        if self.variance_epsilon.is_nan() || self.variance_epsilon < 0.0 {
            return Err(PipelineError::InvalidRequest(
                "variance_epsilon must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plan {
    /// All operators, driven by the request's domain knowledge.
    Full,
    /// Select, generate and confidence ranking only.
    NoDk,
    /// The whole (truncated) document in one call.
    Vanilla,
    /// Top-k chunks concatenated into one call.
    Rag,
}

impl Plan {
    pub const ALL: [Plan; 4] = [Plan::Full, Plan::NoDk, Plan::Vanilla, Plan::Rag];

    pub fn as_str(self) -> &'static str {
        match self {
            Plan::Full => "full",
            Plan::NoDk => "no-dk",
            Plan::Vanilla => "vanilla",
            Plan::Rag => "rag",
        }
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Plan::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown plan `{s}` (expected full, no-dk, vanilla or rag)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub domain_knowledge: String,
    pub doc_id: String,
    #[serde(default)]
    pub config: PipelineConfig,
    /// Already-compiled directives; when set, `domain_knowledge` is not parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directives: Option<DirectiveSet>,
}

impl QueryRequest {
    pub fn new(doc_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            domain_knowledge: String::new(),
            doc_id: doc_id.into(),
            config: PipelineConfig::default(),
            directives: None,
        }
    }

    pub fn with_knowledge(mut self, knowledge: impl Into<String>) -> Self {
        self.domain_knowledge = knowledge.into();
        self
    }

    pub fn with_directives(mut self, directives: DirectiveSet) -> Self {
        self.directives = Some(directives);
        self
    }

    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = config;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub schema: String,
    pub plan: Plan,
    pub question: String,
    pub doc_id: String,
    pub directives: DirectiveSet,
    pub ranked_answers: Vec<CandidateResponse>,
    /// Final-pass responses in chunk order.
    pub candidates: Vec<CandidateResponse>,
    pub fallback_events: Vec<FallbackEvent>,
    pub cost: CostReport,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl QueryResult {
    pub fn top_answer(&self) -> Option<&CandidateResponse> {
        self.ranked_answers.first()
    }

    pub fn passes(&self) -> u32 {
        self.trace.iter().map(|e| e.pass).max().unwrap_or(1)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("backend failure: {source}")]
    Backend {
        source: BackendError,
        /// Everything recorded before the failure.
        trace: Vec<TraceEntry>,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl PipelineError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, PipelineError::Store(StoreError::NotFound(_)))
    }
}

/// Executes queries against stored documents with one set of model roles.
#[derive(Clone)]
pub struct Engine {
    documents: Arc<dyn DocumentSource>,
    router: Arc<ModelRouter>,
    prices: PriceTable,
}

/// What one pass over the document produced.
struct PassOutcome {
    candidates: Vec<CandidateResponse>,
    /// Pruning removed elements or filtering removed chunks.
    narrowed: bool,
}

impl Engine {
    pub fn new(
        documents: Arc<dyn DocumentSource>,
        router: Arc<ModelRouter>,
        prices: PriceTable,
    ) -> Self {
        Self {
            documents,
            router,
            prices,
        }
    }

    pub fn router(&self) -> &ModelRouter {
        &self.router
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn document(&self, doc_id: &str) -> Result<Arc<StructuredDocument>, PipelineError> {
        Ok(self.documents.get(doc_id)?)
    }

    /// Runs the full directive-driven pipeline, honouring the request's
    /// operator toggles.
    pub async fn execute_query(
        &self,
        request: &QueryRequest,
    ) -> Result<QueryResult, PipelineError> {
        self.run_plan(request, Plan::Full).await
    }

    pub async fn run_plan(
        &self,
        request: &QueryRequest,
        plan: Plan,
    ) -> Result<QueryResult, PipelineError> {
        if request.question.trim().is_empty() {
            return Err(PipelineError::InvalidRequest(
                "question must not be empty".into(),
            ));
        }
        request.config.check()?;
        let doc = self.document(&request.doc_id)?;
        let trace = Trace::new();
        let mut diagnostics = Vec::new();

        let (directives, ranked, candidates) = match plan {
            Plan::Full => {
                let directives = self
                    .directives_for(request, &trace, &mut diagnostics)
                    .await?;
                let (ranked, candidates) = self
                    .run_directed(&doc, request, &directives, &request.config, &trace)
                    .await?;
                (directives, ranked, candidates)
            }
            Plan::NoDk => {
                let config = request.config.clone().with_operators(false, false, false);
                let directives = DirectiveSet::default();
                let (ranked, candidates) = self
                    .run_directed(&doc, request, &directives, &config, &trace)
                    .await?;
                (directives, ranked, candidates)
            }
            Plan::Vanilla => {
                let candidates = plans::vanilla(&doc, request, &self.router, &trace).await?;
                trace.stage(PipelineStage::Rank, "confidence");
                (
                    DirectiveSet::default(),
                    rank_by_confidence(&candidates, request.config.answer_k),
                    candidates,
                )
            }
            Plan::Rag => {
                let candidates = plans::rag(&doc, request, &self.router, &trace).await?;
                trace.stage(PipelineStage::Rank, "confidence");
                (
                    DirectiveSet::default(),
                    rank_by_confidence(&candidates, request.config.answer_k),
                    candidates,
                )
            }
        };

        let entries = trace.into_entries();
        let cost = compute_cost(ledger(&entries), &self.prices)?;
        let fallback_events = entries
            .iter()
            .filter_map(|e| match e.event {
                TraceEvent::Fallback { event, .. } => Some(event),
                _ => None,
            })
            .collect();
        Ok(QueryResult {
            schema: QUERY_RESULT_SCHEMA.into(),
            plan,
            question: request.question.clone(),
            doc_id: request.doc_id.clone(),
            directives,
            ranked_answers: ranked,
            candidates,
            fallback_events,
            cost,
            trace: entries,
            diagnostics,
        })
    }

    async fn directives_for(
        &self,
        request: &QueryRequest,
        trace: &Trace,
        diagnostics: &mut Vec<String>,
    ) -> Result<DirectiveSet, PipelineError> {
        if let Some(d) = &request.directives {
            if request.config.any_operator() {
                trace.stage(PipelineStage::KnowledgeParser, "precompiled directives");
            }
            return Ok(d.clone());
        }
        if !request.config.any_operator() || request.domain_knowledge.trim().is_empty() {
            return Ok(DirectiveSet::default());
        }
        trace.stage(PipelineStage::KnowledgeParser, "extracting directives");
        match parse_prompt(&request.domain_knowledge, &self.router, trace).await {
            Ok(extraction) => {
                diagnostics.extend(extraction.diagnostics);
                Ok(extraction.directives)
            }
            Err(source) => Err(PipelineError::Backend {
                source,
                trace: trace.entries(),
            }),
        }
    }

    async fn run_directed(
        &self,
        doc: &StructuredDocument,
        request: &QueryRequest,
        directives: &DirectiveSet,
        config: &PipelineConfig,
        trace: &Trace,
    ) -> Result<(Vec<CandidateResponse>, Vec<CandidateResponse>), PipelineError> {
        let mut outcome = self
            .run_pass(doc, request, directives, config, trace)
            .await?;

        if let Some(signal) = detect_context_loss(&outcome.candidates) {
            if outcome.narrowed {
                trace.fallback(FallbackEvent::ContextFallback, signal.evidence);
                trace.set_pass(2);
                let widened = config.clone().with_operators(false, false, config.validate);
                outcome = self
                    .run_pass(doc, request, directives, &widened, trace)
                    .await?;
            } else {
                trace.note(format!(
                    "{}; context was not narrowed, so re-execution would repeat the same calls",
                    signal.evidence
                ));
            }
        }

        let mut candidates = outcome.candidates;
        let positives_or_negatives = !directives.validations.is_empty();
        let answering: Vec<usize> = (0..candidates.len())
            .filter(|&i| !candidates[i].is_refusal)
            .collect();

        if !(config.validate && positives_or_negatives) || answering.is_empty() {
            trace.stage(PipelineStage::Rank, "confidence");
            return Ok((rank_by_confidence(&candidates, config.answer_k), candidates));
        }

        trace.stage(
            PipelineStage::Validate,
            format!(
                "{} responses, {} directives",
                answering.len(),
                directives.validations.len()
            ),
        );
        let scored = match ValidationScorer::new(&directives.validations, &self.router, trace).await
        {
            Ok(scorer) => {
                let inputs: Vec<(String, &str)> = answering
                    .iter()
                    .map(|&i| {
                        (
                            candidates[i].response_id.clone(),
                            candidates[i].text.as_str(),
                        )
                    })
                    .collect();
                scorer.score_all(&inputs).await
            }
            Err(e) => Err(e),
        };
        let scores = match scored {
            Ok(scores) => scores,
            Err(e) => {
                trace.fallback(
                    FallbackEvent::RankingFallback,
                    format!("validation unavailable: {e}"),
                );
                trace.stage(PipelineStage::Rank, "confidence");
                return Ok((rank_by_confidence(&candidates, config.answer_k), candidates));
            }
        };
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        for (&i, score) in answering.iter().zip(scores) {
            candidates[i].validation = Some(score);
        }

        let ranked =
            match detect_nondiscriminative_validation(&values, config.variance_epsilon, true) {
                Some(signal) => {
                    trace.fallback(FallbackEvent::RankingFallback, signal.evidence);
                    trace.stage(PipelineStage::Rank, "confidence");
                    rank_by_confidence(&candidates, config.answer_k)
                }
                None => {
                    trace.stage(PipelineStage::Rank, "validation");
                    rank_by_validation(&candidates, config.answer_k)
                }
            };
        Ok((ranked, candidates))
    }

    async fn run_pass(
        &self,
        doc: &StructuredDocument,
        request: &QueryRequest,
        directives: &DirectiveSet,
        config: &PipelineConfig,
        trace: &Trace,
    ) -> Result<PassOutcome, PipelineError> {
        let router = self.router.as_ref();
        let mut narrowed = false;

        let view = if config.structural && !directives.structural.is_empty() {
            trace.stage(
                PipelineStage::Structural,
                format!(
                    "{} directives over {} elements",
                    directives.structural.len(),
                    doc.elements.len()
                ),
            );
            let out = structural_prune(
                doc,
                &directives.structural,
                config.match_threshold,
                router,
                trace,
            )
            .await;
            if out.no_match {
                trace.fallback(
                    FallbackEvent::StructuralNoMatch,
                    "no element matched any structural directive",
                );
            }
            narrowed |= out.pruned.len() < doc.elements.len();
            out.pruned
        } else {
            PrunedDocument::full(doc)
        };

        let chunks = chunk_document(doc, &view, config.chunk_budget)?;
        trace.stage(
            PipelineStage::Select,
            format!(
                "{} chunks from {} elements, top_k {}",
                chunks.len(),
                view.len(),
                config.top_k
            ),
        );
        let selected = select_context(chunks, &request.question, config.top_k, router, trace)
            .await
            .map_err(|source| PipelineError::Backend {
                source,
                trace: trace.entries(),
            })?;

        let selected = if config.filter && !directives.filters.is_empty() && !selected.is_empty() {
            trace.stage(
                PipelineStage::Filter,
                format!(
                    "{} chunks, {} rules",
                    selected.len(),
                    directives.filters.len()
                ),
            );
            let out = filter_chunks(
                &selected,
                &directives.filters,
                &request.question,
                router,
                trace,
            )
            .await;
            if out.all_discard_guard {
                trace.fallback(
                    FallbackEvent::FilterAllDiscard,
                    format!(
                        "all {} chunks judged discardable; keeping all",
                        selected.len()
                    ),
                );
            }
            narrowed |= out.kept.len() < selected.len();
            out.kept
        } else {
            selected
        };

        trace.stage(
            PipelineStage::Generate,
            format!("{} chunks", selected.len()),
        );
        let generated = generate_responses(&selected, &request.question, router, trace).await;
        if generated.total_outage() {
            let source = generated
                .errors
                .into_iter()
                .next()
                .expect("outage implies errors");
            return Err(PipelineError::Backend {
                source,
                trace: trace.entries(),
            });
        }
        Ok(PassOutcome {
            candidates: generated.candidates,
            narrowed,
        })
    }
}
