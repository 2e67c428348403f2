//! Batch evaluation over a queries file.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cost::{compute_cost, CostReport};
use super::metrics::{mrr_at_k, AnswerType, EvalRecord, MetricError};
use crate::directives::{parse_prompt, DirectiveSet};
use crate::pipeline::{Engine, PipelineConfig, Plan, QueryRequest, QueryResult};
use crate::trace::{ledger, CostStage, FallbackEvent, Trace};

pub const EVAL_REPORT_SCHEMA: &str = "focusqa.eval_report/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswer {
    Number(f64),
    Text(String),
}

impl fmt::Display for GoldAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldAnswer::Number(n) => write!(f, "{n}"),
            GoldAnswer::Text(t) => f.write_str(t),
        }
    }
}

/// One entry of a queries file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_id: String,
    pub doc_id: String,
    pub question: String,
    #[serde(default)]
    pub domain_knowledge: String,
    pub gold: GoldAnswer,
    pub answer_type: AnswerType,
    /// Precompiled directives; skips extraction for this query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directives: Option<DirectiveSet>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid queries file: {0}")]
    Queries(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub fn load_queries(text: &str) -> Result<Vec<QuerySpec>, EvalError> {
    let queries: Vec<QuerySpec> =
        serde_json::from_str(text).map_err(|e| EvalError::Queries(e.to_string()))?;
    for (i, q) in queries.iter().enumerate() {
        if q.gold.to_string().trim().is_empty() {
            return Err(EvalError::Queries(format!(
                "query {i} (`{}`): gold answer is empty",
                q.query_id
            )));
        }
        if q.question.trim().is_empty() {
            return Err(EvalError::Queries(format!(
                "query {i} (`{}`): question is empty",
                q.query_id
            )));
        }
    }
    Ok(queries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub config: PipelineConfig,
    /// Queries in flight at once.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            config: PipelineConfig::default(),
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub gold: String,
    pub answers: Vec<String>,
    /// Rank of the first correct answer within the top 5.
    pub gold_rank: Option<usize>,
    pub dollars: f64,
    pub expensive_input_tokens: u64,
    pub fallback_events: Vec<FallbackEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub queries: usize,
    pub errors: usize,
    pub mrr_at_1: f64,
    pub mrr_at_3: f64,
    pub mrr_at_5: f64,
    pub mean_cost_per_query: f64,
    pub mean_expensive_cost_per_query: f64,
    pub fallback_counts: BTreeMap<FallbackEvent, usize>,
    pub stage_shares: BTreeMap<CostStage, f64>,
    pub cost: CostReport,
    pub outcomes: Vec<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub plan: String,
    pub rows: Vec<ReportRow>,
    /// Cost of compiling directives once per query (ablation runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive_extraction: Option<CostReport>,
}

impl EvalReport {
    pub fn errored(&self) -> usize {
        self.rows.iter().map(|r| r.errors).sum()
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }
}

/// Operator subsets compared by an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationRow {
    NoDk,
    Structural,
    Filter,
    Validate,
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::NoDk,
        AblationRow::Structural,
        AblationRow::Filter,
        AblationRow::Validate,
        AblationRow::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::NoDk => "no-DK",
            AblationRow::Structural => "+structural",
            AblationRow::Filter => "+filter",
            AblationRow::Validate => "+validate",
            AblationRow::Full => "full",
        }
    }

    /// `(structural, filter, validate)`.
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            AblationRow::NoDk => (false, false, false),
            AblationRow::Structural => (true, false, false),
            AblationRow::Filter => (false, true, false),
            AblationRow::Validate => (false, false, true),
            AblationRow::Full => (true, true, true),
        }
    }
}

fn outcome(spec: &QuerySpec, result: Result<QueryResult, String>) -> QueryOutcome {
    let gold = spec.gold.to_string();
    match result {
        Ok(r) => {
            let answers: Vec<String> = r.ranked_answers.iter().map(|a| a.text.clone()).collect();
            let record = EvalRecord {
                query_id: spec.query_id.clone(),
                gold_answer: gold.clone(),
                answer_type: spec.answer_type,
                answers: answers.clone(),
                error: None,
            };
            QueryOutcome {
                query_id: spec.query_id.clone(),
                gold,
                gold_rank: record.gold_rank(5),
                answers,
                dollars: r.cost.dollars_total,
                expensive_input_tokens: r.cost.stage_tokens(CostStage::ExpensiveLlm).input_tokens,
                fallback_events: r.fallback_events.clone(),
                error: None,
            }
        }
        Err(e) => QueryOutcome {
            query_id: spec.query_id.clone(),
            gold,
            answers: Vec::new(),
            gold_rank: None,
            dollars: 0.0,
            expensive_input_tokens: 0,
            fallback_events: Vec::new(),
            error: Some(e),
        },
    }
}

fn build_row(
    name: &str,
    specs: &[QuerySpec],
    results: Vec<Result<QueryResult, String>>,
) -> Result<ReportRow, EvalError> {
    let mut cost = CostReport::default();
    let mut fallback_counts: BTreeMap<FallbackEvent, usize> =
        FallbackEvent::ALL.into_iter().map(|e| (e, 0)).collect();
    let mut records = Vec::with_capacity(specs.len());
    let mut outcomes = Vec::with_capacity(specs.len());
    for (spec, result) in specs.iter().zip(results) {
        if let Ok(r) = &result {
            cost.accumulate(&r.cost);
            for e in &r.fallback_events {
                *fallback_counts.entry(*e).or_default() += 1;
            }
        }
        let o = outcome(spec, result);
        records.push(EvalRecord {
            query_id: o.query_id.clone(),
            gold_answer: o.gold.clone(),
            answer_type: spec.answer_type,
            answers: o.answers.clone(),
            error: o.error.clone(),
        });
        outcomes.push(o);
    }
    let n = specs.len() as f64;
    Ok(ReportRow {
        name: name.to_string(),
        queries: specs.len(),
        errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
        mrr_at_1: mrr_at_k(&records, 1)?,
        mrr_at_3: mrr_at_k(&records, 3)?,
        mrr_at_5: mrr_at_k(&records, 5)?,
        mean_cost_per_query: cost.dollars_total / n,
        mean_expensive_cost_per_query: cost.stage_dollars(CostStage::ExpensiveLlm) / n,
        fallback_counts,
        stage_shares: cost.stage_shares(),
        cost,
        outcomes,
    })
}

fn request_for(
    spec: &QuerySpec,
    config: &PipelineConfig,
    directives: Option<DirectiveSet>,
) -> QueryRequest {
    QueryRequest {
        question: spec.question.clone(),
        domain_knowledge: spec.domain_knowledge.clone(),
        doc_id: spec.doc_id.clone(),
        config: config.clone(),
        directives,
    }
}

/// Runs one plan over every query with bounded parallelism. Per-query
/// failures are recorded and count as reciprocal rank 0.
pub async fn run_eval(
    engine: &Engine,
    queries: &[QuerySpec],
    plan: Plan,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if queries.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let results: Vec<Result<QueryResult, String>> = stream::iter(queries)
        .map(|spec| async move {
            let request = request_for(spec, &options.config, spec.directives.clone());
            engine
                .run_plan(&request, plan)
                .await
                .map_err(|e| e.to_string())
        })
        .buffered(options.parallelism.max(1))
        .collect()
        .await;
    Ok(EvalReport {
        schema: EVAL_REPORT_SCHEMA.into(),
        plan: plan.to_string(),
        rows: vec![build_row(plan.as_str(), queries, results)?],
        directive_extraction: None,
    })
}

/// Compiles each query's directives once, then runs every operator subset
/// with those directives. Extraction cost is reported on its own so rows
/// differ only by the operators they enable.
pub async fn run_ablation(
    engine: &Engine,
    queries: &[QuerySpec],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if queries.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let extracted: Vec<(Result<DirectiveSet, String>, Option<CostReport>)> = stream::iter(queries)
        .map(|spec| async move {
            if let Some(d) = &spec.directives {
                return (Ok(d.clone()), None);
            }
            let trace = Trace::new();
            let parsed = parse_prompt(&spec.domain_knowledge, engine.router(), &trace).await;
            let entries = trace.into_entries();
            let cost = compute_cost(ledger(&entries), engine.prices());
            match (parsed, cost) {
                (Ok(x), Ok(c)) => (Ok(x.directives), Some(c)),
                (Err(e), c) => (Err(format!("directive extraction failed: {e}")), c.ok()),
                (Ok(_), Err(e)) => (Err(e.to_string()), None),
            }
        })
        .buffered(options.parallelism.max(1))
        .collect()
        .await;

    let mut extraction_cost = CostReport::default();
    for (_, c) in &extracted {
        if let Some(c) = c {
            extraction_cost.accumulate(c);
        }
    }

    let mut rows = Vec::with_capacity(AblationRow::ALL.len());
    for row in AblationRow::ALL {
        let (s, f, v) = row.toggles();
        let config = options.config.clone().with_operators(s, f, v);
        let results: Vec<Result<QueryResult, String>> =
            stream::iter(queries.iter().zip(&extracted))
                .map(|(spec, (directives, _))| {
                    let config = &config;
                    async move {
                        let directives = directives.clone()?;
                        let request = request_for(spec, config, Some(directives));
                        engine
                            .execute_query(&request)
                            .await
                            .map_err(|e| e.to_string())
                    }
                })
                .buffered(options.parallelism.max(1))
                .collect()
                .await;
        rows.push(build_row(row.name(), queries, results)?);
    }

    Ok(EvalReport {
        schema: EVAL_REPORT_SCHEMA.into(),
        plan: "ablation".into(),
        rows,
        directive_extraction: Some(extraction_cost),
    })
}

/// Human-readable summary of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>7} {:>7} {:>12} {:>12} {:>7} {:>9}",
        "row", "MRR@1", "MRR@3", "MRR@5", "$/query", "LLM $/query", "errors", "fallbacks"
    );
    for row in &report.rows {
        let fallbacks: usize = row.fallback_counts.values().sum();
        let _ = writeln!(
            out,
            "{:<12} {:>7.3} {:>7.3} {:>7.3} {:>12.6} {:>12.6} {:>7} {:>9}",
            row.name,
            row.mrr_at_1,
            row.mrr_at_3,
            row.mrr_at_5,
            row.mean_cost_per_query,
            row.mean_expensive_cost_per_query,
            row.errors,
            fallbacks
        );
    }
    if let Some(extraction) = &report.directive_extraction {
        let n = report.rows.first().map_or(1, |r| r.queries.max(1)) as f64;
        let _ = writeln!(
            out,
            "directive extraction: {:.6} $/query (not included above)",
            extraction.dollars_total / n
        );
    }
    for row in &report.rows {
        let shares = row
            .stage_shares
            .iter()
            .filter(|(_, s)| **s > 0.0)
            .map(|(stage, s)| format!("{stage} {:.2}%", s * 100.0))
            .collect::<Vec<_>>()
            .join(", ");
        let events = row
            .fallback_counts
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(e, n)| format!("{} {n}", e.as_str()))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = write!(out, "{}: cost shares [{}]", row.name, shares);
        if !events.is_empty() {
            let _ = write!(out, "; fallbacks [{events}]");
        }
        out.push('\n');
    }
    out
}
