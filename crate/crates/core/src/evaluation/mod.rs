//! Metrics, cost accounting and the batch evaluation harness.

pub mod cost;
mod harness;
pub mod metrics;

pub use cost::{compute_cost, CostError, CostReport, ModelPrice, PriceTable, TokenTotals};
pub use harness::{
    load_queries, render_table, run_ablation, run_eval, AblationRow, EvalOptions, EvalReport,
    GoldAnswer, QueryOutcome, QuerySpec, ReportRow, EVAL_REPORT_SCHEMA,
};
pub use metrics::{
    answer_matches, exact_match, extract_last_number, extract_option_letter, mrr_at_k,
    numeric_match, AnswerType, EvalRecord, MetricError, DEFAULT_TOLERANCE,
};
