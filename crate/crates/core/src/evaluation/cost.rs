//! Dollar cost accounting over a trace's token ledger.
//!
//! Token counts are aggregated as integers per (stage, model) before any
//! price is applied, so a report does not depend on ledger order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::TokenUsage;
use crate::trace::CostStage;

/// Dollars per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input: f64,
    pub output: f64,
}

impl ModelPrice {
    pub fn new(input: f64, output: f64) -> Self {
        Self { input, output }
    }

    pub fn dollars(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        (input_tokens as f64 * self.input + output_tokens as f64 * self.output) / 1_000_000.0
    }
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("no price for model(s): {}", .0.join(", "))]
    UnknownModels(Vec<String>),
    #[error("negative price for model `{0}`")]
    NegativePrice(String),
    #[error("cannot parse price table: {0}")]
    Parse(String),
    #[error("cannot read price table: {0}")]
    Io(#[from] std::io::Error),
}

/// Prices keyed by model id. Loads from TOML (`[model] input = .. output = ..`)
/// or the equivalent JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn insert(&mut self, model_id: impl Into<String>, price: ModelPrice) {
        self.0.insert(model_id.into(), price);
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelPrice> {
        self.0.get(model_id)
    }

    pub fn extend(&mut self, other: &PriceTable) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        match self
            .0
            .iter()
            .find(|(_, p)| !(p.input >= 0.0 && p.output >= 0.0))
        {
            Some((model, _)) => Err(CostError::NegativePrice(model.clone())),
            None => Ok(()),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CostError> {
        let table: PriceTable = toml::from_str(s).map_err(|e| CostError::Parse(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn from_json_str(s: &str) -> Result<Self, CostError> {
        let table: PriceTable =
            serde_json::from_str(s).map_err(|e| CostError::Parse(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    /// Chooses the format by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenTotals {
    fn add(&mut self, usage: &TokenUsage) {
        self.calls += 1;
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
    }

    fn merge(&mut self, other: &TokenTotals) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub tokens_by_stage: BTreeMap<CostStage, TokenTotals>,
    pub tokens_by_model: BTreeMap<String, TokenTotals>,
    pub dollars_by_stage: BTreeMap<CostStage, f64>,
    pub dollars_total: f64,
}

impl CostReport {
    pub fn stage_tokens(&self, stage: CostStage) -> TokenTotals {
        self.tokens_by_stage
            .get(&stage)
            .copied()
            .unwrap_or_default()
    }

    pub fn stage_dollars(&self, stage: CostStage) -> f64 {
        self.dollars_by_stage.get(&stage).copied().unwrap_or(0.0)
    }

    /// Sums another report into this one (used for per-run aggregates).
    pub fn accumulate(&mut self, other: &CostReport) {
        for (stage, totals) in &other.tokens_by_stage {
            self.tokens_by_stage
                .entry(*stage)
                .or_default()
                .merge(totals);
        }
        for (model, totals) in &other.tokens_by_model {
            self.tokens_by_model
                .entry(model.clone())
                .or_default()
                .merge(totals);
        }
        for stage in CostStage::ALL {
            *self.dollars_by_stage.entry(stage).or_insert(0.0) += other.stage_dollars(stage);
        }
        self.dollars_total = self.dollars_by_stage.values().sum();
    }

    /// Fraction of the total spent in each stage (zeros when nothing was spent).
    pub fn stage_shares(&self) -> BTreeMap<CostStage, f64> {
        CostStage::ALL
            .into_iter()
            .map(|s| {
                let share = if self.dollars_total > 0.0 {
                    self.stage_dollars(s) / self.dollars_total
                } else {
                    0.0
                };
                (s, share)
            })
            .collect()
    }
}

/// Prices a token ledger. Every model id must appear in `prices`.
pub fn compute_cost<'a, I>(ledger: I, prices: &PriceTable) -> Result<CostReport, CostError>
where
    I: IntoIterator<Item = (CostStage, &'a TokenUsage)>,
{
    let mut by_stage_model: BTreeMap<(CostStage, &str), TokenTotals> = BTreeMap::new();
    let mut report = CostReport::default();
    for (stage, usage) in ledger {
        by_stage_model
            .entry((stage, usage.model_id.as_str()))
            .or_default()
            .add(usage);
        report.tokens_by_stage.entry(stage).or_default().add(usage);
        report
            .tokens_by_model
            .entry(usage.model_id.clone())
            .or_default()
            .add(usage);
    }

    let unknown: Vec<String> = report
        .tokens_by_model
        .keys()
        .filter(|m| prices.get(m).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(CostError::UnknownModels(unknown));
    }

    for stage in CostStage::ALL {
        report.dollars_by_stage.insert(stage, 0.0);
    }
    for ((stage, model), totals) in &by_stage_model {
        let price = prices.get(model).expect("checked above");
        *report
            .dollars_by_stage
            .get_mut(stage)
            .expect("all stages seeded") +=
            price.dollars(totals.input_tokens, totals.output_tokens);
    }
    report.dollars_total = report.dollars_by_stage.values().sum();
    Ok(report)
}
