//! Scripted, fully deterministic backends.
//!
//! A [`Script`] is an ordered list of prompt patterns and canned replies.
//! The first rule whose pattern matches the prompt answers it; otherwise the
//! script's default applies. Scripts load from JSON:
//!
//! ```json
//! {
//!   "model_id": "mock-llm",
//!   "rules": [
//!     {"contains": ["EPS table", "diluted"], "reply": "$1.97", "logprobs": [-0.1, -0.2]},
//!     {"contains": "Table of Contents", "reply": "DISCARD"},
//!     {"regex": "(?i)weather", "refuse": true},
//!     {"contains": "flaky", "error": "transport"}
//!   ],
//!   "default": {"refuse": true}
//! }
//! ```
//!
//! A [`Scenario`] bundles scripts for the expensive and filter roles with the
//! hash embedder and an optional price table.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Completion, CompletionBackend, HashEmbedder, ModelRouter, TokenUsage,
    HASH_EMBEDDER_DIMENSION,
};
use crate::document::count_tokens;
use crate::evaluation::cost::{ModelPrice, PriceTable};

pub const DEFAULT_REFUSAL_TEXT: &str = "answer not in context";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn iter(&self) -> impl Iterator<Item = &str> {
        let slice: &[String] = match self {
            OneOrMany::One(s) => std::slice::from_ref(s),
            OneOrMany::Many(v) => v,
        };
        slice.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transport,
    Timeout,
    ContextLength,
    ServerError,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refuse: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

impl ScriptReply {
    pub fn text(reply: impl Into<String>) -> Self {
        Self {
            reply: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn refusal() -> Self {
        Self {
            refuse: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Every listed substring must occur in the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<OneOrMany>,
    /// None of the listed substrings may occur in the prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_contains: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    #[serde(flatten)]
    pub then: ScriptReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub model_id: String,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ScriptReply>,
    /// Simulated per-call latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl Script {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            rules: Vec::new(),
            default: None,
            latency_ms: None,
        }
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn rule(self, contains: impl Into<String>, reply: impl Into<String>) -> Self {
        self.with_rule(ScriptRule {
            contains: Some(OneOrMany::One(contains.into())),
            then: ScriptReply::text(reply),
            ..ScriptRule::default()
        })
    }

    pub fn rule_with_logprobs(
        self,
        contains: impl Into<String>,
        reply: impl Into<String>,
        logprobs: Vec<f64>,
    ) -> Self {
        self.with_rule(ScriptRule {
            contains: Some(OneOrMany::One(contains.into())),
            then: ScriptReply {
                logprobs: Some(logprobs),
                ..ScriptReply::text(reply)
            },
            ..ScriptRule::default()
        })
    }

    pub fn refuse(self, contains: impl Into<String>) -> Self {
        self.with_rule(ScriptRule {
            contains: Some(OneOrMany::One(contains.into())),
            then: ScriptReply::refusal(),
            ..ScriptRule::default()
        })
    }

    /// `kind` is one of `transport`, `timeout`, `context_length`, `server_error`.
    pub fn fail(self, contains: impl Into<String>, kind: &str) -> Self {
        let error: ScriptedFailure = serde_json::from_value(serde_json::Value::String(kind.into()))
            .expect("known failure kind");
        self.with_rule(ScriptRule {
            contains: Some(OneOrMany::One(contains.into())),
            then: ScriptReply {
                error: Some(error),
                ..ScriptReply::default()
            },
            ..ScriptRule::default()
        })
    }

    pub fn default_reply(mut self, reply: ScriptReply) -> Self {
        self.default = Some(reply);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency_ms = Some(latency.as_millis() as u64);
        self
    }
}

struct CompiledRule {
    rule: ScriptRule,
    regex: Option<Regex>,
}

impl CompiledRule {
    fn matches(&self, prompt: &str) -> bool {
        self.rule
            .contains
            .as_ref()
            .is_none_or(|c| c.iter().all(|s| prompt.contains(s)))
            && self
                .rule
                .not_contains
                .as_ref()
                .is_none_or(|c| c.iter().all(|s| !prompt.contains(s)))
            && self.regex.as_ref().is_none_or(|r| r.is_match(prompt))
    }
}

/// Completion backend answering from a [`Script`], instrumented with call
/// and concurrency counters.
pub struct ScriptedBackend {
    model_id: String,
    rules: Vec<CompiledRule>,
    default: ScriptReply,
    latency: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    /// Panics on an invalid regex; use [`ScriptedBackend::try_new`] for
    /// untrusted scripts.
    pub fn new(script: Script) -> Self {
        Self::try_new(script).expect("valid script")
    }

    pub fn try_new(script: Script) -> Result<Self, regex::Error> {
        let rules = script
            .rules
            .into_iter()
            .map(|rule| {
                let regex = rule.regex.as_deref().map(Regex::new).transpose()?;
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<_, regex::Error>>()?;
        Ok(Self {
            model_id: script.model_id,
            rules,
            default: script.default.unwrap_or_else(ScriptReply::refusal),
            latency: Duration::from_millis(script.latency_ms.unwrap_or(0)),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Every prompt received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }

    fn reply_for(&self, prompt: &str) -> &ScriptReply {
        self.rules
            .iter()
            .find(|r| r.matches(prompt))
            .map(|r| &r.rule.then)
            .unwrap_or(&self.default)
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push(prompt.to_string());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }

        let reply = self.reply_for(prompt);
        if let Some(failure) = reply.error {
            return Err(match failure {
                ScriptedFailure::Transport => {
                    BackendError::Transport("scripted transport failure".into())
                }
                ScriptedFailure::Timeout => BackendError::Timeout,
                ScriptedFailure::ContextLength => {
                    BackendError::ContextLength("scripted context limit".into())
                }
                ScriptedFailure::ServerError => BackendError::Http {
                    status: 500,
                    body: "scripted server error".into(),
                },
            });
        }
        let text = match (&reply.reply, reply.refuse) {
            (Some(text), _) => text.clone(),
            (None, true) => DEFAULT_REFUSAL_TEXT.to_string(),
            (None, false) => String::new(),
        };
        Ok(Completion {
            usage: TokenUsage::new(
                self.model_id.clone(),
                count_tokens(prompt) as u64,
                count_tokens(&text) as u64,
            ),
            logprobs: reply.logprobs.clone(),
            text,
        })
    }
}

/// Scripts for every role plus pricing, loadable from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub expensive: Script,
    /// Defaults to a classifier that answers KEEP to everything.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Script>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PriceTable>,
}

/// Backends built from a [`Scenario`], kept so tests can inspect counters.
pub struct ScenarioBackends {
    pub expensive: Arc<ScriptedBackend>,
    pub filter: Arc<ScriptedBackend>,
    pub embedder: Arc<HashEmbedder>,
}

impl ScenarioBackends {
    pub fn router(&self) -> ModelRouter {
        ModelRouter::new(
            self.expensive.clone(),
            self.filter.clone(),
            self.embedder.clone(),
        )
    }
}

impl Scenario {
    pub fn new(expensive: Script) -> Self {
        Self {
            expensive,
            filter: None,
            embedding_dimension: None,
            prices: None,
        }
    }

    pub fn with_filter(mut self, filter: Script) -> Self {
        self.filter = Some(filter);
        self
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn build(&self) -> Result<ScenarioBackends, regex::Error> {
        let filter = self
            .filter
            .clone()
            .unwrap_or_else(|| Script::new("mock-filter").default_reply(ScriptReply::text("KEEP")));
        Ok(ScenarioBackends {
            expensive: Arc::new(ScriptedBackend::try_new(self.expensive.clone())?),
            filter: Arc::new(ScriptedBackend::try_new(filter)?),
            embedder: Arc::new(HashEmbedder::new(
                self.embedding_dimension.unwrap_or(HASH_EMBEDDER_DIMENSION),
            )),
        })
    }

    /// The scenario's prices, or a default table covering its models:
    /// expensive $3/$15, filter $0.04/$0.04, embedder $0.02 per million.
    pub fn price_table(&self) -> PriceTable {
        if let Some(prices) = &self.prices {
            return prices.clone();
        }
        let mut table = PriceTable::default();
        table.insert(self.expensive.model_id.clone(), ModelPrice::new(3.0, 15.0));
        let filter_id = self
            .filter
            .as_ref()
            .map_or("mock-filter", |f| f.model_id.as_str());
        table.insert(filter_id.to_string(), ModelPrice::new(0.04, 0.04));
        let dim = self.embedding_dimension.unwrap_or(HASH_EMBEDDER_DIMENSION);
        table.insert(format!("hash-embedder-{dim}"), ModelPrice::new(0.02, 0.0));
        table
    }
}
