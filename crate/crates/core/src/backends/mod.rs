//! Model backends for the three roles: expensive generator, lightweight
//! filter classifier and embedder.
//!
//! Everything speaks through two small traits so the pipeline never knows
//! whether it is talking to an OpenAI-compatible server or a scripted mock.

mod embed;
pub mod mock;
pub mod openai;
mod refusal;
mod router;
pub mod rules;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine_sim, EmbeddingVector, HashEmbedder, HASH_EMBEDDER_DIMENSION};
pub use refusal::{confidence_of, detect_refusal, REFUSAL_PHRASES, REFUSAL_SENTINEL};
pub use router::{ModelRouter, RetryPolicy, Role, DEFAULT_CONCURRENCY};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub model_id: String,
}

impl TokenUsage {
    pub fn new(model_id: impl Into<String>, input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
            model_id: model_id.into(),
        }
    }

    /// Adds another record's tokens to this one. Model ids must agree.
    pub fn merge(&mut self, other: &TokenUsage) {
        debug_assert_eq!(self.model_id, other.model_id, "merging usage across models");
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// Raw reply from a completion backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Per-token log-probabilities of the reply, when the server returns them.
    pub logprobs: Option<Vec<f64>>,
    pub usage: TokenUsage,
}

/// A completion with refusal and confidence derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub confidence: Option<f64>,
    pub is_refusal: bool,
    pub usage: TokenUsage,
}

impl From<Completion> for GenerationResult {
    fn from(c: Completion) -> Self {
        Self {
            is_refusal: detect_refusal(&c.text),
            confidence: confidence_of(c.logprobs.as_deref()),
            text: c.text,
            usage: c.usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: EmbeddingVector,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("empty input")]
    EmptyInput,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;

    async fn complete(&self, prompt: &str) -> Result<Completion, BackendError>;
}

#[async_trait]
pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;

    async fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retryable_classification() {
        assert!(BackendError::Timeout.is_retryable());
        assert!(BackendError::Transport("reset".into()).is_retryable());
        assert!(BackendError::Http {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(BackendError::Http {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Http {
            status: 401,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::ContextLength("too long".into()).is_retryable());
    }

    #[test]
    fn usage_merges_additively() {
        let mut a = TokenUsage::new("m", 4000, 50);
        a.merge(&TokenUsage::new("m", 10, 5));
        assert_eq!(a, TokenUsage::new("m", 4010, 55));
    }

    #[test]
    fn generation_result_derives_flags() {
        let g: GenerationResult = Completion {
            text: "answer not in context".into(),
            logprobs: Some(vec![-1.0, -1.0]),
            usage: TokenUsage::new("m", 1, 1),
        }
        .into();
        assert!(g.is_refusal);
        assert!((g.confidence.unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }
}
