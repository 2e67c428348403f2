//! OpenAI-compatible `/chat/completions` and `/embeddings` clients.

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{
    BackendError, Completion, CompletionBackend, Embedding, EmbeddingBackend, EmbeddingVector,
    TokenUsage,
};
use crate::document::count_tokens;

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL up to and including the version segment, e.g. `http://host/v1`.
    pub base_url: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

struct Http {
    config: EndpointConfig,
    client: reqwest::Client,
}

impl Http {
    fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    async fn post(&self, path: &str, body: serde_json::Value) -> Result<String, BackendError> {
        let mut request = self.client.post(self.config.url(path)).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(map_reqwest)?;
        let status = response.status().as_u16();
        let text = response.text().await.map_err(map_reqwest)?;
        if (200..300).contains(&status) {
            return Ok(text);
        }
        if is_context_length_error(status, &text) {
            return Err(BackendError::ContextLength(text));
        }
        Err(BackendError::Http { status, body: text })
    }
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn is_context_length_error(status: u16, body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    (status == 400 || status == 413)
        && (lower.contains("context_length_exceeded")
            || lower.contains("maximum context length")
            || lower.contains("context length"))
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Parses a chat-completions body. Missing usage falls back to the token
/// estimate so the ledger always gets a record.
pub fn parse_chat_response(
    model_id: &str,
    prompt: &str,
    body: &str,
) -> Result<Completion, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::InvalidResponse("no choices in response".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let logprobs = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|tokens| tokens.into_iter().map(|t| t.logprob).collect::<Vec<_>>())
        .filter(|v| !v.is_empty());
    let usage = match parsed.usage {
        Some(u) => TokenUsage::new(model_id, u.prompt_tokens, u.completion_tokens),
        None => TokenUsage::new(
            model_id,
            count_tokens(prompt) as u64,
            count_tokens(&text) as u64,
        ),
    };
    Ok(Completion {
        text,
        logprobs,
        usage,
    })
}

pub struct OpenAiChat {
    http: Http,
    request_logprobs: bool,
}

impl OpenAiChat {
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: Http::new(config)?,
            request_logprobs: false,
        })
    }

    /// Asks the server for token log-probabilities (used for confidence).
    pub fn with_logprobs(mut self, enabled: bool) -> Self {
        self.request_logprobs = enabled;
        self
    }
}

#[async_trait]
impl CompletionBackend for OpenAiChat {
    fn model_id(&self) -> &str {
        &self.http.config.model_id
    }

    async fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let mut body = json!({
            "model": self.http.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        if self.request_logprobs {
            body["logprobs"] = json!(true);
        }
        let text = self.http.post("chat/completions", body).await?;
        parse_chat_response(&self.http.config.model_id, prompt, &text)
    }
}

pub struct OpenAiEmbeddings {
    http: Http,
}

impl OpenAiEmbeddings {
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: Http::new(config)?,
        })
    }
}

#[async_trait]
impl EmbeddingBackend for OpenAiEmbeddings {
    fn model_id(&self) -> &str {
        &self.http.config.model_id
    }

    async fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let body = json!({"model": self.http.config.model_id, "input": text});
        let raw = self.http.post("embeddings", body).await?;
        let parsed: EmbeddingsResponse =
            serde_json::from_str(&raw).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("no embedding in response".into()))?;
        let input_tokens = parsed
            .usage
            .map_or(count_tokens(text) as u64, |u| u.prompt_tokens);
        Ok(Embedding {
            vector: EmbeddingVector::new(datum.embedding)?,
            usage: TokenUsage::new(self.http.config.model_id.clone(), input_tokens, 0),
        })
    }
}
