use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{BackendError, CompletionBackend, Embedding, EmbeddingBackend, GenerationResult};

pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Expensive,
    Filter,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Expensive => "expensive",
            Role::Filter => "filter",
        })
    }
}

/// Exponential backoff: attempt `n` (0-based retry) waits `base_delay * 2^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_millis(250),
        }
    }
}

struct Limited<T: ?Sized> {
    backend: Arc<T>,
    permits: Arc<Semaphore>,
}

impl<T: ?Sized> Limited<T> {
    fn new(backend: Arc<T>, limit: usize) -> Self {
        Self {
            backend,
            permits: Arc::new(Semaphore::new(limit.max(1))),
        }
    }
}

/// Binds the three model roles, bounding in-flight calls per role and
/// retrying retryable failures.
pub struct ModelRouter {
    expensive: Limited<dyn CompletionBackend>,
    filter: Limited<dyn CompletionBackend>,
    embedder: Limited<dyn EmbeddingBackend>,
    retry: RetryPolicy,
}

impl ModelRouter {
    pub fn new(
        expensive: Arc<dyn CompletionBackend>,
        filter: Arc<dyn CompletionBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Self {
        Self {
            expensive: Limited::new(expensive, DEFAULT_CONCURRENCY),
            filter: Limited::new(filter, DEFAULT_CONCURRENCY),
            embedder: Limited::new(embedder, DEFAULT_CONCURRENCY),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Sets the in-flight limit for one completion role.
    pub fn with_concurrency(mut self, role: Role, limit: usize) -> Self {
        let slot = match role {
            Role::Expensive => &mut self.expensive,
            Role::Filter => &mut self.filter,
        };
        *slot = Limited::new(slot.backend.clone(), limit);
        self
    }

    pub fn with_embedding_concurrency(mut self, limit: usize) -> Self {
        self.embedder = Limited::new(self.embedder.backend.clone(), limit);
        self
    }

    pub fn model_id(&self, role: Role) -> &str {
        self.completion(role).backend.model_id()
    }

    pub fn embedder_model_id(&self) -> &str {
        self.embedder.backend.model_id()
    }

    fn completion(&self, role: Role) -> &Limited<dyn CompletionBackend> {
        match role {
            Role::Expensive => &self.expensive,
            Role::Filter => &self.filter,
        }
    }

    pub async fn generate(
        &self,
        role: Role,
        prompt: &str,
    ) -> Result<GenerationResult, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let slot = self.completion(role);
        let _permit = slot
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");
        let completion = self.with_retries(|| slot.backend.complete(prompt)).await?;
        Ok(completion.into())
    }

    pub async fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let _permit = self
            .embedder
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");
        self.with_retries(|| self.embedder.backend.embed(text))
            .await
    }

    async fn with_retries<'a, T, F, Fut>(&self, mut call: F) -> Result<T, BackendError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, BackendError>> + 'a,
    {
        let mut attempt = 0;
        loop {
            match call().await {
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    tracing::debug!(error = %e, attempt, ?delay, "retrying backend call");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
