//! The HTTP backends against an in-process OpenAI-compatible server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use focusqa_core::backends::openai::{EndpointConfig, OpenAiChat, OpenAiEmbeddings};
use focusqa_core::backends::{
    BackendError, CompletionBackend, EmbeddingBackend, ModelRouter, RetryPolicy, Role,
};
use focusqa_core::document::{ElementInput, ElementKind, StructuredDocument};
use focusqa_core::evaluation::{ModelPrice, PriceTable};
use focusqa_core::trace::CostStage;
use focusqa_core::{Engine, MemoryStore, QueryRequest};
use serde_json::{json, Value};

#[derive(Default)]
struct Fake {
    flaky_failures: AtomicUsize,
    requests: Mutex<Vec<Value>>,
    auth: Mutex<Vec<Option<String>>>,
}

async fn chat(
    State(fake): State<Arc<Fake>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    fake.requests.lock().unwrap().push(body.clone());
    fake.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .map(|v| v.to_str().unwrap().to_string()),
    );
    let prompt = body["messages"][0]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    if prompt.contains("FLAKY") && fake.flaky_failures.fetch_add(1, Ordering::SeqCst) < 2 {
        return (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"error": "busy"})),
        );
    }
    if prompt.contains("HUGE") {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": {"code": "context_length_exceeded", "message": "too long"}})),
        );
    }
    let content = if prompt.contains("<knowledge>") {
        json!({"structural": ["table"], "filters": [], "validations": [{"text": "diluted", "negated": false}]}).to_string()
    } else if prompt.contains("1.97") {
        "Diluted EPS was 1.97.".to_string()
    } else {
        "ANSWER_NOT_IN_CONTEXT".to_string()
    };
    let mut choice = json!({"index": 0, "message": {"role": "assistant", "content": content}});
    if body["logprobs"] == json!(true) {
        choice["logprobs"] =
            json!({"content": [{"token": "a", "logprob": -0.1}, {"token": "b", "logprob": -0.3}]});
    }
    (
        StatusCode::OK,
        Json(json!({"choices": [choice], "usage": {"prompt_tokens": 123, "completion_tokens": 7}})),
    )
}

async fn embeddings(Json(body): Json<Value>) -> Json<Value> {
    let text = body["input"].as_str().unwrap_or_default();
    let v = if text.to_lowercase().contains("table") || text.contains("diluted") {
        vec![1.0, 0.0]
    } else {
        vec![0.0, 1.0]
    };
    Json(
        json!({"data": [{"embedding": v, "index": 0}], "usage": {"prompt_tokens": 5, "total_tokens": 5}}),
    )
}

async fn serve() -> (String, Arc<Fake>) {
    let fake = Arc::new(Fake::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(fake.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), fake)
}

#[tokio::test]
async fn chat_reads_usage_and_logprobs() {
    let (base, fake) = serve().await;
    let chat = OpenAiChat::new(
        EndpointConfig::new(&base, "big-model").with_api_key(Some("sk-test".into())),
    )
    .unwrap()
    .with_logprobs(true);
    let c = chat.complete("context 1.97").await.unwrap();
    assert_eq!(c.text, "Diluted EPS was 1.97.");
    assert_eq!(c.logprobs, Some(vec![-0.1, -0.3]));
    assert_eq!((c.usage.input_tokens, c.usage.output_tokens), (123, 7));
    assert_eq!(c.usage.model_id, "big-model");
    assert_eq!(
        fake.auth.lock().unwrap()[0].as_deref(),
        Some("Bearer sk-test")
    );
    let sent = &fake.requests.lock().unwrap()[0];
    assert_eq!(sent["model"], "big-model");
    assert_eq!(sent["temperature"], 0);
}

#[tokio::test]
async fn context_length_is_classified() {
    let (base, _) = serve().await;
    let chat = OpenAiChat::new(EndpointConfig::new(&base, "m")).unwrap();
    let err = chat.complete("HUGE prompt").await.unwrap_err();
    assert!(matches!(err, BackendError::ContextLength(_)), "{err}");
}

#[tokio::test]
async fn router_retries_server_errors() {
    let (base, fake) = serve().await;
    let chat = Arc::new(OpenAiChat::new(EndpointConfig::new(&base, "m")).unwrap());
    let emb = Arc::new(OpenAiEmbeddings::new(EndpointConfig::new(&base, "e")).unwrap());
    let router = ModelRouter::new(chat.clone(), chat, emb).with_retry(RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(1),
    });
    let g = router
        .generate(Role::Expensive, "FLAKY 1.97")
        .await
        .unwrap();
    assert_eq!(g.text, "Diluted EPS was 1.97.");
    assert_eq!(fake.requests.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn unreachable_server_is_transport_error() {
    let chat = OpenAiChat::new(EndpointConfig::new("http://127.0.0.1:9/v1", "m")).unwrap();
    let err = chat.complete("hello").await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
}

#[tokio::test]
async fn embeddings_report_usage() {
    let (base, _) = serve().await;
    let emb = OpenAiEmbeddings::new(EndpointConfig::new(&base, "emb")).unwrap();
    let e = emb.embed("EPS table").await.unwrap();
    assert_eq!(e.vector.values(), &[1.0, 0.0]);
    assert_eq!(e.usage.input_tokens, 5);
    assert_eq!(e.usage.model_id, "emb");
}

#[tokio::test]
async fn engine_runs_end_to_end_over_http() {
    let (base, _) = serve().await;
    let chat = Arc::new(
        OpenAiChat::new(EndpointConfig::new(&base, "big"))
            .unwrap()
            .with_logprobs(true),
    );
    let small = Arc::new(OpenAiChat::new(EndpointConfig::new(&base, "small")).unwrap());
    let emb = Arc::new(OpenAiEmbeddings::new(EndpointConfig::new(&base, "emb")).unwrap());
    let router = ModelRouter::new(chat, small, emb);
    let doc = StructuredDocument::new(
        "tiny",
        vec![
            ElementInput::new("p1", ElementKind::Paragraph, "Forward-looking statements."),
            ElementInput::new(
                "t1",
                ElementKind::Table,
                "Diluted EPS 1.97 | Basic EPS 2.01",
            )
            .with_label("EPS"),
        ],
    )
    .unwrap();
    let mut prices = PriceTable::default();
    prices.insert("big", ModelPrice::new(3.0, 15.0));
    prices.insert("small", ModelPrice::new(0.1, 0.1));
    prices.insert("emb", ModelPrice::new(0.02, 0.0));
    let engine = Engine::new(
        Arc::new(MemoryStore::new().with(doc)),
        Arc::new(router),
        prices,
    );
    let req = QueryRequest::new("tiny", "What was diluted EPS?")
        .with_knowledge("Look in tables. Report diluted EPS.");
    let result = engine.execute_query(&req).await.unwrap();
    assert_eq!(result.top_answer().unwrap().text, "Diluted EPS was 1.97.");
    let expensive = result.cost.stage_tokens(CostStage::ExpensiveLlm);
    assert_eq!((expensive.calls, expensive.input_tokens), (1, 123));
    let parser = result.cost.stage_tokens(CostStage::KnowledgeParser);
    assert_eq!(
        (parser.calls, parser.input_tokens, parser.output_tokens),
        (1, 123, 7)
    );
    let expected = 2.0 * (123.0 * 3.0 + 7.0 * 15.0) / 1e6;
    let llm_dollars = result.cost.stage_dollars(CostStage::ExpensiveLlm)
        + result.cost.stage_dollars(CostStage::KnowledgeParser);
    assert!((llm_dollars - expected).abs() < 1e-12);
}
