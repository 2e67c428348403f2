use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use focusqa_core::directives::{parse_prompt, DirectiveSet};
use focusqa_core::document::ElementKind;
use focusqa_core::evaluation::{load_queries, render_table, run_ablation, run_eval, EvalOptions};
use focusqa_core::{
    parse_structured_document, DocumentStore, Engine, PipelineConfig, QueryRequest, QueryResult,
    Trace,
};
use serde::Serialize;

use crate::config::Settings;
use crate::error::CliError;
use crate::{AskArgs, DirectivesArgs, EvalArgs, IngestArgs, Tuning};

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_directives(path: &Path) -> Result<DirectiveSet, CliError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Usage(format!("{}: invalid directive set: {e}", path.display())))
}

#[derive(Serialize)]
struct KindSummary {
    elements: usize,
    tokens: usize,
}

#[derive(Serialize)]
struct IngestSummary {
    doc_id: String,
    path: String,
    elements: usize,
    total_tokens: usize,
    kinds: BTreeMap<ElementKind, KindSummary>,
}

pub fn ingest(settings: &Settings, args: &IngestArgs) -> Result<(), CliError> {
    let text = read(&args.path)?;
    let mut doc = parse_structured_document(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.path.display())))?;
    if let Some(id) = &args.doc_id {
        doc.doc_id = id.clone();
    }
    let store = DocumentStore::open(&settings.store)?;
    let path = store.save(&doc, args.force)?;

    let mut kinds: BTreeMap<ElementKind, KindSummary> = BTreeMap::new();
    for e in &doc.elements {
        let k = kinds.entry(e.kind).or_insert(KindSummary {
            elements: 0,
            tokens: 0,
        });
        k.elements += 1;
        k.tokens += e.token_count;
    }
    let summary = IngestSummary {
        doc_id: doc.doc_id.clone(),
        path: path.display().to_string(),
        elements: doc.elements.len(),
        total_tokens: doc.total_tokens,
        kinds,
    };
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
    } else {
        println!(
            "ingested `{}`: {} elements, {} tokens -> {}",
            summary.doc_id, summary.elements, summary.total_tokens, summary.path
        );
        for (kind, k) in &summary.kinds {
            println!(
                "  {kind:<10} {:>5} elements {:>8} tokens",
                k.elements, k.tokens
            );
        }
    }
    Ok(())
}

pub async fn directives(settings: &Settings, args: &DirectivesArgs) -> Result<(), CliError> {
    if let Some(path) = &args.directives_file {
        println!("{}", load_directives(path)?.to_json());
        return Ok(());
    }
    let knowledge = match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => read(path)?,
        (None, None) => {
            return Err(CliError::Usage(
                "one of --prompt, --prompt-file or --directives-file is required".into(),
            ))
        }
    };
    if knowledge.trim().is_empty() {
        println!("{}", DirectiveSet::default().to_json());
        return Ok(());
    }
    let backends = if args.rules_only {
        settings.rules_backends()
    } else {
        settings.backends()?
    };
    let trace = Trace::new();
    let extraction = parse_prompt(&knowledge, &backends.router, &trace).await?;
    for d in &extraction.diagnostics {
        tracing::warn!("{d}");
    }
    println!("{}", extraction.directives.to_json());
    Ok(())
}

fn tuned(mut config: PipelineConfig, tuning: &Tuning) -> PipelineConfig {
    if let Some(k) = tuning.top_k {
        config.top_k = k;
    }
    if let Some(b) = tuning.chunk_budget {
        config.chunk_budget = b;
    }
    if let Some(t) = tuning.match_threshold {
        config.match_threshold = t;
    }
    if let Some(n) = tuning.answers {
        config.answer_k = n;
    }
    config
}

fn engine(settings: &Settings) -> Result<Engine, CliError> {
    let backends = settings.backends()?;
    let store = DocumentStore::open(&settings.store)?;
    Ok(Engine::new(
        Arc::new(store),
        Arc::new(backends.router),
        backends.prices,
    ))
}

fn render_result(r: &QueryResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "question: {}", r.question);
    let _ = writeln!(out, "document: {}  plan: {}", r.doc_id, r.plan);
    if r.ranked_answers.is_empty() {
        let _ = writeln!(
            out,
            "no answer: every response declared the answer absent from its context"
        );
    }
    for (i, a) in r.ranked_answers.iter().enumerate() {
        let score = a
            .validation
            .as_ref()
            .map_or("-".to_string(), |v| format!("{:+.4}", v.score));
        let conf = a.confidence.map_or("-".to_string(), |c| format!("{c:.3}"));
        let _ = writeln!(
            out,
            "{:>2}. [score {score} | confidence {conf}] {}",
            i + 1,
            a.text.trim()
        );
    }
    let events: Vec<&str> = r.fallback_events.iter().map(|e| e.as_str()).collect();
    let _ = writeln!(
        out,
        "fallbacks: {}",
        if events.is_empty() {
            "none".to_string()
        } else {
            events.join(", ")
        }
    );
    let stages = r
        .cost
        .dollars_by_stage
        .iter()
        .filter(|(_, d)| **d > 0.0)
        .map(|(s, d)| format!("{s} ${d:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "cost: ${:.6} ({stages})", r.cost.dollars_total);
    out
}

pub async fn ask(settings: &Settings, args: &AskArgs) -> Result<(), CliError> {
    let knowledge = match (&args.knowledge, &args.knowledge_file) {
        (Some(k), _) => k.clone(),
        (None, Some(path)) => read(path)?,
        (None, None) => String::new(),
    };
    let engine = engine(settings)?;
    let mut request = QueryRequest::new(&args.doc_id, &args.question)
        .with_knowledge(knowledge)
        .with_config(tuned(settings.pipeline.clone(), &args.tuning));
    if let Some(path) = &args.directives_file {
        request = request.with_directives(load_directives(path)?);
    }
    let result = engine.run_plan(&request, args.plan).await?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("results serialize")
        );
    } else {
        print!("{}", render_result(&result));
    }
    Ok(())
}

pub async fn eval(settings: &Settings, args: &EvalArgs) -> Result<(), CliError> {
    let queries = load_queries(&read(&args.queries)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.queries.display())))?;
    let engine = engine(settings)?;
    let options = EvalOptions {
        config: tuned(settings.pipeline.clone(), &args.tuning),
        parallelism: args.parallelism,
    };
    let report = if args.ablation {
        run_ablation(&engine, &queries, &options).await
    } else {
        run_eval(&engine, &queries, args.plan, &options).await
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;

    std::fs::write(&args.out, report.to_json()).map_err(|e| CliError::io(&args.out, e))?;
    print!("{}", render_table(&report));
    println!("report written to {}", args.out.display());
    let failed = report.errored();
    if failed > 0 {
        for row in &report.rows {
            for o in row.outcomes.iter().filter(|o| o.error.is_some()) {
                tracing::error!(row = %row.name, query = %o.query_id, "{}", o.error.as_deref().unwrap_or_default());
            }
        }
        return Err(CliError::QueriesFailed {
            failed,
            total: queries.len() * report.rows.len(),
        });
    }
    Ok(())
}
