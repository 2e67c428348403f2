use focusqa_core::evaluation::{load_queries, run_ablation, run_eval, EvalOptions, EvalReport};
use focusqa_core::trace::CostStage;
use focusqa_core::Plan;
use focusqa_testkit::{corpus, engine, Corpus};

async fn ablation(c: &Corpus) -> EvalReport {
    let docs: Vec<_> = c.filings.iter().map(|f| &f.doc).collect();
    let (engine, _) = engine(&docs, &c.scenario);
    run_ablation(&engine, &c.queries, &EvalOptions::default())
        .await
        .unwrap()
}

#[tokio::test]
async fn ablation_rows_and_cost_relations() {
    let c = corpus();
    assert_eq!(c.queries.len(), 20);
    let report = ablation(&c).await;
    let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        ["no-DK", "+structural", "+filter", "+validate", "full"]
    );
    assert_eq!(report.errored(), 0);

    let no_dk = report.row("no-DK").unwrap();
    let validate = report.row("+validate").unwrap();
    let filter = report.row("+filter").unwrap();
    let full = report.row("full").unwrap();
    let embed_cost = validate.cost.stage_dollars(CostStage::Validate);
    assert!(embed_cost > 0.0);
    assert!((validate.cost.dollars_total - no_dk.cost.dollars_total - embed_cost).abs() < 1e-12);
    assert!(
        filter.cost.stage_dollars(CostStage::ExpensiveLlm)
            <= no_dk.cost.stage_dollars(CostStage::ExpensiveLlm)
    );
    assert!(full.cost.dollars_total < no_dk.cost.dollars_total);
    assert!(validate.mrr_at_1 > no_dk.mrr_at_1);
    assert_eq!(full.mrr_at_1, 1.0);
    for row in &report.rows {
        assert!(row.mrr_at_1 <= row.mrr_at_3 && row.mrr_at_3 <= row.mrr_at_5);
    }
    let extraction = report.directive_extraction.as_ref().unwrap();
    assert_eq!(
        extraction.stage_tokens(CostStage::KnowledgeParser).calls,
        20
    );
    assert!(report
        .rows
        .iter()
        .all(|r| r.cost.stage_tokens(CostStage::KnowledgeParser).calls == 0));
}

#[tokio::test]
async fn reports_are_deterministic() {
    let c = corpus();
    let a = ablation(&c).await.to_json();
    let b = ablation(&corpus()).await.to_json();
    assert_eq!(a, b);
}

#[tokio::test]
async fn plans_over_the_corpus() {
    let c = corpus();
    let docs: Vec<_> = c.filings.iter().map(|f| &f.doc).collect();
    let (engine, backends) = engine(&docs, &c.scenario);
    let opts = EvalOptions::default();
    let vanilla = run_eval(&engine, &c.queries, Plan::Vanilla, &opts)
        .await
        .unwrap();
    assert_eq!(backends.expensive.calls(), 20);
    assert_eq!(vanilla.rows[0].name, "vanilla");
    let full = run_eval(&engine, &c.queries, Plan::Full, &opts)
        .await
        .unwrap();
    assert!(full.rows[0].mean_cost_per_query < vanilla.rows[0].mean_cost_per_query);
    for o in &full.rows[0].outcomes {
        assert_eq!(o.gold_rank, Some(1), "{}", o.query_id);
    }
}

#[tokio::test]
async fn errored_queries_count_as_misses() {
    let mut c = corpus();
    c.queries[0].doc_id = "missing-doc".into();
    let docs: Vec<_> = c.filings.iter().map(|f| &f.doc).collect();
    let (engine, _) = engine(&docs, &c.scenario);
    let r = run_eval(&engine, &c.queries, Plan::Full, &EvalOptions::default())
        .await
        .unwrap();
    let row = &r.rows[0];
    assert_eq!(row.errors, 1);
    assert!(row.outcomes[0]
        .error
        .as_deref()
        .unwrap()
        .contains("missing-doc"));
    assert!((row.mrr_at_1 - 19.0 / 20.0).abs() < 1e-12);
}

#[test]
fn query_files_round_trip_and_validate() {
    let c = corpus();
    let json = serde_json::to_string(&c.queries).unwrap();
    assert_eq!(load_queries(&json).unwrap(), c.queries);
    let bad = json.replacen(&c.queries[0].question, "  ", 1);
    assert!(load_queries(&bad).is_err());
    assert!(load_queries("{").is_err());
}
