use std::path::Path;
use std::process::{Command, Output};

use focusqa_core::document::count_tokens;
use focusqa_testkit::{corpus, eps_setup, write_corpus, EPS_KNOWLEDGE, EPS_QUESTION};
use serde_json::Value;

fn focusqa(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_focusqa"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("FOCUSQA_")) {
        cmd.env_remove(k);
    }
    cmd.current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ingest_corpus(dir: &Path) {
    let files = write_corpus(&corpus(), dir).unwrap();
    for doc in &files.docs {
        let o = focusqa(dir, &["--store", "store", "ingest", doc.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn ingest_summarizes_and_refuses_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("small.json"),
        r#"{"doc_id":"small","elements":[
            {"id":"s1","kind":"section","text":"Item 7"},
            {"id":"p1","kind":"paragraph","text":"Revenue grew.","parent":"s1"},
            {"id":"t1","kind":"table","label":"EPS","text":"Diluted 1.97"}]}"#,
    )
    .unwrap();
    let o = focusqa(
        dir.path(),
        &["--store", "store", "ingest", "small.json", "--json"],
    );
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["elements"], 3);
    assert_eq!(v["kinds"]["table"]["elements"], 1);

    let again = focusqa(dir.path(), &["--store", "store", "ingest", "small.json"]);
    assert_eq!(again.status.code(), Some(2));
    let forced = focusqa(
        dir.path(),
        &["--store", "store", "ingest", "small.json", "--force"],
    );
    assert!(forced.status.success());
    let renamed = focusqa(
        dir.path(),
        &[
            "--store",
            "store",
            "ingest",
            "small.json",
            "--doc-id",
            "other",
        ],
    );
    assert!(renamed.status.success());
    assert!(stdout(&renamed).contains("`other`"));
}

#[test]
fn ingest_reports_element_index_on_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"doc_id":"bad","elements":[{"id":"a","kind":"paragraph","text":"x"},{"id":"b","kind":"table"}]}"#,
    )
    .unwrap();
    let o = focusqa(dir.path(), &["--store", "store", "ingest", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("element 1"));
}

#[test]
fn ingest_token_total_matches_element_sum() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let files = write_corpus(&c, dir.path()).unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--store",
            "store",
            "ingest",
            files.docs[0].to_str().unwrap(),
            "--json",
        ],
    );
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expected: usize = c.filings[0]
        .doc
        .elements
        .iter()
        .map(|e| count_tokens(&e.text))
        .sum();
    assert_eq!(v["total_tokens"], expected);
    assert_eq!(v["elements"], 200);
}

#[test]
fn directives_from_rules_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let knowledge = "Look in tables and the MD&A section. Ignore legal disclaimers. Report diluted computations, NOT basic computations.";
    let o = focusqa(
        dir.path(),
        &["directives", "--rules-only", "--prompt", knowledge],
    );
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(
        v["structural"],
        serde_json::json!(["table", "MD&A section"])
    );
    assert_eq!(v["filters"], serde_json::json!(["legal disclaimers"]));
    assert_eq!(
        v["validations"],
        serde_json::json!([{"text": "diluted computations", "negated": false}, {"text": "basic computations", "negated": true}])
    );

    std::fs::write(dir.path().join("d.json"), stdout(&o)).unwrap();
    let round = focusqa(dir.path(), &["directives", "--directives-file", "d.json"]);
    assert_eq!(stdout(&round), stdout(&o));

    let empty = focusqa(dir.path(), &["directives", "--prompt", ""]);
    assert!(empty.status.success());
    assert_eq!(
        stdout(&empty).trim(),
        r#"{"structural":[],"filters":[],"validations":[]}"#
    );
}

#[test]
fn directives_with_scripted_backend() {
    let dir = tempfile::tempdir().unwrap();
    let (_, scenario) = eps_setup();
    std::fs::write(
        dir.path().join("s.json"),
        serde_json::to_string(&scenario).unwrap(),
    )
    .unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--scenario",
            "s.json",
            "directives",
            "--prompt",
            EPS_KNOWLEDGE,
        ],
    );
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["structural"], serde_json::json!(["table"]));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--expensive-url",
            "http://127.0.0.1:9/v1",
            "--expensive-model",
            "m",
            "--filter-url",
            "http://127.0.0.1:9/v1",
            "--filter-model",
            "f",
            "--embedder-url",
            "http://127.0.0.1:9/v1",
            "--embedder-model",
            "e",
            "directives",
            "--prompt",
            "Look in tables.",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unbound_roles_are_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = focusqa(dir.path(), &["directives", "--prompt", "Look in tables."]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ask_scripted_scenario() {
    let dir = tempfile::tempdir().unwrap();
    ingest_corpus(dir.path());
    let (filing, scenario) = eps_setup();
    std::fs::write(
        dir.path().join("eps.json"),
        serde_json::to_string(&scenario).unwrap(),
    )
    .unwrap();
    let base = [
        "--store",
        "store",
        "--scenario",
        "eps.json",
        "ask",
        "--doc-id",
        "acme-10k-2022",
        "--question",
        EPS_QUESTION,
    ];

    let mut args = base.to_vec();
    args.extend(["--knowledge", EPS_KNOWLEDGE, "--json"]);
    let o = focusqa(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "focusqa.query_result/v1");
    assert_eq!(
        v["ranked_answers"][0]["text"],
        filing.fact("diluted computations").answer()
    );
    assert_eq!(v["fallback_events"], serde_json::json!([]));

    let mut args = base.to_vec();
    args.extend(["--knowledge", EPS_KNOWLEDGE]);
    let human = stdout(&focusqa(dir.path(), &args));
    assert!(human.contains(" 1. [score"));
    assert!(human.contains("fallbacks: none"));

    let mut args = base.to_vec();
    args.extend(["--plan", "vanilla", "--json"]);
    let v: Value = serde_json::from_str(&stdout(&focusqa(dir.path(), &args))).unwrap();
    assert_eq!(v["cost"]["tokens_by_stage"]["expensive_llm"]["calls"], 1);

    // No knowledge behaves like the no-directives plan.
    let mut args = base.to_vec();
    args.push("--json");
    let a: Value = serde_json::from_str(&stdout(&focusqa(dir.path(), &args))).unwrap();
    let mut args = base.to_vec();
    args.extend(["--plan", "no-dk", "--json"]);
    let b: Value = serde_json::from_str(&stdout(&focusqa(dir.path(), &args))).unwrap();
    assert_eq!(a["trace"], b["trace"]);
    assert_eq!(a["ranked_answers"], b["ranked_answers"]);
}

#[test]
fn ask_missing_document_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, scenario) = eps_setup();
    std::fs::write(
        dir.path().join("s.json"),
        serde_json::to_string(&scenario).unwrap(),
    )
    .unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--store",
            "store",
            "--scenario",
            "s.json",
            "ask",
            "--doc-id",
            "nope",
            "--question",
            "q?",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn config_file_binds_store_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    ingest_corpus(dir.path());
    std::fs::create_dir(dir.path().join("conf")).unwrap();
    std::fs::write(
        dir.path().join("conf/engine.toml"),
        "store = \"../store\"\nscenario = \"../scenario.json\"\n[pipeline]\nanswer_k = 1\n",
    )
    .unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--config",
            "conf/engine.toml",
            "ask",
            "--doc-id",
            "acme-10k-2022",
            "--question",
            EPS_QUESTION,
            "--json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ranked_answers"].as_array().unwrap().len(), 1);
}

#[test]
fn eval_writes_report_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    ingest_corpus(dir.path());
    let o = focusqa(
        dir.path(),
        &[
            "--store",
            "store",
            "--scenario",
            "scenario.json",
            "eval",
            "--queries",
            "queries.json",
            "--out",
            "r.json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("MRR@1"));
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], "focusqa.eval_report/v1");
    assert_eq!(v["rows"][0]["mrr_at_1"], 1.0);

    let mut queries: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("queries.json")).unwrap())
            .unwrap();
    queries[0]["doc_id"] = "missing".into();
    std::fs::write(dir.path().join("bad.json"), queries.to_string()).unwrap();
    let o = focusqa(
        dir.path(),
        &[
            "--store",
            "store",
            "--scenario",
            "scenario.json",
            "eval",
            "--queries",
            "bad.json",
            "--out",
            "bad-report.json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("bad-report.json").exists());
}
