use std::collections::BTreeSet;
use std::sync::Arc;

use focusqa_core::backends::mock::{OneOrMany, Script, ScriptReply, ScriptRule, ScriptedBackend};
use focusqa_core::backends::rules::extract_by_rules;
use focusqa_core::backends::{EmbeddingVector, HashEmbedder, ModelRouter, TokenUsage};
use focusqa_core::chunking::Chunk;
use focusqa_core::directives::{
    parse_directive_reply, DirectiveSet, FilterDirective, StructuralDirective, ValidationDirective,
};
use focusqa_core::document::{ElementInput, ElementKind, StructuredDocument};
use focusqa_core::evaluation::{
    compute_cost, extract_last_number, numeric_match, ModelPrice, PriceTable,
};
use focusqa_core::operators::{
    filter_chunks, rank_by_confidence, rank_by_validation, score_against, structural_prune,
    CandidateResponse, ValidationScore,
};
use focusqa_core::trace::{CostStage, Trace};
use proptest::prelude::*;

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

fn router_with_filter(filter: Script) -> ModelRouter {
    ModelRouter::new(
        Arc::new(ScriptedBackend::new(Script::new("m"))),
        Arc::new(ScriptedBackend::new(filter)),
        Arc::new(HashEmbedder::default()),
    )
}

const LABELS: [&str; 8] = [
    "EPS table",
    "Revenue table",
    "Risk factors",
    "Notes to statements",
    "Cash flow",
    "Table of contents",
    "Balance sheet",
    "Exhibits",
];
const KINDS: [ElementKind; 6] = ElementKind::ALL;

fn arb_doc() -> impl Strategy<Value = StructuredDocument> {
    prop::collection::vec((0..KINDS.len(), prop::option::of(0..LABELS.len())), 1..20).prop_map(
        |spec| {
            let inputs = spec
                .into_iter()
                .enumerate()
                .map(|(i, (k, label))| {
                    let e =
                        ElementInput::new(format!("e{i}"), KINDS[k], format!("element {i} body"));
                    match label {
                        Some(l) => e.with_label(LABELS[l]),
                        None => e,
                    }
                })
                .collect();
            StructuredDocument::new("doc", inputs).unwrap()
        },
    )
}

fn arb_directive() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec![
            "table",
            "tables",
            "footnotes",
            "section",
            "paragraph",
            "figure"
        ])
        .prop_map(String::from),
        prop::sample::select(LABELS.to_vec()).prop_map(String::from),
        "[a-z]{3,8}( [a-z]{3,8})?",
    ]
}

fn retained(doc: &StructuredDocument, directives: &[String]) -> (BTreeSet<String>, bool) {
    let ds: Vec<StructuralDirective> = directives
        .iter()
        .map(|d| StructuralDirective::new(d.as_str()))
        .collect();
    let router = router_with_filter(Script::new("f"));
    let trace = Trace::new();
    let out = runtime().block_on(structural_prune(doc, &ds, 0.5, &router, &trace));
    let ids = out
        .pruned
        .elements(doc)
        .map(|e| e.element_id.as_str().to_string())
        .collect();
    (ids, out.no_match)
}

fn chunk(i: usize, text: String) -> Chunk {
    Chunk {
        chunk_id: format!("c{i}"),
        source_element_ids: Vec::new(),
        text,
        token_count: 1,
        index: i,
    }
}

fn candidate(i: usize, refusal: bool, confidence: Option<f64>, score: f64) -> CandidateResponse {
    CandidateResponse {
        response_id: format!("r{i}"),
        chunk_id: format!("c{i}"),
        chunk_index: i,
        text: format!("answer {i}"),
        confidence,
        is_refusal: refusal,
        validation: Some(ValidationScore {
            response_id: format!("r{i}"),
            score,
            per_directive_terms: Vec::new(),
        }),
        error: None,
    }
}

fn arb_candidates() -> impl Strategy<Value = Vec<CandidateResponse>> {
    prop::collection::vec(
        (any::<bool>(), prop::option::of(0.0..1.0f64), -3.0..3.0f64),
        0..15,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (r, c, s))| candidate(i, r, c, s))
            .collect()
    })
}

fn nonneg_vector(values: Vec<f64>) -> EmbeddingVector {
    let mut values = values;
    values[0] += 0.01;
    EmbeddingVector::new(values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structural_union_is_monotone(doc in arb_doc(), a in prop::collection::vec(arb_directive(), 1..4), b in prop::collection::vec(arb_directive(), 0..3)) {
        let (small, small_fallback) = retained(&doc, &a);
        let mut both = a.clone();
        both.extend(b.iter().cloned());
        let (large, large_fallback) = retained(&doc, &both);
        if !small_fallback {
            prop_assert!(!large_fallback);
            prop_assert!(small.is_subset(&large));
        }
        // The union equals the union of single-directive matches.
        let mut union = BTreeSet::new();
        for d in &both {
            let (ids, fallback) = retained(&doc, std::slice::from_ref(d));
            if !fallback {
                union.extend(ids);
            }
        }
        if large_fallback {
            prop_assert!(union.is_empty());
        } else {
            prop_assert_eq!(union, large);
        }
    }

    #[test]
    fn filter_output_is_ordered_subsequence(decisions in prop::collection::vec(any::<bool>(), 0..12)) {
        let chunks: Vec<Chunk> = decisions
            .iter()
            .enumerate()
            .map(|(i, keep)| chunk(i, format!("chunk {i} {}", if *keep { "KEEPME" } else { "DROPME" })))
            .collect();
        let script = Script::new("f")
            .with_rule(ScriptRule {
                contains: Some(OneOrMany::One("DROPME".into())),
                then: ScriptReply::text("DISCARD"),
                ..ScriptRule::default()
            })
            .default_reply(ScriptReply::text("KEEP"));
        let router = router_with_filter(script);
        let trace = Trace::new();
        let filters = vec![FilterDirective { raw_text: "boilerplate".into() }];
        let out = runtime().block_on(filter_chunks(&chunks, &filters, "q", &router, &trace));
        let kept: Vec<usize> = out.kept.iter().map(|c| c.index).collect();
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let expected: Vec<usize> = if !decisions.is_empty() && decisions.iter().all(|k| !k) {
            (0..decisions.len()).collect()
        } else {
            (0..decisions.len()).filter(|&i| decisions[i]).collect()
        };
        prop_assert_eq!(kept, expected);
        prop_assert_eq!(out.decisions.len(), chunks.len());
    }

    #[test]
    fn negative_directives_only_lower_scores(
        response in prop::collection::vec(0.0..1.0f64, 8),
        pos in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 8), 0..4),
        neg in prop::collection::vec(0.0..1.0f64, 8),
    ) {
        let r = nonneg_vector(response);
        let base: Vec<(ValidationDirective, EmbeddingVector)> = pos
            .into_iter()
            .enumerate()
            .map(|(i, v)| (ValidationDirective::positive(format!("p{i}")), nonneg_vector(v)))
            .collect();
        let mut with_negative = base.clone();
        with_negative.push((ValidationDirective::negative("n"), nonneg_vector(neg)));
        let before = score_against("r", &r, &base).score;
        let after = score_against("r", &r, &with_negative).score;
        prop_assert!(after <= before + 1e-12);
        let term = with_negative.len() - 1;
        let terms = score_against("r", &r, &with_negative).per_directive_terms;
        prop_assert!(terms[term].contribution <= 0.0);
    }

    #[test]
    fn validation_ranking_is_shift_invariant(cands in arb_candidates(), shift in -10.0..10.0f64) {
        let shifted: Vec<CandidateResponse> = cands
            .iter()
            .cloned()
            .map(|mut c| {
                if let Some(v) = c.validation.as_mut() {
                    v.score += shift;
                }
                c
            })
            .collect();
        let a: Vec<String> = rank_by_validation(&cands, 100).into_iter().map(|c| c.response_id).collect();
        let b: Vec<String> = rank_by_validation(&shifted, 100).into_iter().map(|c| c.response_id).collect();
        // Rounding can perturb near-ties, so only a clear leader is compared.
        if a.len() >= 2 {
            let top = cands.iter().find(|c| c.response_id == a[0]).unwrap().score();
            let second = cands.iter().find(|c| c.response_id == a[1]).unwrap().score();
            if top - second > 1e-9 {
                prop_assert_eq!(&a[0], &b[0]);
            }
        } else {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rankings_permute_non_refusals(cands in arb_candidates(), k in 1usize..20) {
        let answering: BTreeSet<String> = cands.iter().filter(|c| !c.is_refusal).map(|c| c.response_id.clone()).collect();
        for ranked in [rank_by_validation(&cands, k), rank_by_confidence(&cands, k)] {
            let ids: Vec<String> = ranked.iter().map(|c| c.response_id.clone()).collect();
            let set: BTreeSet<String> = ids.iter().cloned().collect();
            prop_assert_eq!(set.len(), ids.len());
            prop_assert_eq!(ids.len(), answering.len().min(k));
            prop_assert!(set.is_subset(&answering));
        }
        let by_score = rank_by_validation(&cands, k);
        prop_assert!(by_score.windows(2).all(|w| w[0].score() >= w[1].score()));
        let by_conf = rank_by_confidence(&cands, k);
        let confs: Vec<Option<f64>> = by_conf.iter().map(|c| c.confidence).collect();
        let first_none = confs.iter().position(Option::is_none).unwrap_or(confs.len());
        prop_assert!(confs[first_none..].iter().all(Option::is_none));
        prop_assert!(confs[..first_none].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn numeric_match_is_sign_symmetric(x in 0.01..1e6f64, g in 0.01..1e6f64) {
        let pos = format!("{x:.2}");
        let neg = format!("-{x:.2}");
        prop_assert_eq!(numeric_match(&pos, g, 0.05), numeric_match(&neg, -g, 0.05));
        prop_assert_eq!(extract_last_number(&neg), extract_last_number(&pos).map(|v| -v));
    }

    #[test]
    fn cost_ignores_ledger_order(
        entries in prop::collection::vec((0..6usize, 0..3usize, 0..100_000u64, 0..5_000u64), 0..40),
        seed in any::<u64>(),
    ) {
        let models = ["a", "b", "c"];
        let mut prices = PriceTable::default();
        prices.insert("a", ModelPrice::new(3.0, 15.0));
        prices.insert("b", ModelPrice::new(0.04, 0.04));
        prices.insert("c", ModelPrice::new(0.02, 0.0));
        let ledger: Vec<(CostStage, TokenUsage)> = entries
            .iter()
            .map(|(s, m, i, o)| (CostStage::ALL[*s], TokenUsage::new(models[*m], *i, *o)))
            .collect();
        let mut shuffled = ledger.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = compute_cost(ledger.iter().map(|(s, u)| (*s, u)), &prices).unwrap();
        let b = compute_cost(shuffled.iter().map(|(s, u)| (*s, u)), &prices).unwrap();
        prop_assert_eq!(&a, &b);
        let by_stage: f64 = a.dollars_by_stage.values().sum();
        prop_assert!((by_stage - a.dollars_total).abs() <= 1e-9 * a.dollars_total.max(1.0));
    }

    #[test]
    fn directive_sets_round_trip(
        s in prop::collection::vec("[a-z ]{1,12}", 0..4),
        f in prop::collection::vec("[a-zA-Z ,]{1,20}", 0..4),
        v in prop::collection::vec(("[a-z ]{1,12}", any::<bool>()), 0..4),
    ) {
        let set = DirectiveSet::new(s, f, v);
        let json = set.to_json();
        let back: DirectiveSet = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &set);
        let reparsed = parse_directive_reply(&json).unwrap();
        prop_assert_eq!(reparsed, set);
    }

    #[test]
    fn extraction_never_panics(text in "\\PC{0,200}") {
        let _ = parse_directive_reply(&text);
        let _ = extract_by_rules(&text);
    }
}
