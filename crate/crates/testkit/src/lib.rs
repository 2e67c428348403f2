//! Synthetic financial filings with scripted model backends.
//!
//! Each filing has 200 elements: a table of contents, legal disclaimers,
//! section headers, footnotes, filler paragraphs and tables, and eight fact
//! tables holding 2021/2022 values for four pairs of easily confused metrics
//! ("diluted computations" vs "basic computations", ...). The scripted
//! expensive model answers a "change in X" question correctly from X's
//! table, answers with the confusable metric's change from the partner's
//! table, and refuses everywhere else. The scripted filter discards disclaimer
//! and contents chunks that hold no fact table.
//!
//! Filler vocabulary is chosen so that no filler word shares a hash-embedder
//! bucket with any question word; chunk selection is then driven by the fact
//! tables alone.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use focusqa_core::backends::mock::{
    OneOrMany, Scenario, ScenarioBackends, Script, ScriptReply, ScriptRule,
};
use focusqa_core::backends::rules::extract_by_rules;
use focusqa_core::backends::{HashEmbedder, REFUSAL_SENTINEL};
use focusqa_core::document::{ElementInput, ElementKind, StructuredDocument};
use focusqa_core::evaluation::{AnswerType, GoldAnswer, QuerySpec};
use focusqa_core::{Engine, MemoryStore};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

pub mod oracle;

pub const FILING_ELEMENTS: usize = 200;
pub const EXPENSIVE_MODEL: &str = "mock-llm";
pub const FILTER_MODEL: &str = "mock-filter";

pub const EPS_QUESTION: &str = "What was the change in diluted computations from 2021 to 2022?";
pub const EPS_KNOWLEDGE: &str =
    "Focus on tables. Ignore legal disclaimers. Report diluted computations, NOT basic computations.";
/// Points structural pruning at footnotes, which hold no answer.
pub const WRONG_STRUCTURE_KNOWLEDGE: &str =
    "Look in footnotes. Ignore legal disclaimers. Report diluted computations, NOT basic computations.";

/// Metric pairs; each is the other's confusable.
pub const METRIC_PAIRS: [(&str, &str); 4] = [
    ("diluted computations", "basic computations"),
    ("net revenue", "gross revenue"),
    ("free cash flow", "operating cash flow"),
    ("total assets", "total liabilities"),
];

/// Element positions of the eight fact tables, in metric order
/// (pair firsts, then pair seconds).
pub const FACT_POSITIONS: [usize; 8] = [25, 45, 65, 85, 125, 145, 170, 185];
const DISCLAIMER_TABLES: [usize; 3] = [10, 130, 190];
const FILLER_TABLES: [usize; 3] = [30, 70, 150];
const FOOTNOTES: [usize; 5] = [12, 52, 92, 132, 172];

const CANDIDATE_WORDS: [&str; 48] = [
    "ledger",
    "accrual",
    "tranche",
    "covenant",
    "amortization",
    "depreciation",
    "liquidity",
    "solvency",
    "dividend",
    "equity",
    "warrant",
    "debenture",
    "escrow",
    "lien",
    "tariff",
    "subsidiary",
    "consolidation",
    "hedging",
    "derivative",
    "goodwill",
    "impairment",
    "inventory",
    "receivable",
    "payable",
    "accretion",
    "annuity",
    "coupon",
    "maturity",
    "principal",
    "yield",
    "arbitrage",
    "collateral",
    "custodian",
    "fiduciary",
    "indemnity",
    "jurisdiction",
    "leasehold",
    "mortgage",
    "novation",
    "obligation",
    "pension",
    "quorum",
    "remittance",
    "settlement",
    "trustee",
    "underwriting",
    "vesting",
    "audit",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub metric: &'static str,
    pub confusable: &'static str,
    pub v2021: f64,
    pub v2022: f64,
    /// The scripted model answers this fact with high confidence.
    pub confident: bool,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

impl Fact {
    pub fn title(&self) -> String {
        format!("{} table", capitalize(self.metric))
    }

    /// Text that only this fact's table contains.
    pub fn marker(&self) -> String {
        format!("{}. Fiscal year 2021: {:.2}.", self.title(), self.v2021)
    }

    pub fn delta(&self) -> f64 {
        round2(self.v2022 - self.v2021)
    }

    pub fn answer(&self) -> String {
        format!(
            "The change in {} from 2021 to 2022 was {:.2}.",
            self.metric,
            self.delta()
        )
    }

    pub fn question(&self) -> String {
        format!("What was the change in {} from 2021 to 2022?", self.metric)
    }

    pub fn knowledge(&self) -> String {
        format!(
            "Look in tables. Ignore legal disclaimers and table of contents. Report {}, NOT {}.",
            self.metric, self.confusable
        )
    }

    pub fn logprobs(&self) -> Vec<f64> {
        let lp = if self.confident { -0.05 } else { -0.7 };
        vec![lp; 4]
    }
}

pub struct Filing {
    pub doc: StructuredDocument,
    pub facts: Vec<Fact>,
}

impl Filing {
    pub fn fact(&self, metric: &str) -> &Fact {
        self.facts
            .iter()
            .find(|f| f.metric == metric)
            .expect("known metric")
    }
}

fn bucket_of(embedder: &HashEmbedder, word: &str) -> usize {
    let v = embedder.embed_sync(word).expect("nonempty word");
    v.values()
        .iter()
        .position(|x| *x > 0.0)
        .expect("one bucket")
}

/// Buckets used by every question and answer the scripts know about.
fn reserved_buckets(embedder: &HashEmbedder) -> BTreeSet<usize> {
    let mut text = String::from("what was the change in from 2021 to 2022 fiscal year table");
    for (a, b) in METRIC_PAIRS {
        text.push(' ');
        text.push_str(a);
        text.push(' ');
        text.push_str(b);
    }
    text.split_whitespace()
        .map(|w| bucket_of(embedder, w))
        .collect()
}

/// Filler words that share no embedding bucket with question words.
pub fn filler_vocabulary() -> Vec<&'static str> {
    let embedder = HashEmbedder::default();
    let reserved = reserved_buckets(&embedder);
    CANDIDATE_WORDS
        .into_iter()
        .filter(|w| !reserved.contains(&bucket_of(&embedder, w)))
        .collect()
}

/// Picks `n` candidate words whose buckets avoid every token of `texts`
/// and each other.
pub fn disjoint_words(texts: &[&str], n: usize) -> Vec<&'static str> {
    let embedder = HashEmbedder::default();
    let mut used: BTreeSet<usize> = texts
        .iter()
        .flat_map(|t| {
            t.split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
        })
        .map(|w| bucket_of(&embedder, &w.to_lowercase()))
        .collect();
    let mut out = Vec::new();
    for w in CANDIDATE_WORDS {
        let b = bucket_of(&embedder, w);
        if used.insert(b) {
            out.push(w);
            if out.len() == n {
                break;
            }
        }
    }
    assert_eq!(out.len(), n, "not enough disjoint words");
    out
}

fn filler(rng: &mut StdRng, vocab: &[&str], bytes: usize) -> String {
    let mut s = String::with_capacity(bytes + 16);
    while s.len() < bytes {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(vocab[rng.gen_range(0..vocab.len())]);
    }
    s
}

fn padded_rows(rng: &mut StdRng, vocab: &[&str], bytes: usize) -> String {
    let mut s = String::new();
    let mut row = 1;
    while s.len() < bytes {
        let word = vocab[rng.gen_range(0..vocab.len())];
        s.push_str(&format!(
            "Row {row}: {word} {}.{:02}\n",
            rng.gen_range(1..999),
            rng.gen_range(0..100)
        ));
        row += 1;
    }
    s
}

fn draw_facts(rng: &mut StdRng) -> Vec<Fact> {
    loop {
        let mut facts = Vec::with_capacity(8);
        for (side, (pair, _)) in [0usize, 1]
            .iter()
            .flat_map(|s| METRIC_PAIRS.iter().enumerate().map(move |p| (*s, p)))
        {
            let (a, b) = METRIC_PAIRS[pair];
            let (metric, confusable) = if side == 0 { (a, b) } else { (b, a) };
            let v2021 = round2(rng.gen_range(1.0..100.0));
            let v2022 = round2(v2021 * (1.0 + rng.gen_range(0.05..0.45)));
            facts.push(Fact {
                metric,
                confusable,
                v2021,
                v2022,
                confident: (side == 0) == (pair % 2 == 1),
            });
        }
        let distinct = (0..4).all(|p| {
            let (d1, d2) = (facts[p].delta(), facts[p + 4].delta());
            d1 != 0.0 && d2 != 0.0 && (d1 - d2).abs() > 0.1 * d1.abs().max(d2.abs())
        });
        if distinct {
            return facts;
        }
    }
}

/// A deterministic 200-element filing.
pub fn filing(doc_id: &str, seed: u64) -> Filing {
    let mut rng = StdRng::seed_from_u64(seed);
    let vocab = filler_vocabulary();
    let facts = draw_facts(&mut rng);
    let mut elements = Vec::with_capacity(FILING_ELEMENTS);
    let mut section = String::new();
    for i in 0..FILING_ELEMENTS {
        let id = format!("e{i:03}");
        let element = if i == 0 {
            ElementInput::new(
                id,
                ElementKind::Other,
                "TABLE OF CONTENTS\nItem 1 Business page 3\nItem 1A Risk Factors page 9\nItem 7 Management Discussion and Analysis page 41\nItem 8 Financial Statements page 63",
            )
            .with_label("Table of Contents")
        } else if (1..=3).contains(&i) {
            let body = filler(&mut rng, &vocab, 1600);
            ElementInput::new(
                id,
                ElementKind::Paragraph,
                format!("LEGAL DISCLAIMER. {body}"),
            )
            .with_label("Forward-looking statements")
        } else if i % 20 == 4 {
            let n = i / 20 + 1;
            let label = if i == 104 {
                "MD&A".to_string()
            } else {
                format!("Item {n}")
            };
            section = id.clone();
            ElementInput::new(id, ElementKind::Section, format!("Item {n}. {}", label))
                .with_label(label)
        } else if let Some(k) = FACT_POSITIONS.iter().position(|p| *p == i) {
            let f = &facts[k];
            let rows = padded_rows(&mut rng, &vocab, 2200);
            ElementInput::new(
                id,
                ElementKind::Table,
                format!("{} Fiscal year 2022: {:.2}.\n{rows}", f.marker(), f.v2022),
            )
            .with_label(f.title())
        } else if DISCLAIMER_TABLES.contains(&i) {
            let body = filler(&mut rng, &vocab, 14000);
            ElementInput::new(
                id,
                ElementKind::Table,
                format!("EXHIBIT INDEX. LEGAL DISCLAIMER: {body}"),
            )
            .with_label("Exhibit index")
        } else if FILLER_TABLES.contains(&i) {
            let rows = padded_rows(&mut rng, &vocab, 2400);
            ElementInput::new(id, ElementKind::Table, rows).with_label("Segment data")
        } else if FOOTNOTES.contains(&i) {
            let body = filler(&mut rng, &vocab, 300);
            ElementInput::new(id, ElementKind::Footnote, format!("Note {i}. {body}"))
                .with_parent(section.clone())
        } else {
            let len = rng.gen_range(1200..2400);
            let mut p =
                ElementInput::new(id, ElementKind::Paragraph, filler(&mut rng, &vocab, len));
            if !section.is_empty() {
                p = p.with_parent(section.clone());
            }
            p
        };
        elements.push(element);
    }
    let doc = StructuredDocument::new(doc_id, elements).expect("generated filing is valid");
    Filing { doc, facts }
}

fn contains(parts: &[String]) -> Option<OneOrMany> {
    Some(OneOrMany::Many(parts.to_vec()))
}

/// The directive JSON a faithful extractor returns for `knowledge`.
pub fn extraction_reply(knowledge: &str) -> String {
    let (s, f, v) = extract_by_rules(knowledge);
    let v: Vec<_> = v
        .into_iter()
        .map(|(text, negated)| json!({"text": text, "negated": negated}))
        .collect();
    json!({"structural": s, "filters": f, "validations": v}).to_string()
}

/// Scripted backends for `filings`, answering extraction prompts for each
/// of `knowledge`.
pub fn scenario(filings: &[&Filing], knowledge: &[&str]) -> Scenario {
    let mut expensive =
        Script::new(EXPENSIVE_MODEL).default_reply(ScriptReply::text(REFUSAL_SENTINEL));
    for k in knowledge {
        expensive = expensive.with_rule(ScriptRule {
            contains: contains(&["<knowledge>".to_string(), k.to_string()]),
            then: ScriptReply::text(extraction_reply(k)),
            ..ScriptRule::default()
        });
    }
    for filing in filings {
        for fact in &filing.facts {
            let asked = format!("change in {} from", fact.metric);
            let partner = filing.fact(fact.confusable);
            for source in [fact, partner] {
                expensive = expensive.with_rule(ScriptRule {
                    contains: contains(&[asked.clone(), source.marker()]),
                    then: ScriptReply {
                        logprobs: Some(source.logprobs()),
                        ..ScriptReply::text(source.answer())
                    },
                    ..ScriptRule::default()
                });
            }
        }
    }

    let mut filter = Script::new(FILTER_MODEL).default_reply(ScriptReply::text("KEEP"));
    for marker in ["LEGAL DISCLAIMER", "TABLE OF CONTENTS"] {
        filter = filter.with_rule(ScriptRule {
            contains: Some(OneOrMany::One(marker.into())),
            not_contains: Some(OneOrMany::One("Fiscal year".into())),
            then: ScriptReply::text("DISCARD"),
            ..ScriptRule::default()
        });
    }
    Scenario::new(expensive).with_filter(filter)
}

/// The single-filing scenario for the diluted-computations question.
pub fn eps_setup() -> (Filing, Scenario) {
    let f = filing("acme-10k-2022", 7);
    let s = scenario(&[&f], &[EPS_KNOWLEDGE, WRONG_STRUCTURE_KNOWLEDGE]);
    (f, s)
}

pub fn engine(docs: &[&StructuredDocument], scenario: &Scenario) -> (Engine, ScenarioBackends) {
    let store = MemoryStore::new();
    for d in docs {
        store.insert((*d).clone());
    }
    let backends = scenario.build().expect("valid scenario");
    let engine = Engine::new(
        Arc::new(store),
        Arc::new(backends.router()),
        scenario.price_table(),
    );
    (engine, backends)
}

pub struct Corpus {
    pub filings: Vec<Filing>,
    pub queries: Vec<QuerySpec>,
    pub scenario: Scenario,
}

/// Three filings and twenty "change in X" queries with domain knowledge.
pub fn corpus() -> Corpus {
    let filings = vec![
        filing("acme-10k-2022", 7),
        filing("globex-10k-2022", 11),
        filing("initech-10k-2022", 13),
    ];
    let per_doc = [8usize, 8, 4];
    let mut queries = Vec::new();
    for (filing, n) in filings.iter().zip(per_doc) {
        for fact in filing.facts.iter().take(n) {
            queries.push(QuerySpec {
                query_id: format!("q{:02}", queries.len() + 1),
                doc_id: filing.doc.doc_id.clone(),
                question: fact.question(),
                domain_knowledge: fact.knowledge(),
                gold: GoldAnswer::Number(fact.delta()),
                answer_type: AnswerType::Numeric,
                directives: None,
            });
        }
    }
    let knowledge: Vec<String> = queries.iter().map(|q| q.domain_knowledge.clone()).collect();
    let knowledge: Vec<&str> = knowledge.iter().map(String::as_str).collect();
    let refs: Vec<&Filing> = filings.iter().collect();
    let scenario = scenario(&refs, &knowledge);
    Corpus {
        filings,
        queries,
        scenario,
    }
}

pub struct CorpusFiles {
    pub docs: Vec<PathBuf>,
    pub queries: PathBuf,
    pub scenario: PathBuf,
}

/// Writes documents, queries and scenario as JSON files under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> std::io::Result<CorpusFiles> {
    std::fs::create_dir_all(dir.join("docs"))?;
    let mut docs = Vec::new();
    for f in &corpus.filings {
        let path = dir.join("docs").join(format!("{}.json", f.doc.doc_id));
        std::fs::write(&path, serde_json::to_string_pretty(&f.doc.to_input())?)?;
        docs.push(path);
    }
    let queries = dir.join("queries.json");
    std::fs::write(&queries, serde_json::to_string_pretty(&corpus.queries)?)?;
    let scenario = dir.join("scenario.json");
    std::fs::write(&scenario, serde_json::to_string_pretty(&corpus.scenario)?)?;
    Ok(CorpusFiles {
        docs,
        queries,
        scenario,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use focusqa_core::chunking::chunk_full_document;

    #[test]
    fn filings_are_deterministic_and_sized() {
        let a = filing("x", 5);
        assert_eq!(a.doc, filing("x", 5).doc);
        assert_ne!(a.doc, filing("x", 6).doc);
        assert_eq!(a.doc.elements.len(), FILING_ELEMENTS);
    }

    #[test]
    fn confusable_facts_never_share_a_chunk() {
        for seed in [7, 11, 13] {
            let f = filing("x", seed);
            let chunks = chunk_full_document(&f.doc, 4000).unwrap();
            for fact in &f.facts {
                let holders: Vec<_> = chunks
                    .iter()
                    .filter(|c| c.text.contains(&fact.marker()))
                    .collect();
                assert_eq!(holders.len(), 1);
                assert!(!holders[0].text.contains(&f.fact(fact.confusable).marker()));
                let d1 = fact.delta();
                let d2 = f.fact(fact.confusable).delta();
                assert!((d1 - d2).abs() > 0.1 * d1.abs().max(d2.abs()));
            }
        }
    }

    #[test]
    fn filler_avoids_question_buckets() {
        let embedder = HashEmbedder::default();
        let reserved = reserved_buckets(&embedder);
        let vocab = filler_vocabulary();
        assert!(vocab.len() >= 20);
        assert!(vocab
            .iter()
            .all(|w| !reserved.contains(&bucket_of(&embedder, w))));
    }

    #[test]
    fn extraction_reply_parses() {
        let d = focusqa_core::directives::parse_directive_reply(&extraction_reply(EPS_KNOWLEDGE))
            .unwrap();
        assert_eq!(d.structural.len(), 1);
        assert_eq!(d.validations.len(), 2);
    }
}
