//! Independent reference implementations and the randomized comparisons
//! that run the library against them. Each check returns a one-line summary
//! on success and the first mismatch on failure.

use std::sync::Arc;

use focusqa_core::backends::mock::{Script, ScriptedBackend};
use focusqa_core::backends::{HashEmbedder, ModelRouter};
use focusqa_core::chunking::chunk_full_document;
use focusqa_core::directives::{Polarity, ValidationDirective};
use focusqa_core::document::{ElementInput, ElementKind, StructuredDocument};
use focusqa_core::evaluation::{mrr_at_k, numeric_match, AnswerType, EvalRecord};
use focusqa_core::operators::validate_score;
use focusqa_core::trace::Trace;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const KINDS: [ElementKind; 4] = [
    ElementKind::Paragraph,
    ElementKind::Table,
    ElementKind::Section,
    ElementKind::Footnote,
];

fn random_text(rng: &mut StdRng, bytes: usize) -> String {
    let mut s = String::new();
    while s.len() < bytes {
        if !s.is_empty() {
            s.push(if rng.gen_bool(0.1) { '\n' } else { ' ' });
        }
        // Occasional long runs force hard cuts.
        let len = if rng.gen_bool(0.03) {
            rng.gen_range(40..400)
        } else {
            rng.gen_range(1..10)
        };
        s.extend((0..len).map(|_| rng.gen_range(b'a'..=b'z') as char));
    }
    s.truncate(bytes);
    s.trim_end().to_string()
}

fn tokens(s: &str) -> usize {
    s.len().div_ceil(4)
}

/// A reference chunk: source element ids, text and token count.
pub type RefChunk = (Vec<String>, String, usize);

/// Greedy packing written from the contract: pieces join a chunk until the
/// budget would be exceeded; tables stay whole; oversized non-tables start a
/// fresh chunk and are cut at the last whitespace within `budget * 4` bytes.
pub fn reference_chunks(
    elements: &[(String, ElementKind, String)],
    budget: usize,
) -> Vec<RefChunk> {
    let mut out = Vec::new();
    let mut cur: Vec<(String, String)> = Vec::new();
    let mut cur_tokens = 0;
    let flush =
        |cur: &mut Vec<(String, String)>, cur_tokens: &mut usize, out: &mut Vec<RefChunk>| {
            let mut ids: Vec<String> = Vec::new();
            for (id, _) in cur.iter() {
                if ids.last() != Some(id) {
                    ids.push(id.clone());
                }
            }
            let text = cur
                .iter()
                .map(|(_, t)| t.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            out.push((ids, text, *cur_tokens));
            cur.clear();
            *cur_tokens = 0;
        };
    for (id, kind, text) in elements {
        let mut pieces = Vec::new();
        if tokens(text) > budget && *kind != ElementKind::Table {
            if !cur.is_empty() {
                flush(&mut cur, &mut cur_tokens, &mut out);
            }
            let mut rest = text.as_str();
            while !rest.is_empty() {
                if tokens(rest) <= budget {
                    pieces.push(rest.to_string());
                    break;
                }
                let limit = budget * 4;
                let cut = rest.as_bytes()[..limit]
                    .iter()
                    .rposition(|b| b.is_ascii_whitespace())
                    .map_or(limit, |p| p + 1);
                pieces.push(rest[..cut].to_string());
                rest = &rest[cut..];
            }
        } else {
            pieces.push(text.clone());
        }
        for p in pieces {
            let t = tokens(&p);
            if !cur.is_empty() && cur_tokens + t > budget {
                flush(&mut cur, &mut cur_tokens, &mut out);
            }
            cur_tokens += t;
            cur.push((id.clone(), p));
        }
    }
    if !cur.is_empty() {
        flush(&mut cur, &mut cur_tokens, &mut out);
    }
    out
}

/// Chunker against the reference packer, plus table-integrity and
/// coverage/order checks.
pub fn check_chunker(cases: usize, seed: u64) -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut total_chunks = 0;
    for case in 0..cases {
        let n = rng.gen_range(1..25);
        let budget = rng.gen_range(5..150);
        let elements: Vec<(String, ElementKind, String)> = (0..n)
            .map(|i| {
                let kind = KINDS[rng.gen_range(0..KINDS.len())];
                let len = rng.gen_range(1..budget * 4 * 3);
                let mut text = random_text(&mut rng, len);
                if text.is_empty() {
                    text.push('x');
                }
                (format!("e{i}"), kind, text)
            })
            .collect();
        let doc = StructuredDocument::new(
            "d",
            elements
                .iter()
                .map(|(id, k, t)| ElementInput::new(id.clone(), *k, t.clone()))
                .collect(),
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let chunks = chunk_full_document(&doc, budget).map_err(|e| format!("case {case}: {e}"))?;
        let expected = reference_chunks(&elements, budget);
        if chunks.len() != expected.len() {
            return Err(format!(
                "case {case}: {} chunks, reference {}",
                chunks.len(),
                expected.len()
            ));
        }
        for (i, (chunk, (ids, text, toks))) in chunks.iter().zip(&expected).enumerate() {
            let got: Vec<&str> = chunk
                .source_element_ids
                .iter()
                .map(|e| e.as_str())
                .collect();
            if got != *ids || &chunk.text != text || chunk.token_count != *toks || chunk.index != i
            {
                return Err(format!("case {case} chunk {i} differs from reference"));
            }
        }
        for (id, kind, text) in &elements {
            if *kind == ElementKind::Table {
                let holders: Vec<_> = chunks
                    .iter()
                    .filter(|c| c.source_element_ids.iter().any(|e| e.as_str() == id))
                    .collect();
                if holders.len() != 1 || !holders[0].text.contains(text.as_str()) {
                    return Err(format!("case {case}: table {id} split"));
                }
            }
        }
        let mut order: Vec<&str> = chunks
            .iter()
            .flat_map(|c| c.source_element_ids.iter().map(|e| e.as_str()))
            .collect();
        order.dedup();
        let all: Vec<&str> = elements.iter().map(|(id, _, _)| id.as_str()).collect();
        if order != all {
            return Err(format!("case {case}: coverage or order"));
        }
        total_chunks += chunks.len();
    }
    Ok(format!(
        "{cases} cases, {total_chunks} chunks identical to the reference packer"
    ))
}

/// Feature hashing written out longhand: FNV-1a over lowercased alphanumeric
/// runs into 256 count buckets.
pub fn reference_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 256];
    for token in text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut h: u64 = 14695981039346656037;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        v[(h % 256) as usize] += 1.0;
    }
    v
}

pub fn reference_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

const WORDS: [&str; 16] = [
    "diluted",
    "basic",
    "eps",
    "revenue",
    "net",
    "gross",
    "cash",
    "flow",
    "assets",
    "liabilities",
    "per",
    "share",
    "income",
    "margin",
    "2022",
    "total",
];

fn phrase(rng: &mut StdRng, max: usize) -> String {
    let n = rng.gen_range(1..=max);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `validate_score` against the positive-minus-negative cosine sum.
pub async fn check_validation(cases: usize, seed: u64, tolerance: f64) -> Result<String, String> {
    let router = ModelRouter::new(
        Arc::new(ScriptedBackend::new(Script::new("m"))),
        Arc::new(ScriptedBackend::new(Script::new("f"))),
        Arc::new(HashEmbedder::default()),
    );
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let response = phrase(&mut rng, 12);
        let directives: Vec<ValidationDirective> = (0..rng.gen_range(1..6))
            .map(|_| {
                let text = phrase(&mut rng, 3);
                if rng.gen_bool(0.5) {
                    ValidationDirective::positive(text)
                } else {
                    ValidationDirective::negative(text)
                }
            })
            .collect();
        let r = reference_embed(&response);
        let mut expected = 0.0;
        for d in &directives {
            let s = reference_cosine(&r, &reference_embed(&d.raw_text));
            if d.polarity == Polarity::Negative {
                expected -= s;
            } else {
                expected += s;
            }
        }
        let trace = Trace::new();
        let got = validate_score("r", &response, &directives, &router, &trace)
            .await
            .map_err(|e| format!("case {case}: {e}"))?;
        let err = (got.score - expected).abs();
        if err >= tolerance {
            return Err(format!(
                "case {case}: {} vs reference {expected}",
                got.score
            ));
        }
        if got.per_directive_terms.len() != directives.len() {
            return Err(format!("case {case}: term count"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} cases, max |error| {worst:.1e}"))
}

/// `mrr_at_k` against a brute-force scorer, with MRR@1 <= MRR@3 <= MRR@5 on
/// every set.
pub fn check_mrr(sets: usize, seed: u64, tolerance: f64) -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    for case in 0..sets {
        let n = rng.gen_range(1..30);
        let mut records = Vec::new();
        let mut ranks: Vec<Option<usize>> = Vec::new();
        for q in 0..n {
            let gold: i64 = rng.gen_range(1..10_000) * if rng.gen_bool(0.3) { -1 } else { 1 };
            let count = rng.gen_range(0..8);
            let mut answers = Vec::new();
            let mut first = None;
            for i in 0..count {
                let correct = rng.gen_bool(0.25);
                let value = if correct { gold } else { gold * 3 };
                if correct && first.is_none() {
                    first = Some(i + 1);
                }
                answers.push(format!("The value was {value}."));
            }
            ranks.push(first);
            records.push(EvalRecord {
                query_id: format!("q{q}"),
                gold_answer: gold.to_string(),
                answer_type: AnswerType::Numeric,
                answers,
                error: None,
            });
        }
        let mut previous = 0.0;
        for k in [1, 3, 5] {
            let expected = ranks
                .iter()
                .map(|r| match r {
                    Some(r) if *r <= k => 1.0 / *r as f64,
                    _ => 0.0,
                })
                .sum::<f64>()
                / n as f64;
            let got = mrr_at_k(&records, k).map_err(|e| format!("case {case}: {e}"))?;
            if (got - expected).abs() >= tolerance {
                return Err(format!("case {case} k {k}: {got} vs reference {expected}"));
            }
            if got < previous {
                return Err(format!("case {case}: MRR@{k} below the previous cutoff"));
            }
            previous = got;
        }
    }
    Ok(format!("{sets} record sets match, monotone in k"))
}

/// Relative-tolerance edges: 5% is inclusive on both sides, a zero gold
/// needs an exact zero.
pub const NUMERIC_BOUNDARIES: [(&str, f64, bool); 10] = [
    ("105", 100.0, true),
    ("95", 100.0, true),
    ("105.01", 100.0, false),
    ("94.99", 100.0, false),
    ("-105", -100.0, true),
    ("(1,050)", -1000.0, true),
    ("0", 0.0, true),
    ("0.0001", 0.0, false),
    ("The change was 0.21.", 0.2, true),
    ("no number", 1.0, false),
];

pub fn check_numeric_boundaries() -> Result<String, String> {
    for (text, gold, expected) in NUMERIC_BOUNDARIES {
        if numeric_match(text, gold, 0.05) != expected {
            return Err(format!(
                "numeric_match({text:?}, {gold}) should be {expected}"
            ));
        }
    }
    Ok(format!("{} boundary cases", NUMERIC_BOUNDARIES.len()))
}
