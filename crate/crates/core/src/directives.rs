//! Directive extraction: free-form domain knowledge compiled into
//! structural, filter and validation directives.
//!
//! The wire schema is
//! `{"structural":[string], "filters":[string], "validations":[{"text":string,"negated":bool}]}`.
//! An `extensions` key is accepted and ignored.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ModelRouter, Role};
use crate::document::ElementKind;
use crate::trace::{CostStage, Trace};

pub const EXTRACTION_TEMPLATE_VERSION: &str = "v1";
const EXTRACTION_TEMPLATE: &str = include_str!("../resources/extract_directives.v1.txt");
const REASK_TEMPLATE: &str = include_str!("../resources/reask_directives.v1.txt");
const FILTER_TEMPLATE: &str = include_str!("../resources/filter_chunk.v1.txt");

/// Schema re-asks allowed after the first extraction reply.
pub const MAX_REASKS: usize = 2;

/// Leading negation markers, matched case-insensitively. Longer markers
/// come first so `do not include` is not read as `do ...`.
pub const NEGATION_MARKERS: [&str; 6] = [
    "do not include ",
    "don't include ",
    "avoid ",
    "never ",
    "NOT ",
    "not ",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralDirective {
    pub raw_text: String,
    pub target_kind: Option<ElementKind>,
}

impl StructuralDirective {
    /// Sets `target_kind` when the text names an element kind generically
    /// ("table", "tables", "the footnotes", "text").
    pub fn new(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let target_kind = generic_kind(&raw_text);
        Self {
            raw_text,
            target_kind,
        }
    }
}

fn generic_kind(text: &str) -> Option<ElementKind> {
    let lower = text.trim().to_lowercase();
    let mut word = lower.as_str();
    for article in ["the ", "a ", "an ", "all "] {
        if let Some(rest) = word.strip_prefix(article) {
            word = rest.trim_start();
        }
    }
    match word {
        "text" | "text paragraphs" | "paragraphs" | "paragraph" | "prose" => {
            Some(ElementKind::Paragraph)
        }
        "chapter" | "chapters" => Some(ElementKind::Section),
        _ => ElementKind::from_tag(word)
            .or_else(|| word.strip_suffix('s').and_then(ElementKind::from_tag)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDirective {
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidationDirective {
    /// Stored without its negation marker; `polarity` carries it.
    pub raw_text: String,
    pub polarity: Polarity,
}

impl ValidationDirective {
    pub fn positive(text: impl Into<String>) -> Self {
        Self {
            raw_text: text.into(),
            polarity: Polarity::Positive,
        }
    }

    pub fn negative(text: impl Into<String>) -> Self {
        Self {
            raw_text: text.into(),
            polarity: Polarity::Negative,
        }
    }
}

/// Strips every leading negation marker. Returns the remaining text and
/// whether any marker was found.
pub fn strip_negation(text: &str) -> (&str, bool) {
    let mut rest = text.trim();
    let mut negated = false;
    'outer: loop {
        for marker in NEGATION_MARKERS {
            if rest
                .get(..marker.len())
                .is_some_and(|p| p.eq_ignore_ascii_case(marker))
            {
                rest = rest[marker.len()..].trim_start();
                negated = true;
                continue 'outer;
            }
        }
        return (rest, negated);
    }
}

/// Splits raw `(text, negated)` pairs into positive and negative directives.
/// A directive is negative when flagged or when its text leads with a
/// negation marker; the marker is stripped. Empty texts are dropped.
pub fn partition_validation<I, S>(raw: I) -> (Vec<ValidationDirective>, Vec<ValidationDirective>)
where
    I: IntoIterator<Item = (S, bool)>,
    S: AsRef<str>,
{
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (text, flagged) in raw {
        let (stripped, marked) = strip_negation(text.as_ref());
        if stripped.is_empty() {
            continue;
        }
        if flagged || marked {
            negatives.push(ValidationDirective::negative(stripped));
        } else {
            positives.push(ValidationDirective::positive(stripped));
        }
    }
    (positives, negatives)
}

/// Compiled domain knowledge. Any list may be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DirectiveWire", into = "DirectiveWire")]
pub struct DirectiveSet {
    pub structural: Vec<StructuralDirective>,
    pub filters: Vec<FilterDirective>,
    pub validations: Vec<ValidationDirective>,
}

impl DirectiveSet {
    /// Builds a normalized set: trimmed, non-empty, exact duplicates
    /// collapsed, validation markers partitioned.
    pub fn new<S, F, V, T>(structural: S, filters: F, validations: V) -> Self
    where
        S: IntoIterator<Item = T>,
        F: IntoIterator<Item = T>,
        V: IntoIterator<Item = (T, bool)>,
        T: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let structural = structural
            .into_iter()
            .map(|s| s.as_ref().trim().to_string())
            .filter(|s| !s.is_empty() && seen.insert(s.clone()))
            .map(StructuralDirective::new)
            .collect();
        let mut seen = HashSet::new();
        let filters = filters
            .into_iter()
            .map(|s| s.as_ref().trim().to_string())
            .filter(|s| !s.is_empty() && seen.insert(s.clone()))
            .map(|raw_text| FilterDirective { raw_text })
            .collect();
        let mut seen = HashSet::new();
        let validations = validations
            .into_iter()
            .filter_map(|(text, flagged)| {
                let (stripped, marked) = strip_negation(text.as_ref());
                (!stripped.is_empty()).then(|| {
                    if flagged || marked {
                        ValidationDirective::negative(stripped)
                    } else {
                        ValidationDirective::positive(stripped)
                    }
                })
            })
            .filter(|v| seen.insert(v.clone()))
            .collect();
        Self {
            structural,
            filters,
            validations,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.structural.is_empty() && self.filters.is_empty() && self.validations.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &ValidationDirective> {
        self.validations
            .iter()
            .filter(|v| v.polarity == Polarity::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &ValidationDirective> {
        self.validations
            .iter()
            .filter(|v| v.polarity == Polarity::Negative)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("directive sets always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum WireValidation {
    Object {
        text: String,
        #[serde(default)]
        negated: bool,
    },
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirectiveWire {
    structural: Vec<String>,
    filters: Vec<String>,
    validations: Vec<WireValidation>,
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    extensions: Option<serde_json::Value>,
}

impl From<DirectiveWire> for DirectiveSet {
    fn from(wire: DirectiveWire) -> Self {
        let validations = wire.validations.into_iter().map(|v| match v {
            WireValidation::Object { text, negated } => (text, negated),
            WireValidation::Text(text) => (text, false),
        });
        DirectiveSet::new(wire.structural, wire.filters, validations)
    }
}

impl From<DirectiveSet> for DirectiveWire {
    fn from(set: DirectiveSet) -> Self {
        DirectiveWire {
            structural: set.structural.into_iter().map(|s| s.raw_text).collect(),
            filters: set.filters.into_iter().map(|f| f.raw_text).collect(),
            validations: set
                .validations
                .into_iter()
                .map(|v| WireValidation::Object {
                    negated: v.polarity == Polarity::Negative,
                    text: v.raw_text,
                })
                .collect(),
            extensions: None,
        }
    }
}

/// Extraction outcome; `diagnostics` explains any degradation to an empty set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub directives: DirectiveSet,
    pub diagnostics: Vec<String>,
}

pub fn extraction_prompt(knowledge: &str) -> String {
    EXTRACTION_TEMPLATE.replace("{{knowledge}}", knowledge.trim())
}

/// Parses a model reply into a directive set. Tolerates code fences and
/// prose around a single JSON object.
pub fn parse_directive_reply(reply: &str) -> Result<DirectiveSet, String> {
    let start = reply.find('{').ok_or("reply contains no JSON object")?;
    let end = reply.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&reply[start..=end]).map_err(|e| format!("schema violation: {e}"))
}

/// Extracts directives from domain knowledge with one expensive-role call,
/// re-asking up to [`MAX_REASKS`] times when the reply breaks the schema.
///
/// Empty knowledge returns an empty set without calling the backend.
/// Transport failures are returned as errors; schema failures degrade to an
/// empty set with diagnostics.
pub async fn parse_prompt(
    knowledge: &str,
    router: &ModelRouter,
    trace: &Trace,
) -> Result<Extraction, BackendError> {
    if knowledge.trim().is_empty() {
        return Ok(Extraction::default());
    }
    let base = extraction_prompt(knowledge);
    let mut prompt = base.clone();
    let mut diagnostics = Vec::new();
    for attempt in 0..=MAX_REASKS {
        let reply = match router.generate(Role::Expensive, &prompt).await {
            Ok(reply) => reply,
            Err(e) => {
                trace.failed_call(CostStage::KnowledgeParser, router.model_id(Role::Expensive));
                return Err(e);
            }
        };
        trace.call(CostStage::KnowledgeParser, reply.usage.clone());
        match parse_directive_reply(&reply.text) {
            Ok(directives) => {
                return Ok(Extraction {
                    directives,
                    diagnostics,
                })
            }
            Err(problem) => {
                tracing::warn!(attempt, %problem, "directive reply rejected");
                diagnostics.push(format!("attempt {}: {problem}", attempt + 1));
                prompt = format!("{base}{}", REASK_TEMPLATE.replace("{{error}}", &problem));
            }
        }
    }
    diagnostics.push(format!(
        "no schema-valid reply after {} re-asks; continuing without directives",
        MAX_REASKS
    ));
    Ok(Extraction {
        directives: DirectiveSet::default(),
        diagnostics,
    })
}

/// Filter classifier prompt: numbered exclusion rules and the question,
/// ending with the KEEP/DISCARD instruction.
pub fn serialize_filters(filters: &[FilterDirective], question: &str) -> String {
    let rules = filters
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. {}", i + 1, f.raw_text))
        .collect::<Vec<_>>()
        .join("\n");
    FILTER_TEMPLATE
        .replace("{{question}}", question.trim())
        .replace("{{rules}}", &rules)
}
