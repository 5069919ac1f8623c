//! Per-question answer production.
//!
//! Two pipelines share this module. The base pipeline retrieves from the
//! routed country's knowledge base once and always produces an answer. The
//! web pipeline walks an ordered list of evidence sources (direct model
//! answer, web search, local knowledge base, Wikipedia summaries) and stops
//! at the first stage whose evidence supports an answer, abstaining with
//! `<NO_ANSWER>` when none does.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntrySource, KBEntry};
use crate::model_client::{Embedder, GenerationRequest, Generator, ModelError};
use crate::prompts::{parse_answer, render_with, resolve_option, ParsedAnswer, TemplateId};
use crate::routing::RouteDecision;
use crate::search::{SearchError, Snippet, WebSearch};
use crate::types::{Question, Track};
use crate::vector_store::VectorIndex;

/// Retrieval-log marker written when nothing clears the similarity floor.
pub const NULL_MARKER: &str = "NULL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Direct,
    WebSearch,
    LocalKb,
    WikiSummary,
}

impl Stage {
    pub const PRIORITY: [Stage; 4] = [Stage::Direct, Stage::WebSearch, Stage::LocalKb, Stage::WikiSummary];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Direct => "DIRECT",
            Stage::WebSearch => "WEB_SEARCH",
            Stage::LocalKb => "LOCAL_KB",
            Stage::WikiSummary => "WIKI_SUMMARY",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding query: {0}")]
    Embed(#[from] ModelError),
    #[error("searching index: {0}")]
    Index(#[from] crate::vector_store::IndexError),
    #[error("{0}")]
    Search(#[from] SearchError),
}

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("question {question_id}: {source}")]
    Model {
        question_id: String,
        #[source]
        source: ModelError,
    },
    #[error("question {question_id}: {source}")]
    Retrieval {
        question_id: String,
        #[source]
        source: RetrievalError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub entry_id: String,
    pub text: String,
    pub score: f64,
}

/// Semantic retrieval over one knowledge base.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Passage>, RetrievalError>;
}

/// Snippet search for the web stage.
pub trait SnippetSource: Send + Sync {
    fn snippets(&self, query: &str) -> Result<Vec<Snippet>, SearchError>;
}

impl SnippetSource for WebSearch {
    fn snippets(&self, query: &str) -> Result<Vec<Snippet>, SearchError> {
        self.search(query)
    }
}

/// A country index plus its entries; optionally restricted to one source.
pub struct KbRetriever {
    index: Arc<VectorIndex<f32>>,
    entries: Arc<HashMap<String, KBEntry>>,
    embedder: Arc<dyn Embedder>,
    floor: f64,
    only: Option<EntrySource>,
}

impl KbRetriever {
    pub fn new(
        index: Arc<VectorIndex<f32>>,
        entries: Arc<HashMap<String, KBEntry>>,
        embedder: Arc<dyn Embedder>,
        floor: f64,
    ) -> Self {
        Self {
            index,
            entries,
            embedder,
            floor,
            only: None,
        }
    }

    pub fn restricted_to(mut self, source: EntrySource) -> Self {
        self.only = Some(source);
        self
    }
}

impl Retriever for KbRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Passage>, RetrievalError> {
        if self.index.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(query)?;
        // a source filter can discard top hits, so rank everything first
        let depth = if self.only.is_some() { self.index.len() } else { k };
        let hits = self.index.search(&q, depth)?;
        Ok(hits
            .into_iter()
            .filter(|h| h.score >= self.floor)
            .filter_map(|h| {
                let e = self.entries.get(&h.entry_id)?;
                if self.only.is_some_and(|s| s != e.source) {
                    return None;
                }
                Some(Passage {
                    entry_id: h.entry_id,
                    text: e.text.clone(),
                    score: h.score,
                })
            })
            .take(k)
            .collect())
    }
}

/// Encyclopedic-question patterns per language; a match allows a direct
/// model-only answer.
#[derive(Debug, Clone, Default)]
pub struct DirectGate {
    patterns: BTreeMap<String, Vec<Regex>>,
}

impl DirectGate {
    pub fn new(patterns: &BTreeMap<String, Vec<String>>) -> Result<Self, regex::Error> {
        let mut compiled = BTreeMap::new();
        for (lang, list) in patterns {
            let res = list.iter().map(|p| Regex::new(p)).collect::<Result<Vec<_>, _>>()?;
            compiled.insert(lang.clone(), res);
        }
        Ok(Self { patterns: compiled })
    }

    /// Capital, currency and founding-year questions.
    pub fn default_patterns() -> BTreeMap<String, Vec<String>> {
        let mut m = BTreeMap::new();
        m.insert(
            "en".to_string(),
            vec![
                r"(?i)\bwhat is the capital (city )?of\b".to_string(),
                r"(?i)\bwhat is the (official )?currency of\b".to_string(),
                r"(?i)\bin what year (was|did)\b".to_string(),
            ],
        );
        m.insert(
            "es".to_string(),
            vec![
                r"(?i)\bcuál es la capital de\b".to_string(),
                r"(?i)\bcuál es la moneda (oficial )?de\b".to_string(),
                r"(?i)\ben qué año se (fundó|independizó)\b".to_string(),
            ],
        );
        m.insert(
            "zh".to_string(),
            vec![
                r"的首都是(哪里|什么)".to_string(),
                r"的(法定)?货币是什么".to_string(),
                r"(哪一年|哪年)(成立|建立|独立)".to_string(),
            ],
        );
        m
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.values().all(Vec::is_empty)
    }

    pub fn should_answer_direct(&self, question: &Question) -> bool {
        self.patterns
            .get(question.locale.language())
            .is_some_and(|list| list.iter().any(|re| re.is_match(&question.text)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub succeeded: bool,
    pub evidence: Vec<String>,
    pub answer: Option<ParsedAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    #[serde(rename = "final")]
    pub final_answer: ParsedAnswer,
    pub source_stage: Option<Stage>,
    pub evidence_used: Vec<Evidence>,
    pub route: RouteDecision,
    pub stages: Vec<StageOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval_log: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl AnswerRecord {
    /// Every executed stage failed with an error.
    pub fn all_stages_errored(&self) -> bool {
        !self.stages.is_empty() && self.stages.iter().all(|s| s.error.is_some())
    }

    pub fn source_label(&self) -> &'static str {
        self.source_stage.map_or("NONE", Stage::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub template: TemplateId,
    pub k: usize,
    pub similarity_floor: f64,
    pub use_local_db: bool,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            template: TemplateId::RpV1,
            k: 3,
            similarity_floor: 0.35,
            use_local_db: true,
            max_tokens: 64,
            temperature: 0.0,
        }
    }
}

fn request(route: &RouteDecision, prompt: String, cfg: &CascadeConfig) -> GenerationRequest {
    let mut r = GenerationRequest::new(route.model_id.clone(), prompt);
    r.max_tokens = cfg.max_tokens;
    r.temperature = cfg.temperature;
    r
}

/// Parses model output; MCQ answers are mapped to an option label and an
/// unresolvable choice counts as abstention.
pub fn interpret(question: &Question, raw: &str) -> ParsedAnswer {
    let parsed = parse_answer(raw, &question.locale);
    if question.track == Track::Saq || !parsed.is_usable() {
        return parsed;
    }
    match resolve_option(&parsed, &question.options, &question.locale) {
        Some(label) => ParsedAnswer {
            normalized: crate::normalize::normalize_answer(&label, &question.locale).normalized,
            text: label,
            ..parsed
        },
        None => ParsedAnswer::abstain(raw),
    }
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Single-pass retrieval and generation. Never abstains by instruction: an
/// abstaining first pass is retried without context.
pub fn answer_rag_base(
    question: &Question,
    kb: Option<&dyn Retriever>,
    generator: &dyn Generator,
    route: &RouteDecision,
    cfg: &CascadeConfig,
) -> Result<AnswerRecord, CascadeError> {
    let model_err = |source| CascadeError::Model {
        question_id: question.id.clone(),
        source,
    };
    let started = Instant::now();
    let passages = match kb {
        Some(r) => r.retrieve(&question.text, cfg.k).map_err(|source| CascadeError::Retrieval {
            question_id: question.id.clone(),
            source,
        })?,
        None => Vec::new(),
    };
    let retrieval_log: Vec<String> = if passages.is_empty() {
        log::info!("{}: retrieval {NULL_MARKER}", question.id);
        vec![NULL_MARKER.to_string()]
    } else {
        for p in &passages {
            log::info!("{}: retrieved [{:.3}] {}", question.id, p.score, p.text);
        }
        passages.iter().map(|p| p.text.clone()).collect()
    };
    let context: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
    let prompt = render_with(cfg.template, question, &context, false);
    let first = generator.generate(&request(route, prompt, cfg)).map_err(model_err)?;
    let first_answer = interpret(question, &first.text);
    let first_stage = if context.is_empty() { Stage::Direct } else { Stage::LocalKb };
    let mut stages = vec![StageOutcome {
        stage: first_stage,
        succeeded: first_answer.is_usable(),
        evidence: context.clone(),
        answer: Some(first_answer.clone()),
        error: None,
        latency_ms: elapsed_ms(started),
    }];
    if first_answer.is_usable() {
        let evidence_used = passages
            .into_iter()
            .map(|p| Evidence {
                source: format!("kb:{}", p.entry_id),
                text: p.text,
            })
            .collect();
        return Ok(AnswerRecord {
            question_id: question.id.clone(),
            final_answer: first_answer,
            source_stage: Some(first_stage),
            evidence_used,
            route: route.clone(),
            stages,
            retrieval_log,
            errors: Vec::new(),
        });
    }

    let t = Instant::now();
    let prompt = render_with(cfg.template, question, &[], false);
    let second = generator.generate(&request(route, prompt, cfg)).map_err(model_err)?;
    let answer = interpret(question, &second.text);
    let ok = answer.is_usable();
    stages.push(StageOutcome {
        stage: Stage::Direct,
        succeeded: ok,
        evidence: Vec::new(),
        answer: Some(answer.clone()),
        error: None,
        latency_ms: elapsed_ms(t),
    });
    Ok(AnswerRecord {
        question_id: question.id.clone(),
        final_answer: if ok { answer } else { ParsedAnswer::abstain(second.text) },
        source_stage: ok.then_some(Stage::Direct),
        evidence_used: Vec::new(),
        route: route.clone(),
        stages,
        retrieval_log,
        errors: Vec::new(),
    })
}

/// Evidence providers for the web pipeline. Absent providers skip their
/// stage.
#[derive(Clone, Copy)]
pub struct WebProviders<'a> {
    pub generator: &'a dyn Generator,
    pub web: Option<&'a dyn SnippetSource>,
    pub local_kb: Option<&'a dyn Retriever>,
    pub wiki: Option<&'a dyn Retriever>,
    pub gate: &'a DirectGate,
}

enum Gathered {
    Evidence(Vec<Evidence>),
    Failed(String),
}

fn gather(stage: Stage, question: &Question, p: &WebProviders<'_>, cfg: &CascadeConfig) -> Option<Gathered> {
    let passages = |r: &dyn Retriever, tag: &str| match r.retrieve(&question.text, cfg.k) {
        Ok(ps) => Gathered::Evidence(
            ps.into_iter()
                .map(|p| Evidence {
                    source: format!("{tag}:{}", p.entry_id),
                    text: p.text,
                })
                .collect(),
        ),
        Err(e) => Gathered::Failed(e.to_string()),
    };
    match stage {
        Stage::Direct => p.gate.should_answer_direct(question).then(|| Gathered::Evidence(Vec::new())),
        Stage::WebSearch => p.web.map(|w| match w.snippets(&question.text) {
            Ok(snips) => Gathered::Evidence(
                snips
                    .into_iter()
                    .filter(|s| !s.text.trim().is_empty())
                    .map(|s| Evidence {
                        source: format!("web:{}", s.url),
                        text: s.text,
                    })
                    .collect(),
            ),
            Err(e) => Gathered::Failed(e.to_string()),
        }),
        Stage::LocalKb => {
            if !cfg.use_local_db {
                return None;
            }
            p.local_kb.map(|r| passages(r, "kb"))
        }
        Stage::WikiSummary => p.wiki.map(|r| passages(r, "wiki")),
    }
}

/// Ordered fallback over the evidence stages; the first supported answer
/// wins, otherwise the record abstains with no source stage.
pub fn answer_rag_web(
    question: &Question,
    providers: &WebProviders<'_>,
    route: &RouteDecision,
    cfg: &CascadeConfig,
) -> AnswerRecord {
    let mut stages = Vec::new();
    let mut errors = Vec::new();
    for stage in Stage::PRIORITY {
        let started = Instant::now();
        let Some(gathered) = gather(stage, question, providers, cfg) else {
            continue;
        };
        let evidence = match gathered {
            Gathered::Failed(e) => {
                errors.push(format!("{stage}: {e}"));
                stages.push(StageOutcome {
                    stage,
                    succeeded: false,
                    evidence: Vec::new(),
                    answer: None,
                    error: Some(e),
                    latency_ms: elapsed_ms(started),
                });
                continue;
            }
            Gathered::Evidence(ev) => ev,
        };
        let texts: Vec<String> = evidence.iter().map(|e| e.text.clone()).collect();
        if stage != Stage::Direct && texts.is_empty() {
            stages.push(StageOutcome {
                stage,
                succeeded: false,
                evidence: texts,
                answer: None,
                error: None,
                latency_ms: elapsed_ms(started),
            });
            continue;
        }
        let prompt = render_with(cfg.template, question, &texts, stage != Stage::Direct);
        match providers.generator.generate(&request(route, prompt, cfg)) {
            Ok(out) => {
                let answer = interpret(question, &out.text);
                let ok = answer.is_usable();
                stages.push(StageOutcome {
                    stage,
                    succeeded: ok,
                    evidence: texts,
                    answer: Some(answer.clone()),
                    error: None,
                    latency_ms: elapsed_ms(started),
                });
                if ok {
                    return AnswerRecord {
                        question_id: question.id.clone(),
                        final_answer: answer,
                        source_stage: Some(stage),
                        evidence_used: evidence,
                        route: route.clone(),
                        stages,
                        retrieval_log: Vec::new(),
                        errors,
                    };
                }
            }
            Err(e) => {
                errors.push(format!("{stage}: {e}"));
                stages.push(StageOutcome {
                    stage,
                    succeeded: false,
                    evidence: texts,
                    answer: None,
                    error: Some(e.to_string()),
                    latency_ms: elapsed_ms(started),
                });
            }
        }
    }
    AnswerRecord {
        question_id: question.id.clone(),
        final_answer: ParsedAnswer::abstain(crate::prompts::NO_ANSWER),
        source_stage: None,
        evidence_used: Vec::new(),
        route: route.clone(),
        stages,
        retrieval_log: Vec::new(),
        errors,
    }
}
