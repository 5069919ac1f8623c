//! Run configuration and the batch driver behind the command line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    answer_rag_base, answer_rag_web, AnswerRecord, CascadeConfig, CascadeError, DirectGate, KbRetriever, Retriever,
    SnippetSource, WebProviders,
};
use crate::chunk::ChunkingConfig;
use crate::dataset::DatasetError;
use crate::evaluator::{aggregate_for, score_predictions, write_predictions, EvalError, Prediction, Report, Scheme};
use crate::kb::{build_kb, read_entries, write_entries, EntrySource, KbError, KbSources, SplitMode};
use crate::model_client::mock::{HashingEmbedder, OracleModel};
use crate::model_client::{ClientConfig, Embedder, Generator, ModelClient, ModelError};
use crate::routing::{route, Mode, RoutingConfig};
use crate::scalar::Rounding;
use crate::search::{
    CachePolicy, DuckDuckGo, FixtureProvider, NoSearch, SearchError, WebSearch, DEFAULT_TOP_N, DUCKDUCKGO_ENDPOINT,
};
use crate::types::{Locale, Question, Track};
use crate::vector_store::{build_index, IndexError, VectorIndex};
use crate::Exact;

/// Endpoint value selecting the in-process oracle model.
pub const MOCK_ORACLE: &str = "mock:oracle";
/// Embedding model computed locally, without a server.
pub const HASHING_EMBEDDER: &str = "hashing-bow";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("no knowledge base index for routed countries: {}", .0.join(", "))]
    MissingKb(Vec<String>),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EngineError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) | EngineError::MissingKb(_) | EngineError::Dataset(_) => 2,
            EngineError::Model(ModelError::Configuration(_)) => 2,
            EngineError::Kb(KbError::MissingCountry(..)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingSection {
    pub chunk_size: usize,
    pub overlap: usize,
    pub split: SplitMode,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        let d = ChunkingConfig::default();
        Self {
            chunk_size: d.chunk_size(),
            overlap: d.overlap(),
            split: SplitMode::Sentence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Server base URL, or `mock:oracle`.
    pub endpoint: String,
    pub timeout_secs: u64,
    pub retries: usize,
    pub backoff_ms: u64,
    /// Served embedding model, or `hashing-bow`.
    pub embedding_model: String,
    /// Width of `hashing-bow` vectors.
    pub embedding_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ClientConfig::default();
        Self {
            endpoint: c.endpoint,
            timeout_secs: c.timeout_secs,
            retries: c.retries,
            backoff_ms: c.backoff_ms,
            embedding_model: "mistral:7b".to_string(),
            embedding_dim: 512,
        }
    }
}

/// Where web-search snippets come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchSpec {
    Live,
    Fixture(PathBuf),
    CacheOnly,
}

impl std::str::FromStr for SearchSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(SearchSpec::Live),
            "cache-only" => Ok(SearchSpec::CacheOnly),
            _ => match s.strip_prefix("fixture:") {
                Some(dir) if !dir.is_empty() => Ok(SearchSpec::Fixture(dir.into())),
                _ => Err(format!("bad search spec {s:?}: expected live, fixture:<dir> or cache-only")),
            },
        }
    }
}

impl std::fmt::Display for SearchSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SearchSpec::Live => f.write_str("live"),
            SearchSpec::Fixture(d) => write!(f, "fixture:{}", d.display()),
            SearchSpec::CacheOnly => f.write_str("cache-only"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    /// `live`, `fixture:<dir>` or `cache-only`.
    pub provider: String,
    pub cache_dir: PathBuf,
    pub top_n: usize,
    pub endpoint: String,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            provider: "cache-only".to_string(),
            cache_dir: PathBuf::from("cache/search"),
            top_n: DEFAULT_TOP_N,
            endpoint: DUCKDUCKGO_ENDPOINT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub kb_root: PathBuf,
    pub keywords_dir: PathBuf,
    pub pages_dir: PathBuf,
    pub curated: Vec<PathBuf>,
    pub locales: Vec<Locale>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            kb_root: PathBuf::from("kb"),
            keywords_dir: PathBuf::from("data/keywords"),
            pages_dir: PathBuf::from("data/pages"),
            curated: vec![PathBuf::from("data/curated/facts.jsonl")],
            locales: ["en-GB", "en-US", "es-ES", "es-MX", "zh-CN", "zh-SG"]
                .iter()
                .map(|s| s.parse().expect("valid locale"))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub scheme: Scheme,
    pub rounding: Rounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub jobs: usize,
    pub routing: RoutingConfig,
    pub cascade: CascadeConfig,
    pub chunking: ChunkingSection,
    pub model: ModelSection,
    pub search: SearchSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
    pub direct_patterns: BTreeMap<String, Vec<String>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            jobs: 4,
            routing: RoutingConfig::default(),
            cascade: CascadeConfig::default(),
            chunking: ChunkingSection::default(),
            model: ModelSection::default(),
            search: SearchSection::default(),
            evaluation: EvaluationSection::default(),
            paths: PathsSection::default(),
            direct_patterns: DirectGate::default_patterns(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let c: Self = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            EngineError::Config(m) => EngineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn mode(&self) -> Mode {
        self.routing.mode
    }

    pub fn chunking(&self) -> Result<ChunkingConfig, EngineError> {
        ChunkingConfig::new(self.chunking.chunk_size, self.chunking.overlap).map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn search_spec(&self) -> Result<SearchSpec, EngineError> {
        self.search.provider.parse().map_err(EngineError::Config)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.cascade.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.cascade.similarity_floor) {
            return bad(format!("similarity_floor {} outside [-1, 1]", self.cascade.similarity_floor));
        }
        if self.search.top_n == 0 {
            return bad("search.top_n must be at least 1".into());
        }
        if self.model.embedding_model == HASHING_EMBEDDER && self.model.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        self.chunking()?;
        self.search_spec()?;
        DirectGate::new(&self.direct_patterns).map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(())
    }
}

pub type Providers = (Arc<dyn Generator>, Arc<dyn Embedder>);

/// Generation and embedding providers named by the config. The oracle
/// model needs the questions it will be asked.
pub fn make_providers(config: &EngineConfig, questions: &[Question]) -> Result<Providers, EngineError> {
    let mock = config.model.endpoint == MOCK_ORACLE;
    let client = if mock {
        None
    } else {
        Some(Arc::new(ModelClient::new(ClientConfig {
            endpoint: config.model.endpoint.clone(),
            timeout_secs: config.model.timeout_secs,
            retries: config.model.retries,
            backoff_ms: config.model.backoff_ms,
        })?))
    };
    let embedder: Arc<dyn Embedder> = if config.model.embedding_model == HASHING_EMBEDDER {
        Arc::new(HashingEmbedder::new(config.model.embedding_dim))
    } else {
        match &client {
            Some(c) => Arc::new(c.embedder(config.model.embedding_model.clone())),
            None => {
                return Err(EngineError::Config(format!(
                    "{MOCK_ORACLE} needs embedding_model = \"{HASHING_EMBEDDER}\""
                )))
            }
        }
    };
    let generator: Arc<dyn Generator> = match client {
        Some(c) => c,
        None => Arc::new(OracleModel::from_questions(questions)),
    };
    Ok((generator, embedder))
}

pub fn index_dir(kb_root: &Path, country: &str) -> PathBuf {
    kb_root.join(country).join("index")
}

/// Entry counts per country and source after a build.
pub type BuildSummary = BTreeMap<String, BTreeMap<String, usize>>;

/// Extracts entries for every configured locale and writes one entries file
/// per country.
pub fn build_knowledge_bases(config: &EngineConfig) -> Result<BuildSummary, EngineError> {
    let sources = KbSources {
        keywords_dir: config.paths.keywords_dir.clone(),
        pages_dir: config.paths.pages_dir.clone(),
        curated: config.paths.curated.clone(),
        locales: config.paths.locales.clone(),
        chunking: config.chunking()?,
        split: config.chunking.split,
    };
    let built = build_kb(&sources)?;
    let mut summary = BuildSummary::new();
    for (country, entries) in &built {
        write_entries(&config.paths.kb_root, country, entries)?;
        let counts = summary.entry(country.clone()).or_default();
        for e in entries {
            *counts.entry(e.source.to_string()).or_default() += 1;
        }
    }
    Ok(summary)
}

/// Embeds each country's entries and persists the index next to them.
pub fn build_indexes(
    config: &EngineConfig,
    embedder: &dyn Embedder,
    countries: &[String],
) -> Result<BTreeMap<String, usize>, EngineError> {
    let mut out = BTreeMap::new();
    for country in countries {
        let entries = read_entries(&config.paths.kb_root, country)?;
        let index: VectorIndex<f32> = build_index(&entries, embedder, country)?;
        index.save(&index_dir(&config.paths.kb_root, country))?;
        log::info!("indexed {} entries for {country}", index.len());
        out.insert(country.clone(), index.len());
    }
    Ok(out)
}

/// Countries that have an entries file under the KB root.
pub fn list_countries(kb_root: &Path) -> Result<Vec<String>, EngineError> {
    let mut out = Vec::new();
    let rd = match fs::read_dir(kb_root) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(kb_root)(e)),
    };
    for entry in rd {
        let entry = entry.map_err(io_err(kb_root))?;
        if entry.path().join("entries.jsonl").is_file() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

struct CountryKb {
    local: KbRetriever,
    wiki: KbRetriever,
}

/// Loaded providers and indexes for one run.
pub struct Engine {
    config: EngineConfig,
    generator: Arc<dyn Generator>,
    web: Option<WebSearch>,
    gate: DirectGate,
    kbs: BTreeMap<String, CountryKb>,
}

impl Engine {
    /// Loads the indexes for `countries`. With the local DB enabled every
    /// country must have one; `allow_live` gates live web search.
    pub fn open(
        config: EngineConfig,
        generator: Arc<dyn Generator>,
        embedder: Arc<dyn Embedder>,
        countries: &BTreeSet<String>,
        allow_live: bool,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let gate = DirectGate::new(&config.direct_patterns).map_err(|e| EngineError::Config(e.to_string()))?;
        let web = match config.mode() {
            Mode::RagBase => None,
            Mode::RagWeb => Some(make_web(&config, allow_live)?),
        };
        let needs_kb = config.cascade.use_local_db;
        let mut kbs = BTreeMap::new();
        let mut missing = Vec::new();
        for country in countries {
            let dir = index_dir(&config.paths.kb_root, country);
            if !dir.join("meta.json").is_file() {
                if needs_kb {
                    missing.push(country.clone());
                }
                continue;
            }
            let index = VectorIndex::<f32>::load(&dir)?;
            if !index.is_empty() && index.embedding_model() != embedder.model_id() {
                return Err(EngineError::Config(format!(
                    "index for {country} was built with {:?}, but the embedder is {:?}",
                    index.embedding_model(),
                    embedder.model_id()
                )));
            }
            let entries: HashMap<String, _> = read_entries(&config.paths.kb_root, country)?
                .into_iter()
                .map(|e| (e.id.clone(), e))
                .collect();
            let (index, entries) = (Arc::new(index), Arc::new(entries));
            let floor = config.cascade.similarity_floor;
            kbs.insert(
                country.clone(),
                CountryKb {
                    local: KbRetriever::new(index.clone(), entries.clone(), embedder.clone(), floor),
                    wiki: KbRetriever::new(index, entries, embedder.clone(), floor)
                        .restricted_to(EntrySource::WikiSummary),
                },
            );
        }
        if !missing.is_empty() {
            return Err(EngineError::MissingKb(missing));
        }
        Ok(Self {
            config,
            generator,
            web,
            gate,
            kbs,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn answer(&self, question: &Question) -> Result<AnswerRecord, CascadeError> {
        let decision = route(&question.locale, &self.config.routing);
        let kb = self.kbs.get(&decision.kb_id);
        let cfg = &self.config.cascade;
        match self.config.mode() {
            Mode::RagBase => {
                let local = kb.filter(|_| cfg.use_local_db).map(|k| &k.local as &dyn Retriever);
                answer_rag_base(question, local, self.generator.as_ref(), &decision, cfg)
            }
            Mode::RagWeb => {
                let providers = WebProviders {
                    generator: self.generator.as_ref(),
                    web: self.web.as_ref().map(|w| w as &dyn SnippetSource),
                    local_kb: kb.map(|k| &k.local as &dyn Retriever),
                    wiki: kb.map(|k| &k.wiki as &dyn Retriever),
                    gate: &self.gate,
                };
                Ok(answer_rag_web(question, &providers, &decision, cfg))
            }
        }
    }

    /// Answers every question on a pool of `config.jobs` workers; results
    /// keep the input order.
    pub fn answer_all(&self, questions: &[Question]) -> Result<Vec<Result<AnswerRecord, CascadeError>>, EngineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(pool.install(|| questions.par_iter().map(|q| self.answer(q)).collect()))
    }
}

fn make_web(config: &EngineConfig, allow_live: bool) -> Result<WebSearch, EngineError> {
    let cache = config.search.cache_dir.clone();
    let web = match config.search_spec()? {
        SearchSpec::Live if !allow_live => {
            return Err(EngineError::Config(
                "live web search is only available to `ask`; use fixture:<dir> or cache-only".into(),
            ))
        }
        SearchSpec::Live => {
            let ddg = DuckDuckGo::new(&config.search.endpoint, Duration::from_secs(config.model.timeout_secs))?;
            WebSearch::new(Box::new(ddg), cache, CachePolicy::ReadThrough)
        }
        SearchSpec::Fixture(dir) => WebSearch::new(Box::new(FixtureProvider::new(dir)), cache, CachePolicy::ReadThrough),
        SearchSpec::CacheOnly => WebSearch::new(Box::new(NoSearch), cache, CachePolicy::CacheOnly),
    };
    Ok(web.with_top_n(config.search.top_n))
}

/// Countries the questions route to.
pub fn routed_countries(questions: &[Question], routing: &RoutingConfig) -> BTreeSet<String> {
    questions.iter().map(|q| route(&q.locale, routing).kb_id).collect()
}

fn labeled(q: &Question) -> bool {
    match q.track {
        Track::Saq => !q.references.is_empty(),
        Track::Mcq => q.gold_label.is_some(),
    }
}

#[derive(Debug)]
pub struct TrackSummary {
    pub answered: usize,
    pub abstained: usize,
    /// Questions that failed outright or whose every stage errored.
    pub errors: Vec<String>,
    pub report: Option<Report<Exact>>,
    pub predictions_path: PathBuf,
}

impl TrackSummary {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.errors.is_empty())
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), EngineError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Answers a track and writes `predictions.jsonl`, `records.jsonl`,
/// `config.toml` and, when every question is labeled, `report.json` and
/// `report.txt` into `out`.
pub fn run_track(engine: &Engine, questions: &[Question], out: &Path) -> Result<TrackSummary, EngineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("config.toml"), engine.config().to_toml().as_bytes())?;

    let results = engine.answer_all(questions)?;
    let mut predictions = Vec::with_capacity(questions.len());
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let (mut answered, mut abstained) = (0, 0);
    for (q, res) in questions.iter().zip(results) {
        match res {
            Ok(rec) => {
                if rec.all_stages_errored() {
                    errors.push(format!("{}: {}", q.id, rec.errors.join("; ")));
                }
                if rec.final_answer.is_abstain() {
                    abstained += 1;
                } else {
                    answered += 1;
                }
                predictions.push(Prediction::from(&rec));
                records.push(serde_json::to_string(&rec).expect("record serializes"));
            }
            Err(e) => {
                log::error!("{e}");
                errors.push(e.to_string());
                abstained += 1;
                predictions.push(Prediction {
                    id: q.id.clone(),
                    answer: crate::prompts::NO_ANSWER.to_string(),
                    source_stage: "NONE".to_string(),
                    evidence: Vec::new(),
                });
            }
        }
    }

    let predictions_path = out.join("predictions.jsonl");
    let mut buf = Vec::new();
    write_predictions(&mut buf, &predictions).map_err(io_err(&predictions_path))?;
    write_file(&predictions_path, &buf)?;
    let mut rec_text = records.join("\n");
    if !rec_text.is_empty() {
        rec_text.push('\n');
    }
    write_file(&out.join("records.jsonl"), rec_text.as_bytes())?;
    if !errors.is_empty() {
        write_file(&out.join("errors.txt"), (errors.join("\n") + "\n").as_bytes())?;
    }

    let report = if !questions.is_empty() && questions.iter().all(labeled) {
        let r = evaluate(questions, &predictions, &engine.config().evaluation)?;
        write_file(&out.join("report.json"), (r.to_json() + "\n").as_bytes())?;
        write_file(&out.join("report.txt"), r.to_table().as_bytes())?;
        Some(r)
    } else {
        None
    };
    Ok(TrackSummary {
        answered,
        abstained,
        errors,
        report,
        predictions_path,
    })
}

/// Scores predictions and aggregates them under the configured scheme.
pub fn evaluate(
    questions: &[Question],
    predictions: &[Prediction],
    eval: &EvaluationSection,
) -> Result<Report<Exact>, EngineError> {
    let items = score_predictions(questions, predictions)?;
    let mut requested: Vec<Locale> = questions.iter().map(|q| q.locale).collect();
    requested.sort();
    requested.dedup();
    Ok(aggregate_for(&items, &requested, eval.scheme, eval.rounding))
}
