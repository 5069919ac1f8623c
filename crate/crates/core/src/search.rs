//! Web search providers and the on-disk result cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TOP_N: usize = 8;
pub const DUCKDUCKGO_ENDPOINT: &str = "https://api.duckduckgo.com/";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("search provider unreachable: {0}")]
    Unreachable(String),
    #[error("malformed search response: {0}")]
    Decode(String),
    #[error("search cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub title: String,
    pub text: String,
    pub url: String,
}

pub trait SearchProvider: Send + Sync {
    /// Stable name; part of the cache key.
    fn name(&self) -> &str;
    fn search(&self, query: &str) -> Result<Vec<Snippet>, SearchError>;
}

/// Hex SHA-256 of the query; names fixture files.
pub fn query_hash(query: &str) -> String {
    hex::encode(Sha256::digest(query.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    pub query: String,
    pub results: Vec<Snippet>,
}

/// Reads `<dir>/<query_hash>.json`; a missing file means no results.
pub struct FixtureProvider {
    dir: PathBuf,
}

impl FixtureProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", query_hash(query)))
    }

    /// Writes a fixture for `query`.
    pub fn write(&self, query: &str, results: &[Snippet]) -> std::io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(query);
        let rec = SearchRecord {
            provider: None,
            query: query.to_string(),
            results: results.to_vec(),
        };
        fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n")?;
        Ok(path)
    }
}

impl SearchProvider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn search(&self, query: &str) -> Result<Vec<Snippet>, SearchError> {
        let path = self.path_for(query);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(SearchError::Unreachable(format!("{}: {e}", path.display()))),
        };
        let rec: SearchRecord =
            serde_json::from_str(&text).map_err(|e| SearchError::Decode(format!("{}: {e}", path.display())))?;
        Ok(rec.results)
    }
}

/// Provider that never has results; backs cache-only runs.
pub struct NoSearch;

impl SearchProvider for NoSearch {
    fn name(&self) -> &str {
        "none"
    }

    fn search(&self, _query: &str) -> Result<Vec<Snippet>, SearchError> {
        Ok(Vec::new())
    }
}

/// DuckDuckGo instant-answer API client.
pub struct DuckDuckGo {
    http: reqwest::blocking::Client,
    endpoint: String,
}

impl DuckDuckGo {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, SearchError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("culrag/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| SearchError::Unreachable(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.into(),
        })
    }
}

#[derive(Deserialize)]
struct DdgTopic {
    #[serde(rename = "Text", default)]
    text: String,
    #[serde(rename = "FirstURL", default)]
    first_url: String,
    #[serde(rename = "Topics", default)]
    topics: Vec<DdgTopic>,
}

#[derive(Deserialize)]
struct DdgReply {
    #[serde(rename = "Heading", default)]
    heading: String,
    #[serde(rename = "AbstractText", default)]
    abstract_text: String,
    #[serde(rename = "AbstractURL", default)]
    abstract_url: String,
    #[serde(rename = "RelatedTopics", default)]
    related: Vec<DdgTopic>,
}

fn flatten_topics(topics: Vec<DdgTopic>, out: &mut Vec<Snippet>) {
    for t in topics {
        if !t.text.is_empty() {
            let title = t.text.split(" - ").next().unwrap_or_default().to_string();
            out.push(Snippet {
                title,
                text: t.text,
                url: t.first_url,
            });
        }
        flatten_topics(t.topics, out);
    }
}

/// Abstract first, then related topics in response order.
pub fn parse_duckduckgo(body: &str) -> Result<Vec<Snippet>, SearchError> {
    let reply: DdgReply = serde_json::from_str(body).map_err(|e| SearchError::Decode(e.to_string()))?;
    let mut out = Vec::new();
    if !reply.abstract_text.is_empty() {
        out.push(Snippet {
            title: reply.heading,
            text: reply.abstract_text,
            url: reply.abstract_url,
        });
    }
    flatten_topics(reply.related, &mut out);
    Ok(out)
}

impl SearchProvider for DuckDuckGo {
    fn name(&self) -> &str {
        "duckduckgo"
    }

    fn search(&self, query: &str) -> Result<Vec<Snippet>, SearchError> {
        let resp = self
            .http
            .get(&self.endpoint)
            .query(&[("q", query), ("format", "json"), ("no_html", "1"), ("skip_disambig", "1")])
            .send()
            .map_err(|e| SearchError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SearchError::Unreachable(format!("status {}", resp.status())));
        }
        let body = resp.text().map_err(|e| SearchError::Unreachable(e.to_string()))?;
        parse_duckduckgo(&body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    /// Serve hits from disk, fetch and store misses.
    ReadThrough,
    /// Never call the provider; a miss is an empty result.
    CacheOnly,
}

/// Top-n search with a disk cache keyed by (provider, query).
pub struct WebSearch {
    provider: Box<dyn SearchProvider>,
    cache_dir: PathBuf,
    policy: CachePolicy,
    top_n: usize,
    provider_calls: AtomicUsize,
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl WebSearch {
    pub fn new(provider: Box<dyn SearchProvider>, cache_dir: impl Into<PathBuf>, policy: CachePolicy) -> Self {
        Self {
            provider,
            cache_dir: cache_dir.into(),
            policy,
            top_n: DEFAULT_TOP_N,
            provider_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_top_n(mut self, top_n: usize) -> Self {
        self.top_n = top_n;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// How many times the underlying provider was queried.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_path(&self, query: &str) -> PathBuf {
        let key = format!("{}\u{1f}{query}", self.provider.name());
        self.cache_dir.join(format!("{}.json", query_hash(&key)))
    }

    fn read_cache(&self, path: &Path) -> Result<Option<Vec<Snippet>>, SearchError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str::<SearchRecord>(&text)
                .map(|r| Some(r.results))
                .map_err(|e| SearchError::Cache {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(SearchError::Cache {
                path: path.to_path_buf(),
                message: e.to_string(),
            }),
        }
    }

    fn write_cache(&self, path: &Path, query: &str, results: &[Snippet]) -> Result<(), SearchError> {
        let err = |e: std::io::Error| SearchError::Cache {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(&self.cache_dir).map_err(err)?;
        let rec = SearchRecord {
            provider: Some(self.provider.name().to_string()),
            query: query.to_string(),
            results: results.to_vec(),
        };
        let tmp = path.with_extension(format!(
            "tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, serde_json::to_string_pretty(&rec).expect("record serializes") + "\n").map_err(err)?;
        fs::rename(&tmp, path).map_err(err)
    }

    /// At most `top_n` snippets in provider rank order.
    pub fn search(&self, query: &str) -> Result<Vec<Snippet>, SearchError> {
        let path = self.cache_path(query);
        let mut results = match self.read_cache(&path)? {
            Some(hit) => hit,
            None if self.policy == CachePolicy::CacheOnly => Vec::new(),
            None => {
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                let fresh = self.provider.search(query)?;
                self.write_cache(&path, query, &fresh)?;
                fresh
            }
        };
        results.truncate(self.top_n);
        Ok(results)
    }
}
