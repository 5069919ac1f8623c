//! Client for a local model server speaking the `/api/generate` and
//! `/api/embeddings` REST convention. This is the only module that performs
//! model I/O; everything downstream depends on the [`Generator`] and
//! [`Embedder`] traits.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENDPOINT_ENV: &str = "CULRAG_MODEL_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:11434";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport {
        status: Option<u16>,
        message: String,
        attempts: usize,
    },
    #[error("model configuration error: {0}")]
    Configuration(String),
    #[error("request timed out after {elapsed_ms} ms")]
    Timeout { elapsed_ms: u64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("embedding dimension drift for {model}: expected {expected}, got {got}")]
    DimensionDrift {
        model: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed server response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    /// Temperature 0, at most 64 tokens, stop at a blank line.
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 64,
            stop_sequences: vec!["\n\n".to_string()],
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.prompt.is_empty() {
            return Err(ModelError::Precondition("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ModelError::Precondition(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError>;
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f32>, ModelError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
        (**self).generate(request)
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn embed(&self, text: &str) -> Result<Vec<f32>, ModelError> {
        (**self).embed(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint: String,
    pub timeout_secs: u64,
    pub retries: usize,
    pub backoff_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Endpoint from `CULRAG_MODEL_ENDPOINT`, if set and non-empty.
pub fn endpoint_from_env() -> Option<String> {
    std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty())
}

#[derive(Serialize)]
struct GenerateOptions<'a> {
    temperature: f64,
    num_predict: u32,
    stop: &'a [String],
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    model: &'a str,
    prompt: &'a str,
    stream: bool,
    options: GenerateOptions<'a>,
}

#[derive(Deserialize)]
struct GenerateReply {
    response: String,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f32>,
}

enum Attempt {
    Retry(ModelError),
    Fatal(ModelError),
}

pub struct ModelClient {
    http: reqwest::blocking::Client,
    config: ClientConfig,
    dims: Mutex<HashMap<String, usize>>,
    retries_done: AtomicUsize,
}

impl ModelClient {
    pub fn new(config: ClientConfig) -> Result<Self, ModelError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ModelError::Configuration(e.to_string()))?;
        Ok(Self {
            http,
            config,
            dims: Mutex::new(HashMap::new()),
            retries_done: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Retries performed since the client was created.
    pub fn retries_performed(&self) -> usize {
        self.retries_done.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn post_once<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
        attempt: usize,
    ) -> Result<R, Attempt> {
        let started = Instant::now();
        let resp = match self.http.post(self.url(path)).json(body).send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Err(Attempt::Fatal(ModelError::Timeout {
                    elapsed_ms: started.elapsed().as_millis() as u64,
                }))
            }
            Err(e) => {
                return Err(Attempt::Retry(ModelError::Transport {
                    status: None,
                    message: e.to_string(),
                    attempts: attempt,
                }))
            }
        };
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(ModelError::Configuration(format!(
                "{path} returned 404: {}",
                text.trim()
            ))));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Retry(ModelError::Transport {
                status: Some(status.as_u16()),
                message: format!("{path} returned {status}: {}", text.trim()),
                attempts: attempt,
            }));
        }
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                Attempt::Fatal(ModelError::Timeout {
                    elapsed_ms: started.elapsed().as_millis() as u64,
                })
            } else {
                Attempt::Retry(ModelError::Transport {
                    status: Some(status.as_u16()),
                    message: e.to_string(),
                    attempts: attempt,
                })
            }
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Attempt::Fatal(ModelError::Decode(e.to_string())))
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, ModelError> {
        let mut attempt = 1;
        loop {
            match self.post_once(path, body, attempt) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt > self.config.retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("{path}: attempt {attempt} failed ({e}); retrying in {wait} ms");
                    self.retries_done.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
        request.check()?;
        let started = Instant::now();
        let body = GenerateBody {
            model: &request.model_id,
            prompt: &request.prompt,
            stream: false,
            options: GenerateOptions {
                temperature: request.temperature,
                num_predict: request.max_tokens,
                stop: &request.stop_sequences,
            },
        };
        let reply: GenerateReply = self.post("/api/generate", &body)?;
        Ok(GenerationResult {
            text: reply.response,
            model_id: request.model_id.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    pub fn embed_text(&self, model_id: &str, text: &str) -> Result<Vec<f32>, ModelError> {
        if text.is_empty() {
            return Err(ModelError::Precondition("empty text".into()));
        }
        let reply: EmbedReply = self.post(
            "/api/embeddings",
            &EmbedBody {
                model: model_id,
                prompt: text,
            },
        )?;
        if reply.embedding.is_empty() {
            return Err(ModelError::Decode("empty embedding".into()));
        }
        let mut dims = self.dims.lock().unwrap_or_else(|e| e.into_inner());
        let expected = *dims.entry(model_id.to_string()).or_insert(reply.embedding.len());
        if expected != reply.embedding.len() {
            return Err(ModelError::DimensionDrift {
                model: model_id.to_string(),
                expected,
                got: reply.embedding.len(),
            });
        }
        Ok(reply.embedding)
    }

    /// An [`Embedder`] bound to one embedding model.
    pub fn embedder(self: &Arc<Self>, model_id: impl Into<String>) -> ClientEmbedder {
        ClientEmbedder {
            client: Arc::clone(self),
            model_id: model_id.into(),
        }
    }
}

impl Generator for ModelClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
        ModelClient::generate(self, request)
    }
}

pub struct ClientEmbedder {
    client: Arc<ModelClient>,
    model_id: String,
}

impl Embedder for ClientEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ModelError> {
        self.client.embed_text(&self.model_id, text)
    }
}

/// Deterministic in-process providers.
pub mod mock {
    use super::*;
    use crate::normalize::normalize_str;
    use crate::prompts::{extract_context, extract_question, NO_ANSWER};
    use crate::types::{Question, Track};

    type GenFn = dyn Fn(&GenerationRequest) -> Result<String, ModelError> + Send + Sync;
    type EmbedFn = dyn Fn(&str) -> Result<Vec<f32>, ModelError> + Send + Sync;

    /// Generator backed by a closure; counts calls.
    pub struct FnGenerator {
        f: Box<GenFn>,
        calls: AtomicUsize,
    }

    impl FnGenerator {
        pub fn new<F>(f: F) -> Self
        where
            F: Fn(&GenerationRequest) -> Result<String, ModelError> + Send + Sync + 'static,
        {
            Self {
                f: Box::new(f),
                calls: AtomicUsize::new(0),
            }
        }

        /// Always answers `text`.
        pub fn constant(text: &str) -> Self {
            let text = text.to_string();
            Self::new(move |_| Ok(text.clone()))
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Generator for FnGenerator {
        fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
            request.check()?;
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(GenerationResult {
                text: (self.f)(request)?,
                model_id: request.model_id.clone(),
                latency_ms: 0,
            })
        }
    }

    pub struct FnEmbedder {
        model_id: String,
        f: Box<EmbedFn>,
    }

    impl FnEmbedder {
        pub fn new<F>(model_id: &str, f: F) -> Self
        where
            F: Fn(&str) -> Result<Vec<f32>, ModelError> + Send + Sync + 'static,
        {
            Self {
                model_id: model_id.to_string(),
                f: Box::new(f),
            }
        }
    }

    impl Embedder for FnEmbedder {
        fn model_id(&self) -> &str {
            &self.model_id
        }

        fn embed(&self, text: &str) -> Result<Vec<f32>, ModelError> {
            if text.is_empty() {
                return Err(ModelError::Precondition("empty text".into()));
            }
            (self.f)(text)
        }
    }

    fn fnv1a(s: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in s.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    fn is_cjk(c: char) -> bool {
        matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x3040..=0x30FF | 0xAC00..=0xD7AF)
    }

    /// Signed feature hashing of lowercase words, plus CJK character
    /// unigrams and bigrams. A constant bias component keeps every vector
    /// non-zero.
    pub struct HashingEmbedder {
        dim: usize,
    }

    impl HashingEmbedder {
        pub fn new(dim: usize) -> Self {
            assert!(dim >= 2, "need at least two dimensions");
            Self { dim }
        }

        fn tokens(text: &str) -> Vec<String> {
            let lower = text.to_lowercase();
            let mut out = Vec::new();
            let mut word = String::new();
            let mut prev_cjk: Option<char> = None;
            for c in lower.chars() {
                if is_cjk(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(c.to_string());
                    if let Some(p) = prev_cjk {
                        out.push(format!("{p}{c}"));
                    }
                    prev_cjk = Some(c);
                    continue;
                }
                prev_cjk = None;
                if c.is_alphanumeric() {
                    word.push(c);
                } else if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
            out
        }
    }

    impl Embedder for HashingEmbedder {
        fn model_id(&self) -> &str {
            "hashing-bow"
        }

        fn embed(&self, text: &str) -> Result<Vec<f32>, ModelError> {
            if text.is_empty() {
                return Err(ModelError::Precondition("empty text".into()));
            }
            let mut v = vec![0.0f32; self.dim];
            v[0] = 0.05;
            for tok in Self::tokens(text) {
                let h = fnv1a(&tok);
                let slot = 1 + (h % (self.dim as u64 - 1)) as usize;
                let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                v[slot] += sign;
            }
            Ok(v)
        }
    }

    /// Answers a known question correctly exactly when the prompt's context
    /// block contains one of its references (for MCQ, the gold option
    /// text); otherwise abstains.
    pub struct OracleModel {
        known: HashMap<String, (Vec<String>, Option<String>, bool)>,
        calls: AtomicUsize,
    }

    impl OracleModel {
        pub fn from_questions(questions: &[Question]) -> Self {
            let known = questions
                .iter()
                .map(|q| {
                    let chinese = q.locale.is_chinese();
                    let entry = match q.track {
                        Track::Saq => (q.references.clone(), None, chinese),
                        Track::Mcq => {
                            let gold = q.gold_label.clone();
                            let text = q
                                .options
                                .iter()
                                .filter(|o| Some(&o.label) == gold.as_ref())
                                .map(|o| o.text.clone())
                                .collect();
                            (text, gold, chinese)
                        }
                    };
                    (q.text.clone(), entry)
                })
                .collect();
            Self {
                known,
                calls: AtomicUsize::new(0),
            }
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }

        pub fn respond(&self, prompt: &str) -> String {
            let Some(question) = extract_question(prompt) else {
                return NO_ANSWER.to_string();
            };
            let Some((refs, gold, chinese)) = self.known.get(question) else {
                return NO_ANSWER.to_string();
            };
            let context = normalize_str(&extract_context(prompt).join("\n"), *chinese);
            for r in refs {
                let key = normalize_str(r, *chinese);
                if !key.is_empty() && context.contains(&key) {
                    return gold.clone().unwrap_or_else(|| r.clone());
                }
            }
            NO_ANSWER.to_string()
        }
    }

    impl Generator for OracleModel {
        fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ModelError> {
            request.check()?;
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(GenerationResult {
                text: self.respond(&request.prompt),
                model_id: request.model_id.clone(),
                latency_ms: 0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::*;
    use super::*;
    use std::sync::Arc;
    use std::thread;

    /// Minimal scripted server: replies to successive requests with the
    /// given (status, body) pairs, repeating the last one.
    fn serve(script: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).ok();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, reply) = script[n.min(script.len() - 1)].clone();
                let reply = reply.replace("{{body}}", &body);
                req.respond(tiny_http::Response::from_string(reply).with_status_code(status))
                    .ok();
            }
        });
        (addr, hits)
    }

    fn client(endpoint: String, retries: usize) -> ModelClient {
        ModelClient::new(ClientConfig {
            endpoint,
            timeout_secs: 5,
            retries,
            backoff_ms: 1,
        })
        .unwrap()
    }

    #[test]
    fn generate_returns_text_verbatim() {
        let (addr, _) = serve(vec![(200, r#"{"response":" OK\n"}"#.into())]);
        let c = client(addr, 3);
        let r = c.generate(&GenerationRequest::new("gemma3:4b", "hi")).unwrap();
        assert_eq!(r.text, " OK\n");
        assert_eq!(r.model_id, "gemma3:4b");
    }

    #[test]
    fn wire_format_of_generate() {
        // echo the request body back inside the response
        let (addr, _) = serve(vec![(200, r#"{"response":"ok","echo":{{body}}}"#.into())]);
        let c = client(addr.clone(), 0);
        let body = serde_json::to_value(GenerateBody {
            model: "m",
            prompt: "p",
            stream: false,
            options: GenerateOptions {
                temperature: 0.0,
                num_predict: 64,
                stop: &["\n\n".to_string()],
            },
        })
        .unwrap();
        assert_eq!(
            body,
            serde_json::json!({"model":"m","prompt":"p","stream":false,
                "options":{"temperature":0.0,"num_predict":64,"stop":["\n\n"]}})
        );
        assert_eq!(c.generate(&GenerationRequest::new("m", "p")).unwrap().text, "ok");
    }

    #[test]
    fn missing_model_is_not_retried() {
        let (addr, hits) = serve(vec![(404, r#"{"error":"model 'x' not found"}"#.into())]);
        let c = client(addr, 3);
        let err = c.generate(&GenerationRequest::new("x", "hi")).unwrap_err();
        assert!(matches!(err, ModelError::Configuration(_)), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        assert_eq!(c.retries_performed(), 0);
    }

    #[test]
    fn transient_failures_are_retried() {
        let (addr, hits) = serve(vec![
            (500, "boom".into()),
            (503, "busy".into()),
            (200, r#"{"response":"OK"}"#.into()),
        ]);
        let c = client(addr, 3);
        let r = c.generate(&GenerationRequest::new("m", "hi")).unwrap();
        assert_eq!(r.text, "OK");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        assert_eq!(c.retries_performed(), 2);
    }

    #[test]
    fn retries_exhausted() {
        let (addr, hits) = serve(vec![(500, "boom".into())]);
        let c = client(addr, 2);
        let err = c.generate(&GenerationRequest::new("m", "hi")).unwrap_err();
        assert!(matches!(err, ModelError::Transport { status: Some(500), attempts: 3, .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let c = client("http://127.0.0.1:1".into(), 1);
        let err = c.generate(&GenerationRequest::new("m", "hi")).unwrap_err();
        assert!(matches!(err, ModelError::Transport { status: None, .. }), "{err}");
    }

    #[test]
    fn timeout_carries_elapsed() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
        thread::spawn(move || {
            for req in server.incoming_requests() {
                thread::sleep(Duration::from_millis(2500));
                req.respond(tiny_http::Response::from_string("{}")).ok();
            }
        });
        let c = ModelClient::new(ClientConfig {
            endpoint: addr,
            timeout_secs: 1,
            retries: 3,
            backoff_ms: 1,
        })
        .unwrap();
        match c.generate(&GenerationRequest::new("m", "hi")) {
            Err(ModelError::Timeout { elapsed_ms }) => assert!(elapsed_ms >= 900, "{elapsed_ms}"),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn embeddings_and_drift() {
        let (addr, _) = serve(vec![
            (200, r#"{"embedding":[3.0,0.0,0.0]}"#.into()),
            (200, r#"{"embedding":[1.0,2.0]}"#.into()),
        ]);
        let c = client(addr, 0);
        assert_eq!(c.embed_text("e", "abc").unwrap(), vec![3.0, 0.0, 0.0]);
        let err = c.embed_text("e", "abcd").unwrap_err();
        assert_eq!(
            err,
            ModelError::DimensionDrift {
                model: "e".into(),
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn empty_text_fails_before_network() {
        let c = client("http://127.0.0.1:1".into(), 0);
        assert!(matches!(c.embed_text("e", ""), Err(ModelError::Precondition(_))));
        assert!(matches!(
            c.generate(&GenerationRequest::new("m", "")),
            Err(ModelError::Precondition(_))
        ));
    }

    #[test]
    fn mock_length_embedder() {
        let e = FnEmbedder::new("len", |t: &str| Ok(vec![t.chars().count() as f32, 0.0, 0.0]));
        assert_eq!(e.embed("abc").unwrap(), vec![3.0, 0.0, 0.0]);
        assert!(e.embed("").is_err());
    }

    #[test]
    fn deterministic_mock_is_referentially_transparent() {
        let g = FnGenerator::new(|r: &GenerationRequest| Ok(format!("{}:{}", r.model_id, r.prompt.len())));
        let req = GenerationRequest::new("m", "question");
        assert_eq!(g.generate(&req).unwrap(), g.generate(&req).unwrap());
    }

    #[test]
    fn hashing_embedder_prefers_shared_words() {
        let e = HashingEmbedder::new(256);
        let q = e.embed("What is the capital of France?").unwrap();
        let hit = e.embed("The capital of France is Paris.").unwrap();
        let miss = e.embed("Tacos are a popular street food in Mexico.").unwrap();
        let c1 = crate::vector_store::cosine(&q, &hit).unwrap();
        let c2 = crate::vector_store::cosine(&q, &miss).unwrap();
        assert!(c1 > c2, "{c1} <= {c2}");
        let zh = e.embed("中国的首都是哪里？").unwrap();
        let zh_hit = e.embed("中国的首都是北京。").unwrap();
        assert!(crate::vector_store::cosine(&zh, &zh_hit).unwrap() > 0.5);
    }
}
