//! Locale-routed retrieval-augmented question answering.
//!
//! Questions carry a locale in their id. The locale picks a model and a
//! per-country knowledge base; answers come either from a single retrieval
//! pass (`RAG_BASE`) or from a cascade of evidence sources that may abstain
//! (`RAG_WEB`). The evaluator scores prediction files and aggregates
//! accuracy over regional variants.

pub mod cascade;
pub mod chunk;
pub mod dataset;
pub mod engine;
pub mod evaluator;
pub mod kb;
pub mod model_client;
pub mod normalize;
pub mod prompts;
pub mod routing;
pub mod scalar;
pub mod search;
pub mod types;
pub mod vector_store;
pub mod wiki_fetch;

pub use cascade::{answer_rag_base, answer_rag_web, AnswerRecord, CascadeConfig, DirectGate, Stage};
pub use chunk::{chunk_text, Chunk, ChunkingConfig};
pub use engine::{Engine, EngineConfig, EngineError};
pub use evaluator::{aggregate, Report, Scheme};
pub use kb::{EntrySource, KBEntry};
pub use model_client::{Embedder, GenerationRequest, Generator, ModelClient, ModelError};
pub use normalize::{normalize_answer, NormalizedAnswer};
pub use prompts::{parse_answer, render, ParsedAnswer, TemplateId, NO_ANSWER};
pub use routing::{parse_locale, route, Mode, RouteDecision, RoutingConfig};
pub use scalar::{Rounding, Scalar};
pub use types::{Locale, McqOption, Question, Track};
pub use vector_store::{cosine, ScoredHit, Vector, VectorIndex};

/// Exact rational used for accuracy arithmetic.
pub type Exact = num_rational::Ratio<i64>;
/// Embedding vector as stored on disk.
pub type Embedding = Vector<f32>;
/// Persistable per-country index.
pub type Index = VectorIndex<f32>;
/// Accuracy report over exact rationals.
pub type ExactReport = Report<Exact>;
