//! Exhaustive cosine-similarity index, one per country.
//!
//! On disk an index is a directory holding `meta.json`, `ids.txt` (one entry
//! id per line) and `vectors.bin` (little-endian `f32`, row-major, rows in
//! `ids.txt` order).

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KBEntry;
use crate::model_client::{Embedder, ModelError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite component at position {0}")]
    NonFinite(usize),
    #[error("empty vector")]
    Empty,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding failed at entry {position} ({entry_id}): {source}")]
    Embed {
        position: usize,
        entry_id: String,
        #[source]
        source: ModelError,
    },
    #[error("dimension drift at entry {position}: expected {expected}, got {got}")]
    DimensionDrift {
        position: usize,
        expected: usize,
        got: usize,
    },
    #[error("entry {position} ({entry_id}): {source}")]
    BadVector {
        position: usize,
        entry_id: String,
        #[source]
        source: VectorError,
    },
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Query(#[from] VectorError),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// `dot(a, b) / (|a| |b|)`, accumulated in `f64`.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let x = x.to_f64().unwrap_or(f64::NAN);
        let y = y.to_f64().unwrap_or(f64::NAN);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub kb_id: String,
    pub dimension: usize,
    pub embedding_model: String,
    pub count: usize,
    pub built_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub entry_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordering for hits: score descending, then entry id ascending.
pub fn hit_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex<T> {
    kb_id: String,
    dimension: usize,
    embedding_model: String,
    built_at: u64,
    items: Vec<(String, Vector<T>)>,
}

impl<T: Scalar> VectorIndex<T> {
    /// An empty index whose dimension is fixed by the first insert.
    pub fn empty(kb_id: impl Into<String>, embedding_model: impl Into<String>) -> Self {
        Self {
            kb_id: kb_id.into(),
            dimension: 0,
            embedding_model: embedding_model.into(),
            built_at: now_secs(),
            items: Vec::new(),
        }
    }

    /// Builds from precomputed vectors, validating ids and dimensions.
    pub fn from_items(
        kb_id: impl Into<String>,
        embedding_model: impl Into<String>,
        items: Vec<(String, Vec<T>)>,
    ) -> Result<Self, IndexError> {
        let mut index = Self::empty(kb_id, embedding_model);
        let mut seen = std::collections::HashSet::new();
        for (pos, (id, values)) in items.into_iter().enumerate() {
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            index.push(pos + 1, id, values)?;
        }
        Ok(index)
    }

    fn push(&mut self, position: usize, id: String, values: Vec<T>) -> Result<(), IndexError> {
        if self.items.is_empty() && self.dimension == 0 {
            self.dimension = values.len();
        } else if values.len() != self.dimension {
            return Err(IndexError::DimensionDrift {
                position,
                expected: self.dimension,
                got: values.len(),
            });
        }
        let bad = |source| IndexError::BadVector {
            position,
            entry_id: id.clone(),
            source,
        };
        let v = Vector::new(values).map_err(bad)?;
        if v.0.iter().all(|x| x.is_zero()) {
            return Err(bad(VectorError::ZeroVector));
        }
        self.items.push((id, v));
        Ok(())
    }

    pub fn kb_id(&self) -> &str {
        &self.kb_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedding_model(&self) -> &str {
        &self.embedding_model
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    pub fn items(&self) -> &[(String, Vector<T>)] {
        &self.items
    }

    pub fn meta(&self) -> IndexMeta {
        IndexMeta {
            kb_id: self.kb_id.clone(),
            dimension: self.dimension,
            embedding_model: self.embedding_model.clone(),
            count: self.items.len(),
            built_at: self.built_at,
        }
    }

    /// The `min(k, len)` best hits by cosine similarity.
    pub fn search(&self, query: &[T], k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if self.items.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                left: query.len(),
                right: self.dimension,
            }
            .into());
        }
        let mut scored = self
            .items
            .iter()
            .map(|(id, v)| cosine(query, v.as_slice()).map(|s| (id.as_str(), s)))
            .collect::<Result<Vec<_>, _>>()?;
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| hit_order(*a, *b));
            scored.truncate(k);
        }
        scored.sort_by(|a, b| hit_order(*a, *b));
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (id, score))| ScoredHit {
                entry_id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect())
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Embeds every entry in order. The provider's first vector fixes the
/// dimension; any later mismatch is fatal.
pub fn build_index<T: Scalar>(
    entries: &[KBEntry],
    embed: &dyn Embedder,
    kb_id: &str,
) -> Result<VectorIndex<T>, IndexError> {
    let mut index = VectorIndex::empty(kb_id, embed.model_id());
    let mut seen = std::collections::HashSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let position = i + 1;
        if !seen.insert(entry.id.as_str()) {
            return Err(IndexError::DuplicateId(entry.id.clone()));
        }
        let raw = embed.embed(&entry.text).map_err(|source| match source {
            ModelError::DimensionDrift { expected, got, .. } => IndexError::DimensionDrift {
                position,
                expected,
                got,
            },
            source => IndexError::Embed {
                position,
                entry_id: entry.id.clone(),
                source,
            },
        })?;
        let values = raw
            .into_iter()
            .map(|x| T::from_f32(x).ok_or(VectorError::NonFinite(0)))
            .collect::<Result<Vec<T>, _>>()
            .map_err(|source| IndexError::BadVector {
                position,
                entry_id: entry.id.clone(),
                source,
            })?;
        index.push(position, entry.id.clone(), values)?;
    }
    Ok(index)
}

impl VectorIndex<f32> {
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IndexError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;

        let meta_path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        fs::write(&meta_path, meta + "\n").map_err(io(&meta_path))?;

        let ids_path = dir.join("ids.txt");
        let mut ids = String::new();
        for (id, _) in &self.items {
            if id.contains('\n') || id.contains('\r') {
                return Err(IndexError::Corrupt {
                    path: ids_path,
                    message: format!("entry id {id:?} contains a line break"),
                });
            }
            ids.push_str(id);
            ids.push('\n');
        }
        fs::write(&ids_path, ids).map_err(io(&ids_path))?;

        let vec_path = dir.join("vectors.bin");
        let mut bytes = Vec::with_capacity(self.items.len() * self.dimension * 4);
        for (_, v) in &self.items {
            for x in v.as_slice() {
                bytes.write_all(&x.to_le_bytes()).expect("vec write");
            }
        }
        fs::write(&vec_path, bytes).map_err(io(&vec_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| IndexError::Io { path, source })
        };
        let corrupt = |name: &str, message: String| IndexError::Corrupt {
            path: dir.join(name),
            message,
        };
        let meta: IndexMeta =
            serde_json::from_slice(&read("meta.json")?).map_err(|e| corrupt("meta.json", e.to_string()))?;
        let ids_raw = String::from_utf8(read("ids.txt")?).map_err(|e| corrupt("ids.txt", e.to_string()))?;
        let ids: Vec<&str> = ids_raw.lines().collect();
        if ids.len() != meta.count {
            return Err(corrupt(
                "ids.txt",
                format!("{} ids but meta.json says {}", ids.len(), meta.count),
            ));
        }
        let bytes = read("vectors.bin")?;
        if bytes.len() != meta.count * meta.dimension * 4 {
            return Err(corrupt(
                "vectors.bin",
                format!(
                    "{} bytes, expected {} x {} x 4",
                    bytes.len(),
                    meta.count,
                    meta.dimension
                ),
            ));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let items = if meta.dimension == 0 {
            Vec::new()
        } else {
            ids.iter()
                .zip(floats.chunks_exact(meta.dimension))
                .map(|(id, row)| (id.to_string(), row.to_vec()))
                .collect()
        };
        let mut index = Self::from_items(meta.kb_id, meta.embedding_model, items)
            .map_err(|e| corrupt("vectors.bin", e.to_string()))?;
        index.built_at = meta.built_at;
        index.dimension = meta.dimension;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::EntrySource;
    use crate::model_client::mock::FnEmbedder;

    fn entry(id: &str, text: &str) -> KBEntry {
        KBEntry {
            id: id.into(),
            text: text.into(),
            source: EntrySource::Curated,
            locale: "en-GB".parse().unwrap(),
            country: "GB".into(),
            topic: String::new(),
            origin: "t".into(),
        }
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3f64, -1.2, 4.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0f32, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(
            cosine(&[1.0f32], &[1.0, 2.0]),
            Err(VectorError::DimensionMismatch { .. })
        ));
        assert!(matches!(cosine(&[0.0f32, 0.0], &[1.0, 2.0]), Err(VectorError::ZeroVector)));
    }

    #[test]
    fn build_three_entries() {
        let emb = FnEmbedder::new("m", |t: &str| Ok(vec![t.len() as f32, 1.0, 0.5]));
        let entries = [entry("a", "x"), entry("b", "yy"), entry("c", "zzz")];
        let idx: VectorIndex<f32> = build_index(&entries, &emb, "GB").unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.dimension(), 3);
        assert_eq!(idx.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn empty_index_searches_empty() {
        let emb = FnEmbedder::new("m", |_: &str| Ok(vec![1.0]));
        let idx: VectorIndex<f32> = build_index(&[], &emb, "GB").unwrap();
        assert!(idx.is_empty());
        assert!(idx.search(&[1.0, 2.0], 3).unwrap().is_empty());
    }

    #[test]
    fn drift_reports_entry_position() {
        let emb = FnEmbedder::new("m", |t: &str| {
            Ok(if t == "second" { vec![1.0, 2.0] } else { vec![1.0, 2.0, 3.0] })
        });
        let entries = [entry("a", "first"), entry("b", "second"), entry("c", "third")];
        let err = build_index::<f32>(&entries, &emb, "GB").unwrap_err();
        assert_eq!(err.to_string(), "dimension drift at entry 2: expected 3, got 2");
    }

    #[test]
    fn self_match_ranks_first() {
        let items = vec![
            ("a".to_string(), vec![1.0f32, 0.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0, 0.0]),
            ("c".to_string(), vec![0.0, 0.0, 1.0]),
        ];
        let idx = VectorIndex::from_items("GB", "m", items).unwrap();
        let hits = idx.search(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(hits[0].entry_id, "b");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn five_vector_fixture_matches_brute_force() {
        let raw: [(&str, [f64; 3]); 5] = [
            ("e1", [1.0, 0.0, 0.0]),
            ("e2", [1.0, 1.0, 0.0]),
            ("e3", [0.0, 1.0, 1.0]),
            ("e4", [-1.0, 0.5, 0.0]),
            ("e5", [1.0, 2.0, 2.0]),
        ];
        let q = [2.0, 1.0, 2.0];
        // brute force: (1,2,2)=8/9, (1,1,0)=3/(3*sqrt2), (0,1,1)=3/(3*sqrt2),
        // (1,0,0)=2/3, (-1,.5,0)<0  -> e5, then e2/e3 tie broken by id
        let idx = VectorIndex::from_items("X", "m", raw.iter().map(|(i, v)| (i.to_string(), v.to_vec())).collect())
            .unwrap();
        let got: Vec<String> = idx.search(&q, 3).unwrap().into_iter().map(|h| h.entry_id).collect();
        assert_eq!(got, ["e5", "e2", "e3"]);
    }

    #[test]
    fn k_is_clamped() {
        let items = (0..4).map(|i| (format!("i{i}"), vec![1.0f32, i as f32])).collect();
        let idx = VectorIndex::from_items("X", "m", items).unwrap();
        assert_eq!(idx.search(&[1.0, 1.0], 10).unwrap().len(), 4);
        assert!(idx.search(&[1.0, 1.0], 0).unwrap().is_empty());
        assert!(idx.search(&[1.0], 2).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let items = (0..10)
            .map(|i| (format!("id-{i}"), vec![i as f32 + 0.1, -1.5, (i * i) as f32 / 7.0]))
            .collect();
        let idx = VectorIndex::from_items("MX", "m", items).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = VectorIndex::<f32>::load(dir.path()).unwrap();
        assert_eq!(back, idx);
        let q = [0.5f32, 0.25, -1.0];
        assert_eq!(back.search(&q, 4).unwrap(), idx.search(&q, 4).unwrap());
        let bytes = fs::read(dir.path().join("vectors.bin")).unwrap();
        assert_eq!(bytes.len(), 10 * 3 * 4);
        assert_eq!(&bytes[..4], &0.1f32.to_le_bytes());
    }

    #[test]
    fn truncated_vectors_rejected() {
        let idx = VectorIndex::from_items("MX", "m", vec![("a".into(), vec![1.0f32, 2.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        fs::write(dir.path().join("vectors.bin"), [0u8; 5]).unwrap();
        assert!(matches!(VectorIndex::<f32>::load(dir.path()), Err(IndexError::Corrupt { .. })));
    }
}
