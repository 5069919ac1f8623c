//! Fixed-stride character splitter with overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid chunking config: need 0 <= overlap ({overlap}) < chunk_size ({chunk_size})")]
pub struct ChunkingConfigError {
    pub chunk_size: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    chunk_size: usize,
    overlap: usize,
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, ChunkingConfigError> {
        if chunk_size == 0 || overlap >= chunk_size {
            return Err(ChunkingConfigError { chunk_size, overlap });
        }
        Ok(Self { chunk_size, overlap })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { chunk_size: 500, overlap: 100 }
    }
}

/// A slice of the source text; `start` counts Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub text: String,
    pub start: usize,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

pub fn chunk_text(text: &str, config: &ChunkingConfig) -> Vec<Chunk> {
    // byte offset of every char boundary, plus the end
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .collect();
    let n = bounds.len() - 1;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + config.chunk_size).min(n);
        chunks.push(Chunk {
            text: text[bounds[start]..bounds[end]].to_string(),
            start,
        });
        if end == n {
            break;
        }
        start += config.stride();
    }
    chunks
}
