//! Exact cosine-similarity index over moment embeddings.
//!
//! Rows are stored L2-normalized in f64, so cosine similarity is a plain dot
//! product. Rankings are sorted by descending score; exact ties go to the
//! candidate inserted first.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::feature_io::{expect_eof, read_bounded, FormatError};
use crate::moments::{l2_norm, MomentEmbedding};

pub const INDEX_MAGIC: [u8; 4] = *b"MVIX";
pub const INDEX_VERSION: u32 = 1;
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index from zero embeddings")]
    Empty,
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("config digest mismatch for {video_id:?}: expected {expected}, found {found}")]
    DigestMismatch {
        video_id: String,
        expected: String,
        found: String,
    },
    #[error("unknown video id {0:?}")]
    UnknownId(String),
    #[error("embedding {0:?} has zero norm")]
    ZeroVector(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    dim: usize,
    rows: Vec<f64>,
    config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of two unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

pub fn build_index(embeddings: &[MomentEmbedding]) -> Result<EmbeddingIndex, RetrievalError> {
    let first = embeddings.first().ok_or(RetrievalError::Empty)?;
    let dim = first.dim();
    let mut index = EmbeddingIndex {
        ids: Vec::with_capacity(embeddings.len()),
        positions: HashMap::with_capacity(embeddings.len()),
        dim,
        rows: Vec::with_capacity(embeddings.len() * dim),
        config_digest: first.config_digest.clone(),
    };
    for e in embeddings {
        if e.dim() != dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        if e.config_digest != index.config_digest {
            return Err(RetrievalError::DigestMismatch {
                video_id: e.video_id.clone(),
                expected: index.config_digest.clone(),
                found: e.config_digest.clone(),
            });
        }
        let norm = l2_norm(&e.vector);
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::ZeroVector(e.video_id.clone()));
        }
        index.push(e.video_id.clone(), e.vector.iter().map(|v| v / norm))?;
    }
    Ok(index)
}

impl EmbeddingIndex {
    fn push(&mut self, id: String, row: impl Iterator<Item = f64>) -> Result<(), RetrievalError> {
        if self.positions.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.rows.extend(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn position(&self, id: &str) -> Result<usize, RetrievalError> {
        self.positions
            .get(id)
            .copied()
            .ok_or_else(|| RetrievalError::UnknownId(id.to_owned()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.rows[position * self.dim..(position + 1) * self.dim]
    }

    pub fn vector(&self, id: &str) -> Result<&[f64], RetrievalError> {
        Ok(self.row(self.position(id)?))
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        dot(self.row(a), self.row(b))
    }

    /// The stored rows as embeddings, in insertion order.
    pub fn embeddings(&self) -> Vec<MomentEmbedding> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| MomentEmbedding {
                video_id: id.clone(),
                vector: self.row(i).to_vec(),
                config_digest: self.config_digest.clone(),
                normalized: true,
            })
            .collect()
    }

    /// Scores `candidates` against the row at `query`, best first, skipping the
    /// query itself and repeated candidates.
    pub fn rank_positions(&self, query: usize, candidates: &[usize]) -> Vec<(usize, f64)> {
        let mut seen = vec![false; self.len()];
        seen[query] = true;
        let q = self.row(query);
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .filter(|&&c| !std::mem::replace(&mut seen[c], true))
            .map(|&c| (c, dot(q, self.row(c))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }

    fn pool_positions(&self, pool: Option<&[String]>) -> Result<Vec<usize>, RetrievalError> {
        match pool {
            None => Ok((0..self.len()).collect()),
            Some(pool) => pool.iter().map(|id| self.position(id)).collect(),
        }
    }
}

/// Every pool member except the query, most similar first.
pub fn rank(
    index: &EmbeddingIndex,
    query_id: &str,
    pool: Option<&[String]>,
) -> Result<RankedList, RetrievalError> {
    let query = index.position(query_id)?;
    let candidates = index.pool_positions(pool)?;
    let entries = index
        .rank_positions(query, &candidates)
        .into_iter()
        .map(|(c, score)| RankedEntry {
            id: index.ids[c].clone(),
            score,
        })
        .collect();
    Ok(RankedList {
        query_id: query_id.to_owned(),
        entries,
    })
}

/// True iff `positive_id` is the top-ranked member of `pool`.
pub fn triplet_success(
    index: &EmbeddingIndex,
    query_id: &str,
    positive_id: &str,
    pool: &[String],
) -> Result<bool, RetrievalError> {
    let positive = index.position(positive_id)?;
    if !pool.iter().any(|id| id == positive_id) {
        return Err(RetrievalError::UnknownId(format!(
            "positive {positive_id} is not in the pool"
        )));
    }
    let query = index.position(query_id)?;
    let candidates = index.pool_positions(Some(pool))?;
    Ok(index
        .rank_positions(query, &candidates)
        .first()
        .is_some_and(|&(top, _)| top == positive))
}

fn to_u32(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::ShapeMismatch(format!("{what} {v} exceeds u32")))
}

fn write_str<W: Write>(sink: &mut W, s: &str) -> Result<(), FormatError> {
    sink.write_all(&to_u32(s.len(), "string length")?.to_le_bytes())?;
    sink.write_all(s.as_bytes())?;
    Ok(())
}

/// Encodes the index as an MVIX stream:
/// magic, version, N, D, digest, N length-prefixed ids, then N*D f64 values.
pub fn write_index<W: Write>(index: &EmbeddingIndex, sink: W) -> Result<usize, FormatError> {
    let mut sink = BufWriter::new(sink);
    sink.write_all(&INDEX_MAGIC)?;
    sink.write_all(&INDEX_VERSION.to_le_bytes())?;
    sink.write_all(&to_u32(index.len(), "N")?.to_le_bytes())?;
    sink.write_all(&to_u32(index.dim, "D")?.to_le_bytes())?;
    write_str(&mut sink, &index.config_digest)?;
    let mut written = 16 + 4 + index.config_digest.len();
    for id in &index.ids {
        write_str(&mut sink, id)?;
        written += 4 + id.len();
    }
    for v in &index.rows {
        sink.write_all(&v.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(written + 8 * index.rows.len())
}

fn read_u32<R: Read>(source: &mut R, what: &'static str) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    source.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FormatError::TruncatedHeader(what),
        _ => e.into(),
    })?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(source: &mut R, what: &'static str) -> Result<String, FormatError> {
    let len = read_u32(source, what)? as u64;
    let bytes = read_bounded(source, len)?;
    if (bytes.len() as u64) < len {
        return Err(FormatError::TruncatedHeader(what));
    }
    String::from_utf8(bytes).map_err(|_| FormatError::InvalidId)
}

pub fn read_index<R: Read>(source: R) -> Result<EmbeddingIndex, FormatError> {
    let mut source = BufReader::new(source);
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FormatError::TruncatedHeader("magic"),
        _ => e.into(),
    })?;
    if magic != INDEX_MAGIC {
        return Err(FormatError::BadMagic {
            expected: INDEX_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(&mut source, "version")?;
    if version != INDEX_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = read_u32(&mut source, "N")? as usize;
    let dim = read_u32(&mut source, "D")? as usize;
    if n == 0 || dim == 0 {
        return Err(FormatError::ShapeMismatch(format!(
            "empty index shape ({n}, {dim})"
        )));
    }
    let config_digest = read_str(&mut source, "digest")?;
    let mut ids = Vec::new();
    let mut positions = HashMap::new();
    for i in 0..n {
        let id = read_str(&mut source, "id")?;
        if positions.insert(id.clone(), i).is_some() {
            return Err(FormatError::DuplicateId(id));
        }
        ids.push(id);
    }
    let expected = (n as u64)
        .checked_mul(dim as u64)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| FormatError::ShapeMismatch("declared shape overflows".into()))?;
    let payload = read_bounded(&mut source, expected)?;
    if (payload.len() as u64) < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len() as u64,
        });
    }
    expect_eof(&mut source)?;
    let rows: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(index) = rows.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    for (row, values) in rows.chunks_exact(dim).enumerate() {
        let norm = l2_norm(values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(FormatError::NotNormalized { row, norm });
        }
    }
    Ok(EmbeddingIndex {
        ids,
        positions,
        dim,
        rows,
        config_digest,
    })
}

pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<usize, FormatError> {
    write_index(index, File::create(path)?)
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex, FormatError> {
    read_index(File::open(path)?)
}
