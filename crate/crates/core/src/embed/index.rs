use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Chunk;
use crate::ids::{ChunkId, DocId, PatientId};
use crate::io::{self, IoError};
use crate::num::Scalar;

use super::{dot, EmbedError, Embedder, Embedding, Fingerprint};

pub const INDEX_MAGIC: &[u8; 8] = b"ACRVIDX\0";
pub const INDEX_VERSION: u32 = 1;

const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero chunks")]
    Empty,
    #[error("duplicate chunk_id {0}")]
    DuplicateChunk(ChunkId),
    #[error("embedding failed for batch starting at chunk {chunk_id}: {source}")]
    Embed {
        chunk_id: ChunkId,
        #[source]
        source: EmbedError,
    },
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index was built with embedder {built} but queried with {query}")]
    FingerprintMismatch { built: String, query: String },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub chunk_id: ChunkId,
    pub patient_id: PatientId,
    pub doc_id: DocId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit<S> {
    pub chunk_id: ChunkId,
    pub patient_id: PatientId,
    pub score: S,
}

/// Exact cosine index. Entries are kept sorted by chunk id and vectors are
/// stored contiguously, `dim` values per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex<S> {
    dim: usize,
    fingerprint: Fingerprint,
    entries: Vec<IndexEntry>,
    data: Vec<S>,
}

/// Embeds every chunk and assembles the index.
pub fn build_index<S: Scalar, E: Embedder<S> + ?Sized>(
    chunks: &[Chunk],
    embedder: &E,
) -> Result<DenseIndex<S>, IndexError> {
    if chunks.is_empty() {
        return Err(IndexError::Empty);
    }
    let mut order: Vec<&Chunk> = chunks.iter().collect();
    order.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    for w in order.windows(2) {
        if w[0].chunk_id == w[1].chunk_id {
            return Err(IndexError::DuplicateChunk(w[0].chunk_id.clone()));
        }
    }
    let batches: Vec<Vec<Embedding<S>>> = order
        .par_chunks(EMBED_BATCH)
        .map(|batch| {
            let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
            embedder.embed_batch(&texts).map_err(|e| IndexError::Embed {
                chunk_id: batch[0].chunk_id.clone(),
                source: e,
            })
        })
        .collect::<Result<_, _>>()?;
    let vectors: Vec<Embedding<S>> = batches.into_iter().flatten().collect();
    let dim = vectors[0].dim();
    let mut data = Vec::with_capacity(dim * vectors.len());
    for (chunk, v) in order.iter().zip(&vectors) {
        if v.dim() != dim {
            return Err(IndexError::Embed {
                chunk_id: chunk.chunk_id.clone(),
                source: EmbedError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                },
            });
        }
        data.extend_from_slice(v.values());
    }
    let entries = order
        .iter()
        .map(|c| IndexEntry {
            chunk_id: c.chunk_id.clone(),
            patient_id: c.patient_id.clone(),
            doc_id: c.doc_id.clone(),
        })
        .collect();
    Ok(DenseIndex {
        dim,
        fingerprint: embedder.fingerprint(),
        entries,
        data,
    })
}

impl<S: Scalar> DenseIndex<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn vector(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn check_fingerprint(&self, query: &Fingerprint) -> Result<(), IndexError> {
        if &self.fingerprint != query {
            return Err(IndexError::FingerprintMismatch {
                built: self.fingerprint.to_string(),
                query: query.to_string(),
            });
        }
        Ok(())
    }

    /// Top-k entries by cosine, descending; ties by ascending chunk id.
    pub fn search(&self, query: &Embedding<S>, k: usize) -> Result<Vec<SearchHit<S>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = query.values();
        let mut scored: Vec<(S, usize)> = self
            .data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, v)| (clamp_unit(dot(q, v)), i))
            .collect();
        // entries are sorted by chunk id, so the index breaks ties
        let cmp = |a: &(S, usize), b: &(S, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| SearchHit {
                chunk_id: self.entries[i].chunk_id.clone(),
                patient_id: self.entries[i].patient_id.clone(),
                score,
            })
            .collect())
    }

    /// Versioned little-endian encoding:
    /// header `{magic, version, scalar width, d, count, fingerprint}`,
    /// then `count` fixed-stride vector records, then the id table.
    pub fn to_bytes(&self) -> Vec<u8> {
        let fp = self.fingerprint.to_string();
        let mut out = Vec::with_capacity(32 + fp.len() + self.data.len() * S::WIDTH);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.push(S::TAG);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        put_str(&mut out, &fp);
        for &v in &self.data {
            v.write_le(&mut out);
        }
        for e in &self.entries {
            put_str(&mut out, e.chunk_id.as_str());
            put_str(&mut out, e.patient_id.as_str());
            put_str(&mut out, e.doc_id.as_str());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(IndexError::Corrupt(format!("unsupported version {version}")));
        }
        let tag = r.take(4)?[0];
        if tag != S::TAG {
            return Err(IndexError::Corrupt(format!(
                "scalar width {tag} does not match requested width {}",
                S::WIDTH
            )));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let fp = r.string()?;
        let fingerprint =
            Fingerprint::parse(&fp).ok_or_else(|| IndexError::Corrupt("bad fingerprint".into()))?;
        let n_values = dim
            .checked_mul(count)
            .ok_or_else(|| IndexError::Corrupt("size overflow".into()))?;
        let raw = r.take(n_values * S::WIDTH)?;
        let data: Vec<S> = raw.chunks_exact(S::WIDTH).map(S::read_le).collect();
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push(IndexEntry {
                chunk_id: ChunkId(r.string()?),
                patient_id: PatientId(r.string()?),
                doc_id: DocId(r.string()?),
            });
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt("trailing bytes".into()));
        }
        for w in entries.windows(2) {
            if w[0].chunk_id >= w[1].chunk_id {
                return Err(IndexError::Corrupt("entries not sorted by chunk id".into()));
            }
        }
        Ok(Self {
            dim,
            fingerprint,
            entries,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        Ok(io::write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn embedding(&self, i: usize) -> Embedding<S> {
        Embedding::from_raw(self.vector(i).to_vec())
    }
}

fn clamp_unit<S: Scalar>(v: S) -> S {
    v.max(-S::one()).min(S::one())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::Corrupt("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IndexError::Corrupt("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn chunk(id: &str, patient: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            patient_id: patient.into(),
            doc_id: id.split(':').next().unwrap().into(),
            token_start: 0,
            token_end: 1,
            text: text.into(),
        }
    }

    fn sample() -> Vec<Chunk> {
        vec![
            chunk("d3:00000", "p2", "osimertinib started"),
            chunk("d1:00000", "p1", "breast cancer stage II"),
            chunk("d2:00000", "p1", "tamoxifen continued"),
            chunk("d4:00000", "p3", "pregnancy confirmed"),
            chunk("d5:00000", "p3", "lung cancer"),
        ]
    }

    #[test]
    fn one_entry_per_chunk() {
        let idx: DenseIndex<f32> = build_index(&sample(), &HashEmbedder::new(64, 1)).unwrap();
        assert_eq!(idx.len(), 5);
        assert_eq!(idx.entries()[0].chunk_id.as_str(), "d1:00000");
    }

    #[test]
    fn duplicate_chunk_rejected() {
        let mut c = sample();
        c.push(chunk("d1:00000", "p9", "x"));
        let err = build_index::<f32, _>(&c, &HashEmbedder::new(64, 1)).unwrap_err();
        assert!(matches!(err, IndexError::DuplicateChunk(id) if id.as_str() == "d1:00000"));
    }

    #[test]
    fn self_query_ranks_first() {
        let e = HashEmbedder::new(64, 1);
        let idx: DenseIndex<f64> = build_index(&sample(), &e).unwrap();
        let q: Embedding<f64> = e.embed_text("tamoxifen continued");
        let hits = idx.search(&q, 10).unwrap();
        assert_eq!(hits.len(), 5);
        assert_eq!(hits[0].chunk_id.as_str(), "d2:00000");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn dimension_and_k_checked() {
        let idx: DenseIndex<f64> = build_index(&sample(), &HashEmbedder::new(64, 1)).unwrap();
        let q: Embedding<f64> = HashEmbedder::new(32, 1).embed_text("x");
        assert!(matches!(idx.search(&q, 1), Err(IndexError::DimensionMismatch { .. })));
        let q: Embedding<f64> = HashEmbedder::new(64, 1).embed_text("x");
        assert!(matches!(idx.search(&q, 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn bytes_round_trip_and_reject_width_mismatch() {
        let idx: DenseIndex<f32> = build_index(&sample(), &HashEmbedder::new(64, 1)).unwrap();
        let bytes = idx.to_bytes();
        let back = DenseIndex::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        assert!(DenseIndex::<f64>::from_bytes(&bytes).is_err());
        assert!(DenseIndex::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
