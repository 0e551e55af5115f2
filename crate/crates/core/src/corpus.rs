//! Longitudinal patient records: loading, validation, tokenization, chunking.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ChunkId, DocId, PatientId};
use crate::io::{self, IoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub patient_id: PatientId,
    pub doc_id: DocId,
    pub authored_at: NaiveDate,
    pub doc_type: String,
    pub text: String,
}

/// Wire form of a corpus line; the date stays a string so a bad date gets its own error.
#[derive(Deserialize)]
struct RawDocument {
    patient_id: String,
    doc_id: String,
    authored_at: String,
    doc_type: String,
    text: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate doc_id {doc_id:?} on lines {first_line} and {second_line}")]
    DuplicateDocId {
        doc_id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: document {doc_id:?} has no tokens")]
    EmptyText { line: usize, doc_id: String },
    #[error("line {line}: invalid date {value:?} (expected YYYY-MM-DD)")]
    InvalidDate { line: usize, value: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk_size must be at least 1")]
    ZeroChunkSize,
    #[error("overlap {overlap} must be smaller than chunk_size {chunk_size}")]
    OverlapTooLarge { chunk_size: usize, overlap: usize },
}

/// Patients mapped to their documents, each list ascending by `(authored_at, doc_id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    patients: BTreeMap<PatientId, Vec<Document>>,
}

impl Corpus {
    /// Builds a corpus from documents that are already known to be valid.
    /// Duplicate doc ids and token-less texts are still rejected.
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self, CorpusError> {
        let mut seen: HashMap<DocId, usize> = HashMap::new();
        let mut patients: BTreeMap<PatientId, Vec<Document>> = BTreeMap::new();
        for (i, doc) in docs.into_iter().enumerate() {
            let line = i + 1;
            if tokenize(&doc.text).is_empty() {
                return Err(CorpusError::EmptyText {
                    line,
                    doc_id: doc.doc_id.0,
                });
            }
            if let Some(&first) = seen.get(&doc.doc_id) {
                return Err(CorpusError::DuplicateDocId {
                    doc_id: doc.doc_id.0,
                    first_line: first,
                    second_line: line,
                });
            }
            seen.insert(doc.doc_id.clone(), line);
            patients.entry(doc.patient_id.clone()).or_default().push(doc);
        }
        for docs in patients.values_mut() {
            docs.sort_by(|a, b| (a.authored_at, &a.doc_id).cmp(&(b.authored_at, &b.doc_id)));
        }
        Ok(Self { patients })
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &PatientId> {
        self.patients.keys()
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_documents(&self) -> usize {
        self.patients.values().map(Vec::len).sum()
    }

    pub fn documents(&self, patient: &PatientId) -> &[Document] {
        self.patients.get(patient).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_patient(&self, patient: &PatientId) -> bool {
        self.patients.contains_key(patient)
    }

    pub fn patients(&self) -> impl Iterator<Item = (&PatientId, &[Document])> {
        self.patients.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// All documents, patient by patient, each patient in date order.
    pub fn iter_documents(&self) -> impl Iterator<Item = &Document> {
        self.patients.values().flatten()
    }

    /// Number of documents per patient (N_d).
    pub fn doc_counts(&self) -> BTreeMap<PatientId, usize> {
        self.patients
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        io::jsonl_bytes(self.iter_documents()).expect("documents serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        Ok(io::write_atomic(path, &self.to_jsonl())?)
    }
}

/// Loads and validates a corpus JSONL file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_corpus(&bytes)
}

pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Malformed {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut docs = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(raw_line).map_err(|e| CorpusError::Malformed {
                line,
                message: e.to_string(),
            })?;
        let authored_at = NaiveDate::parse_from_str(&raw.authored_at, "%Y-%m-%d")
            .ok()
            .filter(|_| raw.authored_at.len() == 10)
            .ok_or_else(|| CorpusError::InvalidDate {
                line,
                value: raw.authored_at.clone(),
            })?;
        if tokenize(&raw.text).is_empty() {
            return Err(CorpusError::EmptyText {
                line,
                doc_id: raw.doc_id,
            });
        }
        if let Some(&first) = seen.get(&raw.doc_id) {
            return Err(CorpusError::DuplicateDocId {
                doc_id: raw.doc_id,
                first_line: first,
                second_line: line,
            });
        }
        seen.insert(raw.doc_id.clone(), line);
        docs.push(Document {
            patient_id: PatientId(raw.patient_id),
            doc_id: DocId(raw.doc_id),
            authored_at,
            doc_type: raw.doc_type,
            text: raw.text,
        });
    }
    Corpus::from_documents(docs)
}

/// Maximal runs of non-whitespace characters, in order.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            overlap: 100,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::ZeroChunkSize);
        }
        if self.overlap >= self.chunk_size {
            return Err(ChunkError::OverlapTooLarge {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }

    /// `max(1, ceil((T - overlap) / stride))`.
    pub fn expected_count(&self, n_tokens: usize) -> usize {
        let rest = n_tokens.saturating_sub(self.overlap);
        rest.div_ceil(self.stride()).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: ChunkId,
    pub patient_id: PatientId,
    pub doc_id: DocId,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

impl Chunk {
    pub fn n_tokens(&self) -> usize {
        self.token_end - self.token_start
    }
}

pub fn chunk_id(doc_id: &DocId, ordinal: usize) -> ChunkId {
    ChunkId(format!("{}:{:05}", doc_id, ordinal))
}

/// Sliding-window chunking with `stride = chunk_size - overlap`.
pub fn chunk_document(doc: &Document, params: ChunkParams) -> Result<Vec<Chunk>, ChunkError> {
    params.validate()?;
    let tokens = tokenize(&doc.text);
    let total = tokens.len();
    let mut chunks = Vec::with_capacity(params.expected_count(total));
    let mut start = 0;
    loop {
        let end = (start + params.chunk_size).min(total);
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, chunks.len()),
            patient_id: doc.patient_id.clone(),
            doc_id: doc.doc_id.clone(),
            token_start: start,
            token_end: end,
            text: tokens[start..end].join(" "),
        });
        if end >= total {
            break;
        }
        start += params.stride();
    }
    Ok(chunks)
}

/// Chunks every document; output order follows the corpus order.
pub fn chunk_corpus(corpus: &Corpus, params: ChunkParams) -> Result<Vec<Chunk>, ChunkError> {
    params.validate()?;
    let docs: Vec<&Document> = corpus.iter_documents().collect();
    let per_doc: Result<Vec<Vec<Chunk>>, ChunkError> = docs
        .par_iter()
        .map(|d| chunk_document(d, params))
        .collect();
    Ok(per_doc?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, patient: &str, date: &str, text: &str) -> Document {
        Document {
            patient_id: patient.into(),
            doc_id: id.into(),
            authored_at: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            doc_type: "note".into(),
            text: text.into(),
        }
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("stage II,  ER+"), vec!["stage", "II,", "ER+"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize(&words(2200)).len(), 2200);
    }

    #[test]
    fn chunk_spans_match_stride_rule() {
        let d = doc("d1", "p1", "2020-01-01", &words(2200));
        let spans: Vec<_> = chunk_document(&d, ChunkParams::default())
            .unwrap()
            .iter()
            .map(|c| (c.token_start, c.token_end))
            .collect();
        assert_eq!(spans, vec![(0, 1000), (900, 1900), (1800, 2200)]);
    }

    #[test]
    fn short_document_is_one_chunk() {
        let d = doc("d1", "p1", "2020-01-01", &words(500));
        let chunks = chunk_document(&d, ChunkParams::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].token_start, chunks[0].token_end), (0, 500));
        assert_eq!(chunks[0].chunk_id.as_str(), "d1:00000");
    }

    #[test]
    fn overlap_must_be_below_chunk_size() {
        let d = doc("d1", "p1", "2020-01-01", "a b c");
        let err = chunk_document(
            &d,
            ChunkParams {
                chunk_size: 10,
                overlap: 10,
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            ChunkError::OverlapTooLarge {
                chunk_size: 10,
                overlap: 10
            }
        );
    }

    #[test]
    fn default_overlap_is_ten_percent() {
        let p = ChunkParams::default();
        assert_eq!(p.overlap * 10, p.chunk_size);
    }

    #[test]
    fn parse_sorts_by_date() {
        let jsonl = concat!(
            r#"{"patient_id":"p1","doc_id":"d2","authored_at":"2021-05-01","doc_type":"note","text":"later"}"#,
            "\n",
            r#"{"patient_id":"p2","doc_id":"d3","authored_at":"2020-01-01","doc_type":"note","text":"x"}"#,
            "\n",
            r#"{"patient_id":"p1","doc_id":"d1","authored_at":"2020-05-01","doc_type":"note","text":"earlier"}"#,
            "\n"
        );
        let c = parse_corpus(jsonl.as_bytes()).unwrap();
        assert_eq!(c.n_patients(), 2);
        let p1: Vec<_> = c
            .documents(&"p1".into())
            .iter()
            .map(|d| d.doc_id.as_str())
            .collect();
        assert_eq!(p1, vec!["d1", "d2"]);
    }

    #[test]
    fn duplicate_doc_id_names_both_lines() {
        let jsonl = concat!(
            r#"{"patient_id":"p1","doc_id":"d1","authored_at":"2021-05-01","doc_type":"note","text":"a"}"#,
            "\n",
            r#"{"patient_id":"p2","doc_id":"d1","authored_at":"2020-01-01","doc_type":"note","text":"b"}"#,
            "\n"
        );
        let err = parse_corpus(jsonl.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"d1\"") && msg.contains("1") && msg.contains("2"), "{msg}");
        assert!(matches!(
            err,
            CorpusError::DuplicateDocId {
                first_line: 1,
                second_line: 2,
                ..
            }
        ));
    }

    #[test]
    fn bad_records_are_reported_with_line() {
        let bad_date = r#"{"patient_id":"p1","doc_id":"d1","authored_at":"2021-13-01","doc_type":"n","text":"a"}"#;
        assert!(matches!(
            parse_corpus(bad_date.as_bytes()),
            Err(CorpusError::InvalidDate { line: 1, .. })
        ));
        let empty = r#"{"patient_id":"p1","doc_id":"d1","authored_at":"2021-01-01","doc_type":"n","text":"   "}"#;
        assert!(matches!(
            parse_corpus(empty.as_bytes()),
            Err(CorpusError::EmptyText { line: 1, .. })
        ));
        let malformed = format!("{empty}\n{{not json");
        assert!(matches!(
            parse_corpus(malformed.as_bytes()),
            Err(CorpusError::EmptyText { .. }) | Err(CorpusError::Malformed { line: 2, .. })
        ));
        let only_malformed = "\n{not json";
        assert!(matches!(
            parse_corpus(only_malformed.as_bytes()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }
}
