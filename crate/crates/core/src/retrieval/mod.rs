//! Dense-retrieval baselines: retriever-only cohorts and retrieve-then-read.

mod reader;

pub use reader::{
    normalize_answer, prompt_hash, ChatReader, ChatReaderConfig, ContextChunk, MockReader, ReadRequest, Reader,
    ReaderError, ReaderQuery, PROMPT_TEMPLATE,
};

pub use crate::cohort::Cohort;

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_corpus, Chunk, ChunkError, ChunkParams, Corpus};
use crate::embed::{DenseIndex, EmbedError, Embedder, IndexError, SearchHit};
use crate::ids::{ChunkId, PatientId};
use crate::num::Scalar;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("embedding the query failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("the index is empty")]
    EmptyIndex,
    #[error("chunk {0} is in the index but not in the chunk store")]
    UnknownChunk(ChunkId),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error("could not build reader thread pool: {0}")]
    ThreadPool(String),
}

/// How chunk scores combine into a patient score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientScore {
    #[default]
    Max,
    Mean,
}

/// Chunk texts and document dates, keyed by chunk id.
pub struct ChunkStore {
    chunks: HashMap<ChunkId, Chunk>,
    doc_dates: HashMap<crate::ids::DocId, NaiveDate>,
}

impl ChunkStore {
    pub fn from_corpus(corpus: &Corpus, params: ChunkParams) -> Result<Self, ChunkError> {
        let chunks = chunk_corpus(corpus, params)?;
        Ok(Self::new(chunks, corpus))
    }

    pub fn new(chunks: Vec<Chunk>, corpus: &Corpus) -> Self {
        Self {
            chunks: chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect(),
            doc_dates: corpus
                .iter_documents()
                .map(|d| (d.doc_id.clone(), d.authored_at))
                .collect(),
        }
    }

    pub fn get(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    fn context<'a>(&'a self, hit: &ScoredHit) -> Result<ContextChunk<'a>, RetrievalError> {
        let chunk = self
            .chunks
            .get(&hit.chunk_id)
            .ok_or_else(|| RetrievalError::UnknownChunk(hit.chunk_id.clone()))?;
        let authored_at = *self
            .doc_dates
            .get(&chunk.doc_id)
            .ok_or_else(|| RetrievalError::UnknownChunk(hit.chunk_id.clone()))?;
        Ok(ContextChunk {
            chunk,
            authored_at,
            score: hit.score,
        })
    }
}

/// A search hit with the score widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub chunk_id: ChunkId,
    pub patient_id: PatientId,
    pub score: f64,
}

impl<S: Scalar> From<SearchHit<S>> for ScoredHit {
    fn from(h: SearchHit<S>) -> Self {
        Self {
            chunk_id: h.chunk_id,
            patient_id: h.patient_id,
            score: h.score.to_f64_lossy(),
        }
    }
}

/// Embeds the query and returns the top-k chunks.
pub fn retrieve_hits<S: Scalar, E: Embedder<S> + ?Sized>(
    index: &DenseIndex<S>,
    query_text: &str,
    k: usize,
    embedder: &E,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    index.check_fingerprint(&embedder.fingerprint())?;
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let q = embedder.embed_one(query_text)?;
    Ok(index.search(&q, k)?.into_iter().map(ScoredHit::from).collect())
}

/// Groups hits by patient. Ranking is by aggregated score, ties by patient id.
pub fn group_by_patient(hits: &[ScoredHit], mode: PatientScore) -> Cohort {
    let mut acc: BTreeMap<&PatientId, (f64, f64, usize)> = BTreeMap::new();
    for h in hits {
        let e = acc.entry(&h.patient_id).or_insert((f64::NEG_INFINITY, 0.0, 0));
        e.0 = e.0.max(h.score);
        e.1 += h.score;
        e.2 += 1;
    }
    let mut ranked: Vec<(PatientId, f64)> = acc
        .into_iter()
        .map(|(p, (max, sum, n))| {
            let score = match mode {
                PatientScore::Max => max,
                PatientScore::Mean => sum / n as f64,
            };
            (p.clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Cohort::ranked(ranked).expect("grouped ids are unique")
}

/// Retriever-only cohort: the patients owning the top-k chunks.
pub fn retrieve_cohort<S: Scalar, E: Embedder<S> + ?Sized>(
    index: &DenseIndex<S>,
    query_text: &str,
    k: usize,
    embedder: &E,
) -> Result<Cohort, RetrievalError> {
    let hits = retrieve_hits(index, query_text, k, embedder)?;
    Ok(group_by_patient(&hits, PatientScore::Max))
}

/// One patient's chunks by descending score (ties by chunk id), cut at the
/// first chunk that would exceed the token budget or the chunk cap.
pub fn pack_patient_context<'a>(
    hits: &[ContextChunk<'a>],
    context_budget: usize,
    max_chunks: usize,
) -> Vec<ContextChunk<'a>> {
    let mut sorted = hits.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
    });
    let mut used = 0;
    let mut out = Vec::new();
    for c in sorted {
        if out.len() >= max_chunks || used + c.chunk.n_tokens() > context_budget {
            break;
        }
        used += c.chunk.n_tokens();
        out.push(c);
    }
    out
}

/// Splits packed chunks into consecutive groups of at most `budget` tokens,
/// in rank order and without overlap. At most `max_groups` groups are kept.
pub fn split_for_calls<'a>(
    packed: &[ContextChunk<'a>],
    budget: usize,
    max_groups: usize,
) -> Vec<Vec<ContextChunk<'a>>> {
    let mut groups: Vec<Vec<ContextChunk<'a>>> = Vec::new();
    let mut used = 0;
    for c in packed {
        let n = c.chunk.n_tokens();
        match groups.last_mut() {
            Some(g) if used + n <= budget => {
                g.push(*c);
                used += n;
            }
            _ => {
                if groups.len() == max_groups {
                    break;
                }
                groups.push(vec![*c]);
                used = n;
            }
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderVerdict {
    pub patient_id: PatientId,
    pub decision: Decision,
    pub evidence_chunk_ids: Vec<ChunkId>,
    pub calls_used: usize,
    /// Some reply stayed unreadable after a reprompt.
    #[serde(default)]
    pub indeterminate: bool,
    /// Set when the reader failed; the patient is then excluded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadConfig {
    pub max_calls: usize,
    /// Token budget of one reader call.
    pub context_budget: usize,
    pub max_chunks: usize,
    /// Concurrent patient reads; `None` uses the global pool.
    pub parallelism: Option<usize>,
}

impl Default for ReadConfig {
    fn default() -> Self {
        Self {
            max_calls: 3,
            context_budget: 128_000,
            max_chunks: usize::MAX,
            parallelism: None,
        }
    }
}

/// Asks the reader about one patient: up to `max_calls` calls over
/// rank-ordered evidence, OR of the yes answers, one reprompt per
/// unreadable reply.
pub fn read_patient(
    patient_id: &PatientId,
    query: &ReaderQuery,
    packed: &[ContextChunk<'_>],
    reader: &dyn Reader,
    max_calls: usize,
    call_budget: usize,
) -> Result<ReaderVerdict, ReaderError> {
    assert!(max_calls >= 1, "max_calls must be at least 1");
    let mut verdict = ReaderVerdict {
        patient_id: patient_id.clone(),
        decision: Decision::No,
        evidence_chunk_ids: Vec::new(),
        calls_used: 0,
        indeterminate: false,
        error: None,
    };
    for group in split_for_calls(packed, call_budget, max_calls) {
        if verdict.calls_used >= max_calls {
            break;
        }
        verdict
            .evidence_chunk_ids
            .extend(group.iter().map(|c| c.chunk.chunk_id.clone()));
        let mut answer = None;
        for reprompt in [false, true] {
            if verdict.calls_used >= max_calls {
                break;
            }
            verdict.calls_used += 1;
            let raw = reader.answer(&ReadRequest {
                query,
                chunks: &group,
                reprompt,
            })?;
            answer = normalize_answer(&raw);
            if answer.is_some() {
                break;
            }
        }
        match answer {
            Some(true) => {
                verdict.decision = Decision::Yes;
                verdict.indeterminate = false;
                return Ok(verdict);
            }
            Some(false) => {}
            None => verdict.indeterminate = true,
        }
    }
    Ok(verdict)
}

/// Result of a retrieve-then-read run for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadRun {
    pub cohort: Cohort,
    /// One per retrieved patient, sorted by patient id.
    pub verdicts: Vec<ReaderVerdict>,
}

impl ReadRun {
    pub fn n_errors(&self) -> usize {
        self.verdicts.iter().filter(|v| v.error.is_some()).count()
    }
}

/// Retrieval followed by a per-patient reader. Reader failures exclude the
/// patient and are recorded on its verdict.
pub fn retrieve_then_read<S: Scalar, E: Embedder<S> + ?Sized>(
    index: &DenseIndex<S>,
    store: &ChunkStore,
    query: &ReaderQuery,
    k: usize,
    embedder: &E,
    reader: &dyn Reader,
    config: &ReadConfig,
) -> Result<ReadRun, RetrievalError> {
    if reader.needs_ast() && query.ast.is_none() {
        return Err(ReaderError::MissingQueryAst.into());
    }
    let hits = retrieve_hits(index, &query.text, k, embedder)?;
    read_hits(&hits, store, query, reader, config)
}

/// The reading half of [`retrieve_then_read`], for hits already retrieved.
pub fn read_hits(
    hits: &[ScoredHit],
    store: &ChunkStore,
    query: &ReaderQuery,
    reader: &dyn Reader,
    config: &ReadConfig,
) -> Result<ReadRun, RetrievalError> {
    let retrieved = group_by_patient(hits, PatientScore::Max);
    let mut per_patient: BTreeMap<&PatientId, Vec<ContextChunk<'_>>> = BTreeMap::new();
    for h in hits {
        per_patient.entry(&h.patient_id).or_default().push(store.context(h)?);
    }
    let total_budget = config.context_budget.saturating_mul(config.max_calls);
    let work: Vec<(&PatientId, Vec<ContextChunk<'_>>)> = per_patient.into_iter().collect();
    let read_all = || -> Vec<ReaderVerdict> {
        work.par_iter()
            .map(|(pid, chunks)| {
                let packed = pack_patient_context(chunks, total_budget, config.max_chunks);
                read_patient(pid, query, &packed, reader, config.max_calls, config.context_budget)
                    .unwrap_or_else(|e| {
                        log::warn!("reader failed for patient {pid}: {e}");
                        ReaderVerdict {
                            patient_id: (*pid).clone(),
                            decision: Decision::No,
                            evidence_chunk_ids: Vec::new(),
                            calls_used: 0,
                            indeterminate: false,
                            error: Some(e.to_string()),
                        }
                    })
            })
            .collect()
    };
    let verdicts = match config.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| RetrievalError::ThreadPool(e.to_string()))?
            .install(read_all),
        None => read_all(),
    };
    let yes: std::collections::BTreeSet<&PatientId> = verdicts
        .iter()
        .filter(|v| v.decision == Decision::Yes && v.error.is_none())
        .map(|v| &v.patient_id)
        .collect();
    let mut cohort = retrieved;
    cohort.retain(|p| yes.contains(p));
    Ok(ReadRun { cohort, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: &str, n: usize) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            patient_id: "p".into(),
            doc_id: "d".into(),
            token_start: 0,
            token_end: n,
            text: vec!["w"; n].join(" "),
        }
    }

    fn ctx(c: &Chunk, score: f64) -> ContextChunk<'_> {
        ContextChunk {
            chunk: c,
            authored_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            score,
        }
    }

    #[test]
    fn grouping_dedups_and_takes_max() {
        let h = |c: &str, p: &str, s: f64| ScoredHit {
            chunk_id: c.into(),
            patient_id: p.into(),
            score: s,
        };
        let cohort = group_by_patient(&[h("a", "p1", 0.9), h("b", "p1", 0.5), h("c", "p2", 0.7)], PatientScore::Max);
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort.ranking().unwrap(), &[("p1".into(), 0.9), ("p2".into(), 0.7)]);
    }

    #[test]
    fn packing_orders_and_truncates() {
        let cs: Vec<Chunk> = (0..5).map(|i| chunk(&format!("c{i}"), 10)).collect();
        let hits: Vec<_> = cs.iter().enumerate().map(|(i, c)| ctx(c, i as f64)).collect();
        let packed = pack_patient_context(&hits, 1000, 3);
        let ids: Vec<_> = packed.iter().map(|c| c.chunk.chunk_id.as_str()).collect();
        assert_eq!(ids, ["c4", "c3", "c2"]);
        assert_eq!(pack_patient_context(&hits, 25, 10).len(), 2);
        assert!(pack_patient_context(&[], 10, 10).is_empty());

        let tie = [ctx(&cs[1], 0.5), ctx(&cs[0], 0.5)];
        let packed = pack_patient_context(&tie, 100, 10);
        assert_eq!(packed[0].chunk.chunk_id.as_str(), "c0");
    }

    struct Scripted(Vec<&'static str>, std::sync::Mutex<usize>);

    impl Reader for Scripted {
        fn name(&self) -> String {
            "scripted".into()
        }

        fn answer(&self, _: &ReadRequest<'_>) -> Result<String, ReaderError> {
            let mut i = self.1.lock().unwrap();
            *i += 1;
            Ok(self.0[*i - 1].to_string())
        }
    }

    fn q() -> ReaderQuery {
        ReaderQuery {
            text: "q".into(),
            ast: None,
        }
    }

    #[test]
    fn or_of_yes_short_circuits() {
        let cs: Vec<Chunk> = (0..3).map(|i| chunk(&format!("c{i}"), 10)).collect();
        let hits: Vec<_> = cs.iter().map(|c| ctx(c, 1.0)).collect();
        let reader = Scripted(vec!["NO", "YES", "NO"], Default::default());
        let v = read_patient(&"p".into(), &q(), &hits, &reader, 3, 10).unwrap();
        assert_eq!(v.decision, Decision::Yes);
        assert_eq!(v.calls_used, 2);
    }

    #[test]
    fn empty_evidence_is_no_without_calls() {
        let reader = Scripted(vec![], Default::default());
        let v = read_patient(&"p".into(), &q(), &[], &reader, 3, 10).unwrap();
        assert_eq!((v.decision, v.calls_used), (Decision::No, 0));
    }

    #[test]
    fn unreadable_twice_is_indeterminate_no() {
        let c = chunk("c0", 5);
        let hits = [ctx(&c, 1.0)];
        let reader = Scripted(vec!["maybe", "perhaps"], Default::default());
        let v = read_patient(&"p".into(), &q(), &hits, &reader, 3, 10).unwrap();
        assert_eq!(v.decision, Decision::No);
        assert!(v.indeterminate);
        assert_eq!(v.calls_used, 2);
        let reader = Scripted(vec!["maybe", "yes"], Default::default());
        let v = read_patient(&"p".into(), &q(), &hits, &reader, 3, 10).unwrap();
        assert_eq!(v.decision, Decision::Yes);
        assert!(!v.indeterminate);
    }

    #[test]
    fn split_respects_budget_and_call_cap() {
        let cs: Vec<Chunk> = (0..5).map(|i| chunk(&format!("c{i}"), 6)).collect();
        let hits: Vec<_> = cs.iter().map(|c| ctx(c, 1.0)).collect();
        let groups = split_for_calls(&hits, 12, 2);
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), [2, 2]);
    }
}
