//! End-to-end stages over on-disk artifacts. Each stage reads its inputs from
//! the configured directories, writes its outputs atomically and stamps the
//! directory manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Cohort;
use crate::config::{ConfigError, EmbedderChoice, Manifest, ReaderChoice, RunConfig, TOOL_VERSION};
use crate::corpus::{chunk_corpus, load_corpus, ChunkError, Corpus, CorpusError};
use crate::embed::{build_index, EmbedError, Embedder, Embedding, Fingerprint, HashEmbedder, HttpEmbedder, IndexError};
use crate::eval::{
    consistency_report, doc_count_terciles, evaluate_system, read_cohorts, write_cohorts, ConsistencyReport,
    EvalError, EvalReport, GoldMatrix, ReportMetadata,
};
use crate::ids::{PatientId, QueryId};
use crate::io::{self, short_hash, IoError};
use crate::kb::{
    build_kb_shared, build_patient_models, ConsolidationConfig, ExtractorConfig, KbError, KnowledgeBase, Ontology,
    RuleExtractor,
};
use crate::kb::ontology::OntologyLoadError;
use crate::kb::Conflict;
use crate::retrieval::{
    group_by_patient, read_hits, retrieve_hits, ChatReader, ChunkStore, MockReader, PatientScore, Reader,
    prompt_hash, ReaderQuery, ReaderVerdict, RetrievalError,
};
use crate::squerl::{execute, load_query_bank, parse_bank, validate_bank, BankError, QueryAst, QueryRecord};
use crate::synthgen::{self, Benchmark, SynthError};
use crate::VectorIndex;

pub const INDEX_FILE: &str = "index.bin";
pub const KB_FILE: &str = "kb.json";
pub const CONFLICTS_FILE: &str = "conflicts.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const COHORTS_DIR: &str = "cohorts";

/// How a failure should be reported to an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Usage,
    Data,
    External,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Ontology(#[from] OntologyLoadError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("unknown query {0}")]
    UnknownQuery(QueryId),
    #[error("{path} was produced under config {found}, current config is {expected} (use --force to score anyway)")]
    ConfigMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{0} reader call(s) failed against the external service")]
    ReaderFailures(usize),
    #[error("invalid report file {path}: {message}")]
    BadReport { path: String, message: String },
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownQuery(_) => ErrorClass::Usage,
            PipelineError::Embed(e) if e.is_external() => ErrorClass::External,
            PipelineError::Index(IndexError::Embed { source, .. }) if source.is_external() => ErrorClass::External,
            PipelineError::Retrieval(RetrievalError::Embed(e)) if e.is_external() => ErrorClass::External,
            PipelineError::Retrieval(RetrievalError::Reader(e)) if e.is_external() => ErrorClass::External,
            PipelineError::ReaderFailures(_) => ErrorClass::External,
            _ => ErrorClass::Data,
        }
    }
}

/// The retrieval systems and the symbolic engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Retriever,
    Read,
    Symbolic,
}

impl System {
    pub const ALL: [System; 3] = [System::Retriever, System::Read, System::Symbolic];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Retriever => "retriever",
            System::Read => "read",
            System::Symbolic => "symbolic",
        }
    }

    pub fn cohort_file(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

/// Caps the global worker pool. Call once, before any parallel work.
pub fn init_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Fails only if the pool already exists, in which case it keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Built-in hashing embedder or the HTTP one, chosen by config.
pub enum AnyEmbedder {
    Builtin(HashEmbedder),
    Http(Box<HttpEmbedder>),
}

impl AnyEmbedder {
    pub fn from_config(choice: &EmbedderChoice) -> Self {
        match choice {
            EmbedderChoice::Builtin { d, seed } => AnyEmbedder::Builtin(HashEmbedder::new(*d, *seed)),
            EmbedderChoice::External(c) => AnyEmbedder::Http(Box::new(HttpEmbedder::new(c.clone()))),
        }
    }
}

impl Embedder<f32> for AnyEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        match self {
            AnyEmbedder::Builtin(e) => Embedder::<f32>::fingerprint(e),
            AnyEmbedder::Http(e) => Embedder::<f32>::fingerprint(e.as_ref()),
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<f32>>, EmbedError> {
        match self {
            AnyEmbedder::Builtin(e) => e.embed_batch(texts),
            AnyEmbedder::Http(e) => e.embed_batch(texts),
        }
    }
}

pub fn make_reader(config: &RunConfig, ontology: Arc<Ontology>) -> Box<dyn Reader> {
    match &config.reader {
        ReaderChoice::Mock => Box::new(MockReader::new(
            ontology,
            ExtractorConfig::default(),
            ConsolidationConfig::default(),
        )),
        ReaderChoice::External(c) => Box::new(ChatReader::new(c.clone())),
    }
}

fn data_path(config: &RunConfig, name: &str) -> PathBuf {
    config.paths.data_dir.join(name)
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.paths.out_dir.join(name)
}

fn stamp(config: &RunConfig, dir: &Path, files: &[&str]) -> Result<(), IoError> {
    stamp_manifest(Manifest::new(config), dir, files)
}

fn stamp_manifest(mut m: Manifest, dir: &Path, files: &[&str]) -> Result<(), IoError> {
    for f in files {
        m.record(dir, f)?;
    }
    m.write(dir)
}

/// Generator parameters with the run seed applied.
pub fn generator_params(config: &RunConfig) -> synthgen::GeneratorParams {
    let mut p = config.generator.clone();
    p.seed = config.seed;
    p
}

/// Generates the benchmark into the data directory.
pub fn synth(config: &RunConfig) -> Result<Benchmark, PipelineError> {
    let bench = synthgen::generate(&generator_params(config))?;
    let dir = &config.paths.data_dir;
    bench.write(dir)?;
    stamp(
        config,
        dir,
        &[
            synthgen::ONTOLOGY_FILE,
            synthgen::CORPUS_FILE,
            synthgen::ABSTRACTIONS_FILE,
            synthgen::CONTRADICTIONS_FILE,
            synthgen::BANK_FILE,
            synthgen::GOLD_FILE,
        ],
    )?;
    Ok(bench)
}

pub fn load_ontology(config: &RunConfig) -> Result<Arc<Ontology>, PipelineError> {
    Ok(Arc::new(Ontology::load(&data_path(config, synthgen::ONTOLOGY_FILE))?))
}

pub fn load_data_corpus(config: &RunConfig) -> Result<Corpus, PipelineError> {
    Ok(load_corpus(&data_path(config, synthgen::CORPUS_FILE))?)
}

/// Full query records, or `{query_id, nl_text}` lines translated on load.
pub fn load_bank(config: &RunConfig, ontology: &Ontology) -> Result<(Vec<QueryRecord>, Vec<QueryAst>), PipelineError> {
    let path = data_path(config, synthgen::BANK_FILE);
    let bank = match load_query_bank(&path) {
        Ok(b) => b,
        Err(BankError::Io(IoError::Parse { .. })) | Err(BankError::Io(IoError::Json { .. })) => {
            parse_bank(&path, ontology)?
        }
        Err(e) => return Err(e.into()),
    };
    let asts = validate_bank(&bank, ontology)?;
    Ok((bank, asts))
}

/// Gold cohorts over the corpus population.
pub fn load_gold(config: &RunConfig, corpus: &Corpus, bank: &[QueryRecord]) -> Result<GoldMatrix, PipelineError> {
    let gold = GoldMatrix::load(
        &data_path(config, synthgen::GOLD_FILE),
        corpus.patient_ids().cloned().collect(),
    )?;
    gold.validate(bank)?;
    Ok(gold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexSummary {
    pub n_chunks: usize,
    pub dim: usize,
    pub fingerprint: String,
}

/// Chunks the corpus, embeds every chunk and persists the index.
pub fn index(config: &RunConfig) -> Result<IndexSummary, PipelineError> {
    let corpus = load_data_corpus(config)?;
    let chunks = chunk_corpus(&corpus, config.chunk_params())?;
    let embedder = AnyEmbedder::from_config(&config.embedder);
    let idx: VectorIndex = build_index(&chunks, &embedder)?;
    io::create_dir_all(&config.paths.out_dir)?;
    idx.save(&out_path(config, INDEX_FILE))?;
    stamp(config, &config.paths.out_dir, &[INDEX_FILE])?;
    Ok(IndexSummary {
        n_chunks: idx.len(),
        dim: idx.dim(),
        fingerprint: idx.fingerprint().to_string(),
    })
}

/// One line of the conflict audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictLogLine {
    pub patient_id: PatientId,
    #[serde(flatten)]
    pub conflict: Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KbSummary {
    pub n_patients: usize,
    pub n_events: usize,
    pub n_conflicts: usize,
}

pub fn build_kb_from_corpus(corpus: &Corpus, ontology: Arc<Ontology>) -> Result<KnowledgeBase, PipelineError> {
    let extractor = RuleExtractor::new(&ontology, ExtractorConfig::default());
    let models = build_patient_models(corpus, &ontology, &extractor, &ConsolidationConfig::default())?;
    Ok(build_kb_shared(models, ontology)?)
}

/// Extract, consolidate and index every patient; writes the KB and the conflict log.
pub fn build_kb(config: &RunConfig) -> Result<KbSummary, PipelineError> {
    let ontology = load_ontology(config)?;
    let corpus = load_data_corpus(config)?;
    let kb = build_kb_from_corpus(&corpus, ontology)?;
    io::create_dir_all(&config.paths.out_dir)?;
    kb.save(&out_path(config, KB_FILE))?;
    let log: Vec<ConflictLogLine> = kb
        .models()
        .iter()
        .flat_map(|m| {
            m.conflicts.iter().map(|c| ConflictLogLine {
                patient_id: m.patient_id.clone(),
                conflict: c.clone(),
            })
        })
        .collect();
    io::write_jsonl(&out_path(config, CONFLICTS_FILE), &log)?;
    stamp(config, &config.paths.out_dir, &[KB_FILE, CONFLICTS_FILE])?;
    Ok(KbSummary {
        n_patients: kb.patients().len(),
        n_events: kb.models().iter().map(|m| m.events.len()).sum(),
        n_conflicts: log.len(),
    })
}

/// Reader verdicts for one query, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLogLine {
    pub query_id: QueryId,
    pub verdicts: Vec<ReaderVerdict>,
}

/// Cohorts of one system, plus reader verdicts when the system reads.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub system: System,
    pub cohorts: BTreeMap<QueryId, Cohort>,
    pub verdicts: Vec<VerdictLogLine>,
}

impl QueryRun {
    pub fn reader_errors(&self) -> usize {
        self.verdicts
            .iter()
            .flat_map(|l| &l.verdicts)
            .filter(|v| v.error.is_some())
            .count()
    }
}

fn select<'a>(
    bank: &'a [QueryRecord],
    asts: &'a [QueryAst],
    only: Option<&QueryId>,
) -> Result<Vec<(&'a QueryRecord, &'a QueryAst)>, PipelineError> {
    let all: Vec<_> = bank.iter().zip(asts).collect();
    match only {
        None => Ok(all),
        Some(q) => {
            let hit: Vec<_> = all.into_iter().filter(|(r, _)| &r.query_id == q).collect();
            if hit.is_empty() {
                return Err(PipelineError::UnknownQuery(q.clone()));
            }
            Ok(hit)
        }
    }
}

pub fn run_symbolic(kb: &KnowledgeBase, queries: &[(&QueryRecord, &QueryAst)]) -> BTreeMap<QueryId, Cohort> {
    queries
        .par_iter()
        .map(|(r, ast)| (r.query_id.clone(), execute(ast, kb)))
        .collect()
}

pub fn run_retriever<E: Embedder<f32> + ?Sized>(
    index: &VectorIndex,
    embedder: &E,
    k: usize,
    score: PatientScore,
    queries: &[(&QueryRecord, &QueryAst)],
) -> Result<BTreeMap<QueryId, Cohort>, PipelineError> {
    queries
        .par_iter()
        .map(|(r, _)| {
            let hits = retrieve_hits(index, &r.nl_text, k, embedder)?;
            Ok((r.query_id.clone(), group_by_patient(&hits, score)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn run_read<E: Embedder<f32> + ?Sized>(
    index: &VectorIndex,
    store: &ChunkStore,
    embedder: &E,
    reader: &dyn Reader,
    config: &RunConfig,
    jobs: Option<usize>,
    queries: &[(&QueryRecord, &QueryAst)],
) -> Result<(BTreeMap<QueryId, Cohort>, Vec<VerdictLogLine>), PipelineError> {
    let read_cfg = config.read_config(jobs);
    let mut cohorts = BTreeMap::new();
    let mut log = Vec::new();
    for (r, ast) in queries {
        let hits = retrieve_hits(index, &r.nl_text, config.top_k_chunks, embedder)?;
        let rq = ReaderQuery {
            text: r.nl_text.clone(),
            ast: Some((*ast).clone()),
        };
        let run = read_hits(&hits, store, &rq, reader, &read_cfg)?;
        cohorts.insert(r.query_id.clone(), run.cohort);
        log.push(VerdictLogLine {
            query_id: r.query_id.clone(),
            verdicts: run.verdicts,
        });
    }
    Ok((cohorts, log))
}

pub fn verdicts_file(system: System) -> String {
    format!("{}.verdicts.jsonl", system.as_str())
}

/// Runs one system over the bank (or a single query) and writes its cohort file.
pub fn query(
    config: &RunConfig,
    system: System,
    only: Option<&QueryId>,
    jobs: Option<usize>,
) -> Result<QueryRun, PipelineError> {
    let ontology = load_ontology(config)?;
    let (bank, asts) = load_bank(config, &ontology)?;
    let queries = select(&bank, &asts, only)?;
    let mut verdicts = Vec::new();
    let cohorts = match system {
        System::Symbolic => {
            let kb = KnowledgeBase::load(&out_path(config, KB_FILE))?;
            run_symbolic(&kb, &queries)
        }
        System::Retriever => {
            let idx = VectorIndex::load(&out_path(config, INDEX_FILE))?;
            let embedder = AnyEmbedder::from_config(&config.embedder);
            run_retriever(&idx, &embedder, config.top_k_chunks, config.patient_score, &queries)?
        }
        System::Read => {
            let idx = VectorIndex::load(&out_path(config, INDEX_FILE))?;
            let embedder = AnyEmbedder::from_config(&config.embedder);
            let corpus = load_data_corpus(config)?;
            let store = ChunkStore::from_corpus(&corpus, config.chunk_params())?;
            let reader = make_reader(config, ontology.clone());
            let (c, v) = run_read(&idx, &store, &embedder, reader.as_ref(), config, jobs, &queries)?;
            verdicts = v;
            c
        }
    };
    let run = QueryRun {
        system,
        cohorts,
        verdicts,
    };
    if run.reader_errors() > 0 && matches!(config.reader, ReaderChoice::External(_)) {
        return Err(PipelineError::ReaderFailures(run.reader_errors()));
    }
    // A single query is an interactive probe; only whole-bank runs replace the cohort file.
    if only.is_some() {
        return Ok(run);
    }
    let dir = out_path(config, COHORTS_DIR);
    io::create_dir_all(&dir)?;
    write_cohorts(&dir.join(system.cohort_file()), &run.cohorts)?;
    let mut files = vec![system.cohort_file()];
    if system == System::Read {
        io::write_jsonl(&dir.join(verdicts_file(system)), &run.verdicts)?;
        files.push(verdicts_file(system));
    }
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    let mut manifest = Manifest::new(config);
    if system == System::Read {
        manifest.prompt_hash = Some(prompt_hash());
    }
    stamp_manifest(manifest, &dir, &names)?;
    Ok(run)
}

/// Refuses a cohort file whose manifest was written under another config.
pub fn check_provenance(config: &RunConfig, cohort_path: &Path, force: bool) -> Result<(), PipelineError> {
    let dir = cohort_path.parent().unwrap_or(Path::new("."));
    let expected = config.config_hash();
    match Manifest::read(dir)? {
        Some(m) if m.config_hash != expected && !force => Err(PipelineError::ConfigMismatch {
            path: cohort_path.display().to_string(),
            expected,
            found: m.config_hash,
        }),
        Some(m) if m.config_hash != expected => {
            log::warn!("{}: config hash {} differs, scoring anyway", cohort_path.display(), m.config_hash);
            Ok(())
        }
        Some(_) => Ok(()),
        None => {
            log::warn!("{}: no manifest, provenance unchecked", cohort_path.display());
            Ok(())
        }
    }
}

/// Scores cohort files (system name, path) against gold; writes the report JSON.
pub fn eval(config: &RunConfig, inputs: &[(String, PathBuf)], force: bool) -> Result<EvalReport, PipelineError> {
    let ontology = load_ontology(config)?;
    let (bank, _) = load_bank(config, &ontology)?;
    let corpus = load_data_corpus(config)?;
    let gold = load_gold(config, &corpus, &bank)?;
    let terciles = doc_count_terciles(&corpus.doc_counts());
    let mut systems = Vec::new();
    for (name, path) in inputs {
        check_provenance(config, path, force)?;
        let cohorts = read_cohorts(path)?;
        systems.push(evaluate_system(name, &cohorts, &gold, &bank, &terciles, config.thresholds())?);
    }
    let report = EvalReport {
        metadata: ReportMetadata {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.config_hash(),
            seed: Some(config.seed),
            alpha: config.alpha,
            beta: config.beta,
            population_size: gold.population.len(),
            n_queries: bank.len(),
            bank_hash: short_hash(&io::jsonl_bytes(&bank).expect("bank serializes")),
            gold_hash: short_hash(&std::fs::read(data_path(config, synthgen::GOLD_FILE)).map_err(|e| {
                IoError::Io {
                    path: data_path(config, synthgen::GOLD_FILE).display().to_string(),
                    source: e,
                }
            })?),
        },
        tercile_bounds: terciles.bounds.clone(),
        systems,
    };
    io::create_dir_all(&config.paths.out_dir)?;
    io::write_atomic(&out_path(config, REPORT_FILE), &report.to_json())?;
    stamp(config, &config.paths.out_dir, &[REPORT_FILE])?;
    Ok(report)
}

/// Gold-free consistency checks of one cohort file against the bank relations.
pub fn consistency(config: &RunConfig, cohort_path: &Path) -> Result<ConsistencyReport, PipelineError> {
    let ontology = load_ontology(config)?;
    let (bank, _) = load_bank(config, &ontology)?;
    let cohorts = read_cohorts(cohort_path)?;
    Ok(consistency_report(&bank, &cohorts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

pub fn render_report(path: &Path, format: ReportFormat) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let report = EvalReport::from_json(&bytes).map_err(|e| PipelineError::BadReport {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(match format {
        ReportFormat::Json => String::from_utf8(report.to_json()).expect("utf-8 json"),
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Csv => report.to_csv()?,
    })
}
