//! Seeded synthetic benchmark: ontology, rendered patient records with
//! injected contradictions, a query bank with relation annotations, and gold
//! cohorts computed from the clean abstractions alone.

mod ontology;
mod patients;
mod queries;

pub use ontology::{gen_ontology, OntologySize, STAGES};
pub use patients::{contradiction_counts, gen_patients, ContradictionKind, ContradictionRecord, GroundTruth};
pub use queries::{category_counts, gen_gold, gen_query_bank};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError};
use crate::eval::{EvalError, GoldMatrix};
use crate::ids::QueryId;
use crate::io::{self, IoError};
use crate::kb::{save_abstractions, KbError, Ontology, OntologyError};
use crate::squerl::{save_query_bank, BankError, QueryRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("ontology cannot satisfy the query bank: {0}")]
    Insufficient(String),
    #[error("query {query_id}: {message}")]
    Query { query_id: QueryId, message: String },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Uniform,
    /// `min + (max - min) * u²`: mean sits a third of the way up, long right tail.
    Skewed,
}

/// Integer distribution on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistSpec {
    pub min: usize,
    pub max: usize,
    pub shape: Shape,
}

impl DistSpec {
    pub fn validate(&self, what: &str) -> Result<(), SynthError> {
        if self.min > self.max {
            return Err(SynthError::Params(format!("{what}: min {} > max {}", self.min, self.max)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let width = (self.max - self.min) as f64;
        let u: f64 = rng.random();
        let x = match self.shape {
            Shape::Uniform => u * (width + 1.0),
            Shape::Skewed => u * u * (width + 1.0),
        };
        (self.min + x.floor() as usize).min(self.max)
    }

    pub fn mean(&self) -> f64 {
        let width = (self.max - self.min) as f64;
        match self.shape {
            Shape::Uniform => self.min as f64 + width / 2.0,
            Shape::Skewed => self.min as f64 + width / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub seed: u64,
    pub n_patients: usize,
    pub docs_per_patient: DistSpec,
    /// Target journey length; comorbidities pad journeys up to it.
    pub events_per_patient: DistSpec,
    /// Fraction of mentions rendered with a non-canonical synonym.
    pub paraphrase_rate: f64,
    pub contradiction_rate: f64,
    /// Inject contradictions in proportion to the patient's document count.
    pub contradiction_length_coupling: bool,
    pub n_queries: usize,
    pub zero_result_fraction: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            seed: 42,
            n_patients: 1000,
            docs_per_patient: DistSpec {
                min: 10,
                max: 160,
                shape: Shape::Skewed,
            },
            events_per_patient: DistSpec {
                min: 4,
                max: 14,
                shape: Shape::Uniform,
            },
            paraphrase_rate: 0.3,
            contradiction_rate: 0.03,
            contradiction_length_coupling: true,
            n_queries: 200,
            zero_result_fraction: 0.1,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, r) in [
            ("paraphrase_rate", self.paraphrase_rate),
            ("contradiction_rate", self.contradiction_rate),
            ("zero_result_fraction", self.zero_result_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::Params(format!("{name} = {r} outside [0, 1]")));
            }
        }
        self.docs_per_patient.validate("docs_per_patient")?;
        self.events_per_patient.validate("events_per_patient")?;
        if self.n_patients == 0 {
            return Err(SynthError::Params("n_patients must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one `synth` run produces.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub ontology: Ontology,
    pub corpus: Corpus,
    pub truth: GroundTruth,
    pub bank: Vec<QueryRecord>,
    pub gold: GoldMatrix,
}

pub const ONTOLOGY_FILE: &str = "ontology.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const ABSTRACTIONS_FILE: &str = "abstractions.jsonl";
pub const CONTRADICTIONS_FILE: &str = "contradictions.jsonl";
pub const BANK_FILE: &str = "queries.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";

pub fn generate(params: &GeneratorParams) -> Result<Benchmark, SynthError> {
    let ontology = gen_ontology(params.seed, OntologySize::default())?;
    let (corpus, truth) = gen_patients(params, &ontology)?;
    let bank = gen_query_bank(params.seed, &ontology, &truth, params)?;
    let gold = gen_gold(&truth.abstractions, &bank, &ontology)?;
    Ok(Benchmark {
        ontology,
        corpus,
        truth,
        bank,
        gold,
    })
}

impl Benchmark {
    /// Writes every artifact into `dir` under the fixed file names.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        io::create_dir_all(dir)?;
        io::write_atomic(&dir.join(ONTOLOGY_FILE), &self.ontology.to_json_bytes())?;
        self.corpus.save(&dir.join(CORPUS_FILE))?;
        save_abstractions(&dir.join(ABSTRACTIONS_FILE), &self.truth.abstractions)?;
        io::write_jsonl(&dir.join(CONTRADICTIONS_FILE), &self.truth.log)?;
        save_query_bank(&dir.join(BANK_FILE), &self.bank)?;
        self.gold.save(&dir.join(GOLD_FILE))?;
        Ok(())
    }
}
