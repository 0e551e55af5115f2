//! Evaluation harness: categories, P/R/F1, Oracle Top-k, hallucination
//! metrics, consistency checks and stratified reports.

mod interchange;
mod metrics;
mod report;

pub use interchange::{read_cohorts, write_cohorts, CohortRecord, GoldMatrix};
pub use metrics::{
    categorize, confusion, fp_count, hallucination_ratio, intersection_check, macro_prf, micro_prf, oracle_topk,
    paraphrase_check, round_pct, subtype_check, violation_pct, Category, Confusion, ParaphraseDiff, PrfScores,
    Thresholds,
};
pub use report::{
    averaging_for, cohorts_hash, consistency_report, doc_count_terciles, evaluate_system, Averaging,
    CategoryScores, ConsistencyReport, ContainmentRow, EvalReport, ParaphraseRow, Prf, QueryScore,
    ReportMetadata, StratumRow, SystemReport, TercileBounds, Terciles,
};

use thiserror::Error;

use crate::ids::{PatientId, QueryId};
use crate::io::IoError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid thresholds alpha={alpha} beta={beta}; need 1 <= beta < alpha")]
    InvalidThresholds { alpha: usize, beta: usize },
    #[error("patient {0} is not in the population")]
    NotInPopulation(PatientId),
    #[error("cannot average an empty list of queries")]
    EmptyList,
    #[error("hallucination ratio is undefined when TP + FN = 0 (zero-result query); use fp_count")]
    HallucinationUndefined,
    #[error("prediction has no ranking")]
    MissingRanking,
    #[error("no cohort for query {0}")]
    MissingCohort(QueryId),
    #[error("no gold cohort for query {0}")]
    MissingGold(QueryId),
    #[error("gold cohort of {query} contains {patient}, who is not in the population")]
    GoldOutsidePopulation { query: QueryId, patient: PatientId },
    #[error("cohort file line {line}: {message}")]
    BadCohortRecord { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Csv(e.to_string())
    }
}
