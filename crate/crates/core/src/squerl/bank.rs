use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::QueryId;
use crate::io::{self, IoError};
use crate::kb::{Ontology, Polarity};

use super::translate::translate_nl_ast;
use super::{parse, ParseError, QueryAst, TranslateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExpertClass {
    Base,
    Low,
    Medium,
    Hard,
}

impl ExpertClass {
    pub const ALL: [ExpertClass; 4] = [ExpertClass::Base, ExpertClass::Low, ExpertClass::Medium, ExpertClass::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            ExpertClass::Base => "Base",
            ExpertClass::Low => "Low",
            ExpertClass::Medium => "Medium",
            ExpertClass::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// Same cohort expected.
    ParaphraseOf,
    /// This query's cohort must be inside the other's (subtype).
    ChildOf,
    /// This query refines the other (base) query.
    IntersectionOf,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub other: QueryId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub nl_text: String,
    pub squerl_text: String,
    pub expert_class: ExpertClass,
    #[serde(default)]
    pub relations: Vec<Relation>,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("duplicate query_id {0}")]
    DuplicateQuery(QueryId),
    #[error("query {query}: relation points to unknown query {other}")]
    UnknownRelationTarget { query: QueryId, other: QueryId },
    #[error("query {query}: {source}")]
    Parse {
        query: QueryId,
        #[source]
        source: ParseError,
    },
    #[error("query {query}: {source}")]
    Translate {
        query: QueryId,
        #[source]
        source: TranslateError,
    },
}

/// Difficulty rubric: one point per operator, filter and NEG atom, plus one
/// when any concept sits at ISA depth 4 or deeper.
pub fn expert_class(ast: &QueryAst, ontology: &Ontology) -> ExpertClass {
    let atoms = ast.atoms();
    let filters: usize = atoms.iter().map(|a| a.filters.len()).sum();
    let negs = atoms.iter().filter(|a| a.polarity == Polarity::Negated).count();
    let deep = atoms.iter().any(|a| ontology.depth(&a.concept) >= 4);
    let points = ast.operator_count() + filters + negs + usize::from(deep);
    match points {
        0 => ExpertClass::Base,
        1 => ExpertClass::Low,
        2 | 3 => ExpertClass::Medium,
        _ => ExpertClass::Hard,
    }
}

/// Checks ids are unique, relations resolve and every query parses.
/// Returns the parsed ASTs in bank order.
pub fn validate_bank(bank: &[QueryRecord], ontology: &Ontology) -> Result<Vec<QueryAst>, BankError> {
    let mut ids = HashSet::new();
    for q in bank {
        if !ids.insert(&q.query_id) {
            return Err(BankError::DuplicateQuery(q.query_id.clone()));
        }
    }
    bank.iter()
        .map(|q| {
            if let Some(r) = q.relations.iter().find(|r| !ids.contains(&r.other)) {
                return Err(BankError::UnknownRelationTarget {
                    query: q.query_id.clone(),
                    other: r.other.clone(),
                });
            }
            parse(&q.squerl_text, ontology).map_err(|source| BankError::Parse {
                query: q.query_id.clone(),
                source,
            })
        })
        .collect()
}

pub fn load_query_bank(path: &Path) -> Result<Vec<QueryRecord>, BankError> {
    Ok(io::read_jsonl(path)?.into_iter().map(|(_, q)| q).collect())
}

pub fn save_query_bank(path: &Path, bank: &[QueryRecord]) -> Result<(), BankError> {
    Ok(io::write_jsonl(path, bank)?)
}

#[derive(Deserialize)]
struct NlOnly {
    query_id: QueryId,
    nl_text: String,
}

/// Reads `{query_id, nl_text}` lines and fills in SQuerL via the template
/// translator. Untranslatable lines are errors.
pub fn parse_bank(path: &Path, ontology: &Ontology) -> Result<Vec<QueryRecord>, BankError> {
    io::read_jsonl::<NlOnly>(path)?
        .into_iter()
        .map(|(_, q)| {
            let ast = translate_nl_ast(&q.nl_text, ontology).map_err(|source| BankError::Translate {
                query: q.query_id.clone(),
                source,
            })?;
            Ok(QueryRecord {
                expert_class: expert_class(&ast, ontology),
                squerl_text: ast.to_string(),
                query_id: q.query_id,
                nl_text: q.nl_text,
                relations: Vec::new(),
            })
        })
        .collect()
}
