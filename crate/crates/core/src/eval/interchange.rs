use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::ids::{PatientId, QueryId};
use crate::io;
use crate::squerl::QueryRecord;

use super::EvalError;

/// One line of a cohort file. `ranking`, when present, lists exactly the
/// members best first; `scores` runs parallel to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub query_id: QueryId,
    pub patient_ids: Vec<PatientId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<PatientId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl CohortRecord {
    pub fn from_cohort(query_id: QueryId, cohort: &Cohort) -> Self {
        let (ranking, scores) = match cohort.ranking() {
            Some(r) => (
                Some(r.iter().map(|(p, _)| p.clone()).collect()),
                Some(r.iter().map(|(_, s)| *s).collect()),
            ),
            None => (None, None),
        };
        Self {
            query_id,
            patient_ids: cohort.members().iter().cloned().collect(),
            ranking,
            scores,
        }
    }

    pub fn into_cohort(self, line: usize) -> Result<(QueryId, Cohort), EvalError> {
        let bad = |message: String| EvalError::BadCohortRecord { line, message };
        let members: BTreeSet<PatientId> = self.patient_ids.iter().cloned().collect();
        if members.len() != self.patient_ids.len() {
            return Err(bad("duplicate patient_ids".into()));
        }
        let cohort = match self.ranking {
            None => Cohort::new(members),
            Some(ranking) => {
                let scores = match self.scores {
                    Some(s) if s.len() == ranking.len() => s,
                    Some(_) => return Err(bad("scores and ranking differ in length".into())),
                    None => (0..ranking.len()).map(|i| (ranking.len() - i) as f64).collect(),
                };
                let c = Cohort::ranked(ranking.into_iter().zip(scores).collect()).map_err(|e| bad(e.to_string()))?;
                if *c.members() != members {
                    return Err(bad("ranking does not cover exactly patient_ids".into()));
                }
                c
            }
        };
        Ok((self.query_id, cohort))
    }
}

pub fn write_cohorts(path: &Path, cohorts: &BTreeMap<QueryId, Cohort>) -> Result<(), EvalError> {
    let records: Vec<_> = cohorts
        .iter()
        .map(|(q, c)| CohortRecord::from_cohort(q.clone(), c))
        .collect();
    Ok(io::write_jsonl(path, &records)?)
}

pub fn read_cohorts(path: &Path) -> Result<BTreeMap<QueryId, Cohort>, EvalError> {
    let mut out = BTreeMap::new();
    for (line, rec) in io::read_jsonl::<CohortRecord>(path)? {
        let (q, c) = rec.into_cohort(line)?;
        if out.insert(q.clone(), c).is_some() {
            return Err(EvalError::BadCohortRecord {
                line,
                message: format!("duplicate query_id {q}"),
            });
        }
    }
    Ok(out)
}

/// Query × patient ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldMatrix {
    pub gold: BTreeMap<QueryId, Cohort>,
    pub population: BTreeSet<PatientId>,
}

impl GoldMatrix {
    /// Every gold cohort inside the population and every bank query present.
    pub fn validate(&self, bank: &[QueryRecord]) -> Result<(), EvalError> {
        for (q, c) in &self.gold {
            if let Some(p) = c.members().iter().find(|p| !self.population.contains(*p)) {
                return Err(EvalError::GoldOutsidePopulation {
                    query: q.clone(),
                    patient: p.clone(),
                });
            }
        }
        if let Some(q) = bank.iter().find(|q| !self.gold.contains_key(&q.query_id)) {
            return Err(EvalError::MissingGold(q.query_id.clone()));
        }
        Ok(())
    }

    pub fn get(&self, q: &QueryId) -> Result<&Cohort, EvalError> {
        self.gold.get(q).ok_or_else(|| EvalError::MissingGold(q.clone()))
    }

    /// Writes `{query_id, patient_ids[]}` lines.
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let plain: BTreeMap<QueryId, Cohort> = self
            .gold
            .iter()
            .map(|(q, c)| (q.clone(), Cohort::new(c.members().iter().cloned())))
            .collect();
        write_cohorts(path, &plain)
    }

    pub fn load(path: &Path, population: BTreeSet<PatientId>) -> Result<Self, EvalError> {
        Ok(Self {
            gold: read_cohorts(path)?,
            population,
        })
    }
}
