use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::PatientId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CohortError {
    #[error("patient {0} appears twice in the ranking")]
    DuplicateRanked(PatientId),
}

/// A set of patients answering a query, optionally with a ranking over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    members: BTreeSet<PatientId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranking: Option<Vec<(PatientId, f64)>>,
}

impl Cohort {
    pub fn new(members: impl IntoIterator<Item = PatientId>) -> Self {
        Self {
            members: members.into_iter().collect(),
            ranking: None,
        }
    }

    /// Members are exactly the ranked patients, in the given order.
    pub fn ranked(ranking: Vec<(PatientId, f64)>) -> Result<Self, CohortError> {
        let mut members = BTreeSet::new();
        for (p, _) in &ranking {
            if !members.insert(p.clone()) {
                return Err(CohortError::DuplicateRanked(p.clone()));
            }
        }
        Ok(Self {
            members,
            ranking: Some(ranking),
        })
    }

    pub fn members(&self) -> &BTreeSet<PatientId> {
        &self.members
    }

    pub fn ranking(&self) -> Option<&[(PatientId, f64)]> {
        self.ranking.as_deref()
    }

    /// Ranked ids when a ranking exists, otherwise members in id order.
    pub fn ordered_ids(&self) -> Vec<&PatientId> {
        match &self.ranking {
            Some(r) => r.iter().map(|(p, _)| p).collect(),
            None => self.members.iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, p: &PatientId) -> bool {
        self.members.contains(p)
    }

    pub fn is_subset(&self, other: &Cohort) -> bool {
        self.members.is_subset(&other.members)
    }

    /// Keeps only members accepted by `keep`, preserving ranking order.
    pub fn retain(&mut self, mut keep: impl FnMut(&PatientId) -> bool) {
        self.members.retain(|p| keep(p));
        if let Some(r) = &mut self.ranking {
            r.retain(|(p, _)| self.members.contains(p));
        }
    }
}

impl FromIterator<PatientId> for Cohort {
    fn from_iter<I: IntoIterator<Item = PatientId>>(iter: I) -> Self {
        Self::new(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_rejects_duplicates() {
        let r = vec![("a".into(), 1.0), ("a".into(), 0.5)];
        assert_eq!(Cohort::ranked(r), Err(CohortError::DuplicateRanked("a".into())));
    }

    #[test]
    fn retain_keeps_rank_order() {
        let mut c = Cohort::ranked(vec![("b".into(), 2.0), ("a".into(), 1.0), ("c".into(), 0.5)]).unwrap();
        c.retain(|p| p.as_str() != "a");
        let ids: Vec<_> = c.ordered_ids().into_iter().map(|p| p.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(c.len(), 2);
    }
}
