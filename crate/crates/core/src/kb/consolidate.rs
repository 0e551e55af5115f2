//! Longitudinal consolidation of time-ordered facts into a patient model.
//!
//! Facts are replayed against a working memory of events. A fact either merges
//! into a compatible event (same concept, polarity and compatible attributes,
//! within the merge window) or opens a new one. After every change the touched
//! event is checked against all active events for polarity and ontology
//! requires-constraint conflicts; the resolution policy decides which side
//! stays active and the loser is retracted, never deleted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ConceptId, PatientId};

use super::ontology::Ontology;
use super::{
    attributes_compatible, constraint_clash, polarity_clash, Conflict, ConflictKind,
    ConsolidatedEvent, Criterion, DecidedBy, EventStatus, Fact, PatientModel, TimeInterval,
};

const CONFIDENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsolidationConfig {
    pub merge_window_days: i64,
    /// Criteria applied in order; full ties keep the incumbent.
    pub policy: Vec<Criterion>,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            merge_window_days: 365,
            policy: vec![Criterion::Support, Criterion::Confidence, Criterion::Recency],
        }
    }
}

impl ConsolidationConfig {
    /// Confidence decides first, then support, then recency.
    pub fn confidence_weighted() -> Self {
        Self {
            policy: vec![Criterion::Confidence, Criterion::Support, Criterion::Recency],
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsolidateError {
    #[error("facts are not in processing order at position {0}")]
    Unordered(usize),
    #[error("fact references unknown concept {0}")]
    UnknownConcept(ConceptId),
}

pub fn sort_facts(facts: &mut [Fact]) {
    facts.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}

/// Noisy-OR combination of two confidences.
pub fn noisy_or(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

struct Memory<'a> {
    ontology: &'a Ontology,
    config: &'a ConsolidationConfig,
    events: Vec<ConsolidatedEvent>,
    conflicts: Vec<Conflict>,
}

pub fn consolidate(
    patient_id: &PatientId,
    facts: &[Fact],
    ontology: &Ontology,
    config: &ConsolidationConfig,
) -> Result<PatientModel, ConsolidateError> {
    let mut mem = Memory {
        ontology,
        config,
        events: Vec::new(),
        conflicts: Vec::new(),
    };
    for (n, fact) in facts.iter().enumerate() {
        if n > 0 && facts[n - 1].order_key() > fact.order_key() {
            return Err(ConsolidateError::Unordered(n));
        }
        if !ontology.contains(&fact.concept) {
            return Err(ConsolidateError::UnknownConcept(fact.concept.clone()));
        }
        let idx = match mem.merge_target(fact) {
            Some(i) => {
                mem.merge(i, fact);
                i
            }
            None => {
                mem.events.push(ConsolidatedEvent {
                    concept: fact.concept.clone(),
                    polarity: fact.polarity,
                    attributes: fact.attributes.clone(),
                    time: TimeInterval::at(fact.event_date),
                    confidence: fact.confidence,
                    support: vec![fact.provenance.clone()],
                    status: EventStatus::Active,
                    retraction_reason: None,
                });
                mem.events.len() - 1
            }
        };
        mem.settle(idx);
    }
    Ok(PatientModel {
        patient_id: patient_id.clone(),
        events: mem.events,
        conflicts: mem.conflicts,
    })
}

impl Memory<'_> {
    fn merge_target(&self, fact: &Fact) -> Option<usize> {
        let window = self.config.merge_window_days;
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.concept == fact.concept
                    && e.polarity == fact.polarity
                    && attributes_compatible(&e.attributes, &fact.attributes)
            })
            .filter_map(|(i, e)| {
                let dist = e.time.distance_days(fact.event_date).unwrap_or(0);
                (dist <= window).then_some((!e.is_active(), dist, i))
            })
            .min()
            .map(|(_, _, i)| i)
    }

    fn merge(&mut self, i: usize, fact: &Fact) {
        let e = &mut self.events[i];
        e.time.extend(fact.event_date);
        e.support.push(fact.provenance.clone());
        e.confidence = noisy_or(e.confidence, fact.confidence);
        for (k, v) in &fact.attributes {
            e.attributes.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    fn opponents(&self, i: usize) -> Vec<(usize, ConflictKind)> {
        let me = &self.events[i];
        let mut out = Vec::new();
        for (j, other) in self.events.iter().enumerate() {
            if j == i || !other.is_active() {
                continue;
            }
            if polarity_clash(me, other) {
                out.push((j, ConflictKind::Polarity));
            } else if let Some(id) = constraint_clash(me, other, self.ontology) {
                out.push((
                    j,
                    ConflictKind::Constraint {
                        constraint_id: id.to_string(),
                    },
                ));
            }
        }
        out
    }

    /// Does the challenger beat the incumbent under the configured policy?
    fn challenger_wins(&self, challenger: usize, incumbent: usize) -> (bool, DecidedBy) {
        let (c, inc) = (&self.events[challenger], &self.events[incumbent]);
        for crit in &self.config.policy {
            match crit {
                Criterion::Support => {
                    if c.support.len() != inc.support.len() {
                        return (c.support.len() > inc.support.len(), DecidedBy::Support);
                    }
                }
                Criterion::Confidence => {
                    if (c.confidence - inc.confidence).abs() > CONFIDENCE_EPS {
                        return (c.confidence > inc.confidence, DecidedBy::Confidence);
                    }
                }
                Criterion::Recency => {
                    let (a, b) = (c.latest_evidence(), inc.latest_evidence());
                    if a != b {
                        return (a > b, DecidedBy::Recency);
                    }
                }
            }
        }
        (false, DecidedBy::Incumbent)
    }

    fn record(&mut self, kind: ConflictKind, winner: usize, loser: usize, decided_by: DecidedBy) {
        let id = format!("c{:04}", self.conflicts.len());
        let ev = &mut self.events[loser];
        ev.status = EventStatus::Retracted;
        ev.retraction_reason = Some(id.clone());
        self.conflicts.push(Conflict {
            id,
            kind,
            winner,
            loser,
            decided_by,
        });
    }

    fn settle(&mut self, i: usize) {
        let opponents = self.opponents(i);
        let was_active = self.events[i].is_active();
        if opponents.is_empty() {
            if !was_active {
                let e = &mut self.events[i];
                e.status = EventStatus::Active;
                e.retraction_reason = None;
            }
            return;
        }
        let verdicts: Vec<(usize, ConflictKind, bool, DecidedBy)> = opponents
            .into_iter()
            .map(|(j, kind)| {
                let (wins, by) = self.challenger_wins(i, j);
                (j, kind, wins, by)
            })
            .collect();
        if let Some((j, kind, _, by)) = verdicts.iter().find(|v| !v.2).cloned() {
            if was_active {
                self.record(kind, j, i, by);
            }
            return;
        }
        for (j, kind, _, by) in verdicts {
            self.record(kind, i, j, by);
        }
        let e = &mut self.events[i];
        e.status = EventStatus::Active;
        e.retraction_reason = None;
    }
}
