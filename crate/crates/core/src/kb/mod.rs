//! Knowledge acquisition: fact extraction, longitudinal consolidation and the
//! event-rooted inverted knowledge base.

mod consolidate;
mod extract;
pub mod ontology;
mod store;

pub use consolidate::{consolidate, sort_facts, ConsolidateError, ConsolidationConfig};
pub use extract::{ExtractorConfig, FactExtractor, RuleExtractor};
pub use ontology::{AttributeType, Ontology, OntologyError, OntologyFile};
pub use store::{
    build_kb, build_kb_from_abstractions, build_kb_shared, build_patient_models, load_abstractions, save_abstractions,
    Abstraction, AbstractionEvent, EventRef, KbError, KnowledgeBase,
};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ids::{ConceptId, DocId, PatientId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Asserted,
    Negated,
}

impl Polarity {
    pub fn flip(self) -> Self {
        match self {
            Polarity::Asserted => Polarity::Negated,
            Polarity::Negated => Polarity::Asserted,
        }
    }
}

/// Where a fact came from: document plus byte span of the mention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: DocId,
    pub authored_at: NaiveDate,
    pub start: usize,
    pub end: usize,
}

pub type Attributes = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub concept: ConceptId,
    pub polarity: Polarity,
    #[serde(default)]
    pub attributes: Attributes,
    pub event_date: Option<NaiveDate>,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl Fact {
    /// Total processing order: event date, document date, then provenance.
    pub fn order_key(&self) -> (Option<NaiveDate>, NaiveDate, &DocId, usize, usize, &ConceptId) {
        (
            self.event_date,
            self.provenance.authored_at,
            &self.provenance.doc_id,
            self.provenance.start,
            self.provenance.end,
            &self.concept,
        )
    }
}

/// Closed date interval; either bound may be unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl TimeInterval {
    pub fn at(date: Option<NaiveDate>) -> Self {
        Self {
            start: date,
            end: date,
        }
    }

    pub fn extend(&mut self, date: Option<NaiveDate>) {
        if let Some(d) = date {
            self.start = Some(self.start.map_or(d, |s| s.min(d)));
            self.end = Some(self.end.map_or(d, |e| e.max(d)));
        }
    }

    /// Days from `date` to the interval (0 inside). `None` when anything is unknown.
    pub fn distance_days(&self, date: Option<NaiveDate>) -> Option<i64> {
        let (s, e, d) = (self.start?, self.end?, date?);
        Some(if d < s {
            (s - d).num_days()
        } else if d > e {
            (d - e).num_days()
        } else {
            0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Active,
    Retracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedEvent {
    pub concept: ConceptId,
    pub polarity: Polarity,
    #[serde(default)]
    pub attributes: Attributes,
    pub time: TimeInterval,
    pub confidence: f64,
    pub support: Vec<Provenance>,
    pub status: EventStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retraction_reason: Option<String>,
}

impl ConsolidatedEvent {
    pub fn is_active(&self) -> bool {
        self.status == EventStatus::Active
    }

    /// Date of the latest supporting evidence, for recency tie-breaks.
    pub fn latest_evidence(&self) -> (Option<NaiveDate>, Option<NaiveDate>) {
        (
            self.time.end,
            self.support.iter().map(|p| p.authored_at).max(),
        )
    }
}

/// Attribute maps agree on every shared key.
pub fn attributes_compatible(a: &Attributes, b: &Attributes) -> bool {
    a.iter()
        .all(|(k, v)| b.get(k).is_none_or(|w| w.eq_ignore_ascii_case(v)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConflictKind {
    Polarity,
    Constraint { constraint_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Support,
    Confidence,
    Recency,
}

/// Which rule decided a conflict; `Incumbent` when every criterion tied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Support,
    Confidence,
    Recency,
    Incumbent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub id: String,
    #[serde(flatten)]
    pub kind: ConflictKind,
    pub winner: usize,
    pub loser: usize,
    pub decided_by: DecidedBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientModel {
    pub patient_id: PatientId,
    pub events: Vec<ConsolidatedEvent>,
    #[serde(default)]
    pub conflicts: Vec<Conflict>,
}

/// A pair of events that cannot both be active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Polarity(usize, usize),
    Constraint { constraint_id: String, a: usize, b: usize },
}

pub(crate) fn polarity_clash(a: &ConsolidatedEvent, b: &ConsolidatedEvent) -> bool {
    a.concept == b.concept
        && a.polarity != b.polarity
        && attributes_compatible(&a.attributes, &b.attributes)
}

fn asserts_absence(ev: &ConsolidatedEvent, organ: &ConceptId, ontology: &Ontology) -> bool {
    match ev.polarity {
        Polarity::Negated => ontology.is_a(&ev.concept, organ),
        Polarity::Asserted => ontology
            .removes(&ev.concept)
            .iter()
            .any(|r| ontology.is_a(r, organ)),
    }
}

/// Constraint violated by the pair, in either role assignment.
pub(crate) fn constraint_clash<'o>(
    a: &ConsolidatedEvent,
    b: &ConsolidatedEvent,
    ontology: &'o Ontology,
) -> Option<&'o str> {
    for con in ontology.constraints() {
        for (subject, absence) in [(a, b), (b, a)] {
            if subject.polarity == Polarity::Asserted
                && ontology.is_a(&subject.concept, &con.subject_concept)
                && asserts_absence(absence, &con.requires_present, ontology)
            {
                if let (Some(removed_at), Some(subject_end)) = (absence.time.start, subject.time.end) {
                    if removed_at <= subject_end {
                        return Some(con.id.as_str());
                    }
                }
            }
        }
    }
    None
}

impl PatientModel {
    pub fn active_events(&self) -> impl Iterator<Item = (usize, &ConsolidatedEvent)> {
        self.events.iter().enumerate().filter(|(_, e)| e.is_active())
    }

    /// Re-scans all active pairs for polarity or constraint conflicts.
    pub fn violations(&self, ontology: &Ontology) -> Vec<Violation> {
        let active: Vec<(usize, &ConsolidatedEvent)> = self.active_events().collect();
        let mut out = Vec::new();
        for (x, &(i, a)) in active.iter().enumerate() {
            for &(j, b) in &active[x + 1..] {
                if polarity_clash(a, b) {
                    out.push(Violation::Polarity(i, j));
                }
                if let Some(id) = constraint_clash(a, b, ontology) {
                    out.push(Violation::Constraint {
                        constraint_id: id.to_string(),
                        a: i,
                        b: j,
                    });
                }
            }
        }
        out
    }
}
