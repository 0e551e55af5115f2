use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::ids::{ConceptId, PatientId};
use crate::io::{self, IoError};

use super::consolidate::{consolidate, sort_facts, ConsolidateError, ConsolidationConfig};
use super::extract::FactExtractor;
use super::ontology::{Ontology, OntologyFile};
use super::{Attributes, ConsolidatedEvent, EventStatus, PatientModel, Polarity, Provenance, TimeInterval};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("duplicate patient_id {0}")]
    DuplicatePatient(PatientId),
    #[error("patient {patient}: invalid abstraction: {reason}")]
    InvalidAbstraction { patient: PatientId, reason: String },
    #[error("patient {patient}: {source}")]
    Consolidate {
        patient: PatientId,
        #[source]
        source: ConsolidateError,
    },
    #[error("stored postings do not match postings rebuilt from the models")]
    InconsistentPostings,
    #[error(transparent)]
    Ontology(#[from] super::ontology::OntologyError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Position of an event: patient index into the sorted patient list, event index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRef {
    pub patient: u32,
    pub event: u32,
}

/// Patient models plus inverted postings from every concept (and every ISA
/// ancestor of it) to the active events carrying it.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    ontology: Arc<Ontology>,
    patients: Vec<PatientId>,
    models: Vec<PatientModel>,
    postings: BTreeMap<ConceptId, Vec<EventRef>>,
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    ontology: OntologyFile,
    models: Vec<PatientModel>,
    postings: BTreeMap<ConceptId, Vec<EventRef>>,
}

fn build_postings(models: &[PatientModel], ontology: &Ontology) -> BTreeMap<ConceptId, Vec<EventRef>> {
    let mut postings: BTreeMap<ConceptId, Vec<EventRef>> = BTreeMap::new();
    for (pi, m) in models.iter().enumerate() {
        for (ei, e) in m.events.iter().enumerate() {
            if !e.is_active() {
                continue;
            }
            for anc in ontology.ancestors(&e.concept) {
                postings.entry(anc.clone()).or_default().push(EventRef {
                    patient: pi as u32,
                    event: ei as u32,
                });
            }
        }
    }
    postings
}

pub fn build_kb(models: Vec<PatientModel>, ontology: &Ontology) -> Result<KnowledgeBase, KbError> {
    build_kb_shared(models, Arc::new(ontology.clone()))
}

/// Like [`build_kb`] but shares an already wrapped ontology.
pub fn build_kb_shared(
    mut models: Vec<PatientModel>,
    ontology: Arc<Ontology>,
) -> Result<KnowledgeBase, KbError> {
    models.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    for w in models.windows(2) {
        if w[0].patient_id == w[1].patient_id {
            return Err(KbError::DuplicatePatient(w[0].patient_id.clone()));
        }
    }
    let postings = build_postings(&models, &ontology);
    Ok(KnowledgeBase {
        ontology,
        patients: models.iter().map(|m| m.patient_id.clone()).collect(),
        models,
        postings,
    })
}

/// Extract + consolidate every patient of the corpus, in parallel.
pub fn build_patient_models<X: FactExtractor + ?Sized>(
    corpus: &Corpus,
    ontology: &Ontology,
    extractor: &X,
    config: &ConsolidationConfig,
) -> Result<Vec<PatientModel>, KbError> {
    let patients: Vec<_> = corpus.patients().collect();
    patients
        .par_iter()
        .map(|(pid, docs)| {
            let mut facts: Vec<_> = docs.iter().flat_map(|d| extractor.extract(d)).collect();
            sort_facts(&mut facts);
            consolidate(pid, &facts, ontology, config).map_err(|source| KbError::Consolidate {
                patient: (*pid).clone(),
                source,
            })
        })
        .collect()
}

impl KnowledgeBase {
    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn shared_ontology(&self) -> Arc<Ontology> {
        Arc::clone(&self.ontology)
    }

    /// All patients, sorted. This is the universe for `NOT`.
    pub fn patients(&self) -> &[PatientId] {
        &self.patients
    }

    pub fn models(&self) -> &[PatientModel] {
        &self.models
    }

    pub fn model(&self, patient: &PatientId) -> Option<&PatientModel> {
        self.patient_index(patient).map(|i| &self.models[i])
    }

    pub fn patient_index(&self, patient: &PatientId) -> Option<usize> {
        self.patients.binary_search(patient).ok()
    }

    pub fn postings(&self, concept: &ConceptId) -> &[EventRef] {
        self.postings.get(concept).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_postings(&self) -> &BTreeMap<ConceptId, Vec<EventRef>> {
        &self.postings
    }

    pub fn event(&self, r: EventRef) -> &ConsolidatedEvent {
        &self.models[r.patient as usize].events[r.event as usize]
    }

    /// Postings recomputed from scratch; equal to the stored ones by construction.
    pub fn rebuilt_postings(&self) -> BTreeMap<ConceptId, Vec<EventRef>> {
        build_postings(&self.models, &self.ontology)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = KbFile {
            ontology: self.ontology.file().clone(),
            models: self.models.clone(),
            postings: self.postings.clone(),
        };
        serde_json::to_vec(&file).expect("kb serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        Ok(io::write_atomic(path, &self.to_json_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let file: KbFile = io::read_json(path)?;
        let ontology = Ontology::new(file.ontology)?;
        let kb = build_kb(file.models, &ontology)?;
        if kb.postings != file.postings {
            return Err(KbError::InconsistentPostings);
        }
        Ok(kb)
    }
}

/// Ground-truth event; a consolidated event without status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionEvent {
    pub concept: ConceptId,
    pub polarity: Polarity,
    #[serde(default)]
    pub attributes: Attributes,
    pub time: TimeInterval,
    pub confidence: f64,
    pub support: Vec<Provenance>,
}

/// A patient's clean, canonical journey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub patient_id: PatientId,
    pub events: Vec<AbstractionEvent>,
}

fn abstraction_model(a: &Abstraction, ontology: &Ontology) -> Result<PatientModel, KbError> {
    let invalid = |reason: String| KbError::InvalidAbstraction {
        patient: a.patient_id.clone(),
        reason,
    };
    let mut events = Vec::with_capacity(a.events.len());
    for (i, e) in a.events.iter().enumerate() {
        if !ontology.contains(&e.concept) {
            return Err(invalid(format!("event {i}: unknown concept {}", e.concept)));
        }
        if e.support.is_empty() {
            return Err(invalid(format!("event {i}: empty support")));
        }
        if !(e.confidence > 0.0 && e.confidence <= 1.0) {
            return Err(invalid(format!("event {i}: confidence {} outside (0,1]", e.confidence)));
        }
        if let (Some(s), Some(t)) = (e.time.start, e.time.end) {
            if s > t {
                return Err(invalid(format!("event {i}: start after end")));
            }
        }
        events.push(ConsolidatedEvent {
            concept: e.concept.clone(),
            polarity: e.polarity,
            attributes: e.attributes.clone(),
            time: e.time,
            confidence: e.confidence,
            support: e.support.clone(),
            status: EventStatus::Active,
            retraction_reason: None,
        });
    }
    let model = PatientModel {
        patient_id: a.patient_id.clone(),
        events,
        conflicts: Vec::new(),
    };
    if let Some(v) = model.violations(ontology).first() {
        return Err(invalid(format!("conflicting events: {v:?}")));
    }
    Ok(model)
}

/// Builds the KB straight from clean journeys, bypassing extraction.
pub fn build_kb_from_abstractions(
    abstractions: &[Abstraction],
    ontology: &Ontology,
) -> Result<KnowledgeBase, KbError> {
    let models = abstractions
        .iter()
        .map(|a| abstraction_model(a, ontology))
        .collect::<Result<Vec<_>, _>>()?;
    build_kb(models, ontology)
}

pub fn load_abstractions(path: &Path) -> Result<Vec<Abstraction>, KbError> {
    Ok(io::read_jsonl(path)?.into_iter().map(|(_, a)| a).collect())
}

pub fn save_abstractions(path: &Path, abstractions: &[Abstraction]) -> Result<(), KbError> {
    Ok(io::write_jsonl(path, abstractions)?)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::kb::ontology::tests::chain_ontology;

    fn prov() -> Provenance {
        Provenance {
            doc_id: "d".into(),
            authored_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            start: 0,
            end: 1,
        }
    }

    fn ev(concept: &str, pol: Polarity) -> AbstractionEvent {
        AbstractionEvent {
            concept: concept.into(),
            polarity: pol,
            attributes: Attributes::new(),
            time: TimeInterval::at(NaiveDate::from_ymd_opt(2020, 1, 1)),
            confidence: 1.0,
            support: vec![prov()],
        }
    }

    #[test]
    fn event_posted_under_all_ancestors() {
        let o = chain_ontology();
        let kb = build_kb_from_abstractions(
            &[Abstraction {
                patient_id: "p1".into(),
                events: vec![ev("osimertinib", Polarity::Asserted)],
            }],
            &o,
        )
        .unwrap();
        for c in ["osimertinib", "egfr_tki", "tki", "targeted_therapy", "systemic_therapy"] {
            assert_eq!(kb.postings(&c.into()).len(), 1, "{c}");
        }
        assert!(kb.postings(&"chemotherapy".into()).is_empty());
    }

    #[test]
    fn clean_journey_has_no_conflicts() {
        let o = chain_ontology();
        let kb = build_kb_from_abstractions(
            &[Abstraction {
                patient_id: "p1".into(),
                events: vec![
                    ev("osimertinib", Polarity::Asserted),
                    ev("chemotherapy", Polarity::Asserted),
                    ev("tki", Polarity::Negated),
                ],
            }],
            &o,
        )
        .unwrap();
        let m = kb.model(&"p1".into()).unwrap();
        assert_eq!(m.active_events().count(), 3);
        assert!(m.conflicts.is_empty());
    }

    #[test]
    fn contradictory_abstraction_rejected() {
        let o = chain_ontology();
        let err = build_kb_from_abstractions(
            &[Abstraction {
                patient_id: "p7".into(),
                events: vec![ev("tki", Polarity::Asserted), ev("tki", Polarity::Negated)],
            }],
            &o,
        )
        .unwrap_err();
        assert!(matches!(err, KbError::InvalidAbstraction { ref patient, .. } if patient.as_str() == "p7"));
    }

    #[test]
    fn retracted_events_not_posted() {
        let o = chain_ontology();
        let mut e = ConsolidatedEvent {
            concept: "tki".into(),
            polarity: Polarity::Asserted,
            attributes: Attributes::new(),
            time: TimeInterval::default(),
            confidence: 0.8,
            support: vec![prov()],
            status: EventStatus::Retracted,
            retraction_reason: Some("c0000".into()),
        };
        let m1 = PatientModel {
            patient_id: "p1".into(),
            events: vec![e.clone()],
            conflicts: vec![],
        };
        e.status = EventStatus::Active;
        let m2 = PatientModel {
            patient_id: "p2".into(),
            events: vec![e],
            conflicts: vec![],
        };
        let kb = build_kb(vec![m2, m1], &o).unwrap();
        assert_eq!(kb.postings(&"tki".into()), &[EventRef { patient: 1, event: 0 }]);
        assert_eq!(kb.patients()[0].as_str(), "p1");
        assert!(matches!(
            build_kb(vec![kb.models()[0].clone(), kb.models()[0].clone()], &o),
            Err(KbError::DuplicatePatient(_))
        ));
    }
}
