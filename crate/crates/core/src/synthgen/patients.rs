use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::ids::{ConceptId, DocId, PatientId};
use crate::kb::ontology::ConceptCategory;
use crate::kb::{Abstraction, AbstractionEvent, Attributes, Ontology, Polarity, Provenance, TimeInterval};

use super::ontology::STAGES;
use super::{GeneratorParams, SynthError};

/// An injected mention that the clean journey does not contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictionRecord {
    pub patient_id: PatientId,
    pub doc_id: DocId,
    pub kind: ContradictionKind,
    /// Concept of the injected mention.
    pub concept: ConceptId,
    pub polarity: Polarity,
    /// Clean event the mention contradicts.
    pub target: ConceptId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContradictionKind {
    Polarity,
    Constraint,
}

/// Clean abstractions plus the record of every injected contradiction.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub abstractions: Vec<Abstraction>,
    pub log: Vec<ContradictionRecord>,
}

#[derive(Debug, Clone)]
struct Planned {
    concept: ConceptId,
    polarity: Polarity,
    attributes: Attributes,
    date: NaiveDate,
}

const DOC_TYPES: [(&str, &str); 5] = [
    ("progress_note", "Progress note."),
    ("oncology_consult", "Oncology consultation."),
    ("radiology_report", "Radiology report."),
    ("pathology_report", "Pathology report."),
    ("discharge_summary", "Discharge summary."),
];

pub(crate) const FILLER: [&str; 40] = [
    "Patient seen in clinic today.",
    "Vital signs stable.",
    "Appetite fair and energy improving.",
    "Labs reviewed with the patient.",
    "Plan discussed and questions answered.",
    "Will follow up in three months.",
    "Physical exam unremarkable.",
    "Medication list reconciled.",
    "Performance status unchanged.",
    "Pain controlled on current regimen.",
    "No acute distress.",
    "Weight stable since last visit.",
    "Family present for the visit.",
    "Sleep quality reported as poor.",
    "Mild fatigue noted.",
    "Blood counts within normal limits.",
    "Renal function stable.",
    "Liver enzymes mildly elevated.",
    "Imaging reviewed with radiology.",
    "Nutrition consult placed.",
    "Social work referral offered.",
    "Advance care planning discussed.",
    "Patient ambulating independently.",
    "Denies fever or chills.",
    "Reports intermittent nausea.",
    "Hydration encouraged.",
    "Smoking cessation counseling provided.",
    "Vaccinations reviewed.",
    "Lungs clear to auscultation.",
    "Heart rate regular.",
    "Abdomen soft and nontender.",
    "Skin without rash.",
    "Neurologic exam nonfocal.",
    "Patient agrees with the plan.",
    "Return precautions reviewed.",
    "Case discussed at multidisciplinary board.",
    "Insurance authorization pending.",
    "Scheduled for repeat labs.",
    "Tolerating oral intake.",
    "Mood appropriate.",
];

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date")
}

fn shift(d: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        d + Days::new(days as u64)
    } else {
        d - Days::new(days.unsigned_abs())
    }
}

struct Journey<'a> {
    ontology: &'a Ontology,
    events: Vec<Planned>,
}

impl Journey<'_> {
    fn has(&self, c: &str) -> bool {
        self.events.iter().any(|e| e.concept.as_str() == c)
    }

    fn date_of(&self, c: &str) -> Option<NaiveDate> {
        self.events.iter().find(|e| e.concept.as_str() == c).map(|e| e.date)
    }

    /// Adds the event unless the concept is unknown or already present.
    fn push(&mut self, c: &str, polarity: Polarity, date: NaiveDate) -> bool {
        self.push_with(c, polarity, date, Attributes::new())
    }

    fn push_with(&mut self, c: &str, polarity: Polarity, date: NaiveDate, attributes: Attributes) -> bool {
        let id = ConceptId::from(c);
        if !self.ontology.contains(&id) || self.has(c) {
            return false;
        }
        self.events.push(Planned {
            concept: id,
            polarity,
            attributes,
            date,
        });
        true
    }

    fn last_date(&self) -> NaiveDate {
        self.events.iter().map(|e| e.date).max().unwrap_or_else(base_date)
    }

    fn test(&mut self, rng: &mut ChaCha8Rng, c: &str, p_positive: f64, date: NaiveDate) -> bool {
        let positive = rng.random_bool(p_positive);
        let polarity = if positive { Polarity::Asserted } else { Polarity::Negated };
        self.push(c, polarity, date);
        positive
    }

    /// First available option not yet in the journey.
    fn treat(&mut self, rng: &mut ChaCha8Rng, options: &[&str], date: NaiveDate) -> bool {
        let mut opts: Vec<&str> = options.iter().copied().filter(|c| !self.has(c)).collect();
        opts.shuffle(rng);
        opts.first().is_some_and(|c| self.push(c, Polarity::Asserted, date))
    }
}

fn weighted<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, u32)]) -> &'a str {
    items.choose_weighted(rng, |x| x.1).expect("non-empty weights").0
}

fn sample_journey(rng: &mut ChaCha8Rng, ontology: &Ontology, target_events: usize) -> Vec<Planned> {
    let mut j = Journey {
        ontology,
        events: Vec::new(),
    };
    let cancer = weighted(
        rng,
        &[("breast_cancer", 30), ("nsclc", 25), ("sclc", 7), ("colorectal_cancer", 20), ("prostate_cancer", 18)],
    );
    let female = match cancer {
        "breast_cancer" => true,
        "prostate_cancer" => false,
        _ => rng.random_bool(0.5),
    };
    let stage_idx = *[0usize, 1, 2, 3]
        .choose_weighted(rng, |&i| [30, 30, 22, 18][i])
        .expect("weights");
    let dx = shift(base_date(), rng.random_range(0..3650));
    let mut attrs = Attributes::new();
    attrs.insert("stage".into(), STAGES[stage_idx].into());
    j.push_with(cancer, Polarity::Asserted, dx, attrs);

    let test_day = |rng: &mut ChaCha8Rng| shift(dx, rng.random_range(5..40));
    let mut line1 = shift(dx, rng.random_range(20..90));

    if stage_idx == 3 {
        let sites = ["brain_metastasis", "liver_metastasis", "bone_metastasis"];
        let n = rng.random_range(1..=2);
        for site in sites.choose_multiple(rng, n) {
            let d = shift(dx, rng.random_range(0..30));
            j.push(site, Polarity::Asserted, d);
        }
    }

    match cancer {
        "nsclc" => {
            let d = test_day(rng);
            let egfr = j.test(rng, "egfr_mutation", 0.18, d);
            let alk = !egfr && j.test(rng, "alk_rearrangement", 0.07, d);
            if !egfr && !alk {
                j.test(rng, "kras_mutation", 0.25, d);
            }
            let pdl1 = rng.random_bool(0.3);
            if pdl1 {
                j.push("pdl1_high", Polarity::Asserted, d);
            }
            if stage_idx <= 1 && rng.random_bool(0.75) {
                j.push("lobectomy", Polarity::Asserted, shift(dx, rng.random_range(15..60)));
                line1 = shift(line1, 60);
            }
            if egfr {
                let drug = if rng.random_bool(0.75) { "osimertinib" } else { "erlotinib" };
                j.push(drug, Polarity::Asserted, line1);
            } else if alk {
                j.push("alectinib", Polarity::Asserted, line1);
            } else if stage_idx >= 1 || rng.random_bool(0.4) {
                j.treat(rng, &["carboplatin", "cisplatin"], line1);
                if rng.random_bool(if pdl1 { 0.6 } else { 0.3 }) {
                    j.push("pembrolizumab", Polarity::Asserted, line1);
                }
            }
            if rng.random_bool(0.35) {
                j.push("radiation_therapy", Polarity::Asserted, shift(dx, rng.random_range(30..300)));
            }
        }
        "sclc" => {
            j.treat(rng, &["carboplatin", "cisplatin"], line1);
            j.push("etoposide", Polarity::Asserted, line1);
            if rng.random_bool(0.6) {
                j.push("radiation_therapy", Polarity::Asserted, shift(dx, rng.random_range(30..300)));
            }
        }
        "breast_cancer" => {
            let d = test_day(rng);
            let her2 = j.test(rng, "her2_positive", 0.2, d);
            if rng.random_bool(0.5) {
                j.test(rng, "brca1_mutation", 0.1, d);
                j.test(rng, "brca2_mutation", 0.07, d);
            }
            if rng.random_bool(0.6) {
                j.push("mastectomy", Polarity::Asserted, shift(dx, rng.random_range(15..60)));
            }
            if her2 && rng.random_bool(0.9) {
                j.push("trastuzumab", Polarity::Asserted, line1);
            }
            if rng.random_bool(0.5) {
                j.treat(rng, &["paclitaxel", "docetaxel"], line1);
            }
            if rng.random_bool(0.6) {
                let d = shift(line1, rng.random_range(90..240));
                j.treat(rng, &["tamoxifen", "letrozole"], d);
            }
            if rng.random_bool(0.5) {
                j.push("radiation_therapy", Polarity::Asserted, shift(dx, rng.random_range(30..300)));
            }
        }
        "colorectal_cancer" => {
            let d = test_day(rng);
            j.test(rng, "kras_mutation", 0.4, d);
            if rng.random_bool(0.75) {
                j.push("colectomy", Polarity::Asserted, shift(dx, rng.random_range(15..60)));
            }
            if rng.random_bool(0.7) {
                j.push("fluorouracil", Polarity::Asserted, line1);
            }
            if rng.random_bool(0.08) {
                j.push("pembrolizumab", Polarity::Asserted, line1);
            }
            if rng.random_bool(0.2) {
                j.push("radiation_therapy", Polarity::Asserted, shift(dx, rng.random_range(30..300)));
            }
        }
        _ => {
            if rng.random_bool(0.3) {
                let d = test_day(rng);
                j.test(rng, "brca2_mutation", 0.12, d);
            }
            if rng.random_bool(0.5) {
                j.push("prostatectomy", Polarity::Asserted, shift(dx, rng.random_range(15..60)));
            }
            if rng.random_bool(0.5) {
                j.push("radiation_therapy", Polarity::Asserted, shift(dx, rng.random_range(30..300)));
            }
            if rng.random_bool(0.5) {
                j.push("leuprolide", Polarity::Asserted, line1);
            }
            if rng.random_bool(0.2) {
                j.push("docetaxel", Polarity::Asserted, shift(line1, rng.random_range(200..700)));
            }
        }
    }

    let late_mets = stage_idx < 3 && rng.random_bool(0.15);
    if late_mets || rng.random_bool(0.3) {
        let d = shift(line1, rng.random_range(90..700));
        j.push("disease_progression", Polarity::Asserted, d);
        if late_mets {
            let site = ["brain_metastasis", "liver_metastasis", "bone_metastasis"]
                .choose(rng)
                .expect("non-empty");
            j.push(site, Polarity::Asserted, d);
        }
        let second: &[&str] = match cancer {
            "nsclc" => &["docetaxel", "nivolumab", "paclitaxel"],
            "sclc" => &["nivolumab", "paclitaxel"],
            "breast_cancer" => &["paclitaxel", "docetaxel", "letrozole"],
            "colorectal_cancer" => &["cisplatin", "pembrolizumab"],
            _ => &["docetaxel", "leuprolide"],
        };
        let d = shift(d, rng.random_range(14..60));
        j.treat(rng, second, d);
    }

    if female {
        let mut preg = None;
        if rng.random_bool(0.08) {
            let d = shift(dx, rng.random_range(-1800..1200));
            j.push("pregnancy", Polarity::Asserted, d);
            preg = Some(d);
        }
        let brca = j.events.iter().any(|e| {
            e.polarity == Polarity::Asserted && matches!(e.concept.as_str(), "brca1_mutation" | "brca2_mutation")
        });
        if rng.random_bool(if brca { 0.5 } else { 0.05 }) {
            j.push("oophorectomy", Polarity::Asserted, shift(dx, rng.random_range(30..900)));
        }
        if rng.random_bool(0.07) {
            let after = preg.map_or(dx, |p| p.max(dx));
            j.push("hysterectomy", Polarity::Asserted, shift(after, rng.random_range(60..900)));
        }
    }

    let p_death = if stage_idx == 3 { 0.4 } else { 0.12 };
    if rng.random_bool(p_death) {
        let d = shift(j.last_date(), rng.random_range(30..700));
        j.push("death", Polarity::Asserted, d);
    }

    let mut comorbidities: Vec<&ConceptId> = ontology
        .concepts()
        .iter()
        .filter(|c| c.parents.iter().any(|p| p.as_str() == "comorbidity"))
        .map(|c| &c.id)
        .collect();
    comorbidities.shuffle(rng);
    for c in comorbidities {
        if j.events.len() >= target_events {
            break;
        }
        let d = shift(dx, -rng.random_range(30..3000));
        j.push(c.as_str(), Polarity::Asserted, d);
    }
    let death = j.date_of("death");
    debug_assert!(death.is_none_or(|d| j.events.iter().all(|e| e.date <= d)));
    j.events.sort_by(|a, b| (a.date, &a.concept).cmp(&(b.date, &b.concept)));
    j.events
}

fn category(ontology: &Ontology, c: &ConceptId) -> ConceptCategory {
    ontology.concept(c).map_or(ConceptCategory::Other, |d| d.category)
}

/// (primary prefix, recap prefixes) for a clean mention.
fn prefixes(ontology: &Ontology, e: &Planned) -> (&'static str, &'static [&'static str]) {
    match (category(ontology, &e.concept), e.polarity) {
        (ConceptCategory::Biomarker, Polarity::Negated) => ("Testing negative for ", &["Previously negative for "]),
        (ConceptCategory::Biomarker, _) => ("Molecular testing shows ", &["Known "]),
        (ConceptCategory::Therapy, _) => ("Started ", &["Previously treated with ", "Completed course of "]),
        (ConceptCategory::Procedure, _) => ("Underwent ", &["Status post "]),
        (ConceptCategory::Finding, _) => ("Imaging shows ", &["Known "]),
        (ConceptCategory::Outcome, _) if e.concept.as_str() == "death" => {
            ("Documentation of patient ", &["Confirmed patient "])
        }
        (ConceptCategory::Outcome, _) => ("Imaging consistent with ", &["Prior "]),
        _ if e.concept.as_str() == "pregnancy" => ("Patient reports ", &["History of "]),
        _ => ("Diagnosed with ", &["History of ", "Known "]),
    }
}

/// Mention prefix that contradicts a clean event.
fn contradiction_prefix(ontology: &Ontology, e: &Planned) -> &'static str {
    match (category(ontology, &e.concept), e.polarity) {
        (_, Polarity::Negated) => "Molecular testing shows ",
        (ConceptCategory::Therapy, _) => "No ",
        (ConceptCategory::Procedure, _) => "No prior ",
        _ => "No evidence of ",
    }
}

fn contradiction_suffix(ontology: &Ontology, e: &Planned) -> &'static str {
    match (category(ontology, &e.concept), e.polarity) {
        (ConceptCategory::Therapy, Polarity::Asserted) => " given.",
        _ => ".",
    }
}

/// A sentence with the byte span of its concept mention.
struct Sentence {
    text: String,
    mention: Option<(usize, usize)>,
}

fn surface(rng: &mut ChaCha8Rng, ontology: &Ontology, c: &ConceptId, paraphrase_rate: f64) -> String {
    let forms = ontology.concept(c).map(|d| d.surface_forms.as_slice()).unwrap_or_default();
    if forms.len() > 1 && rng.random_bool(paraphrase_rate) {
        forms[1..].choose(rng).expect("non-empty").clone()
    } else {
        ontology.canonical_surface(c).to_string()
    }
}

fn mention(prefix: &str, surface: &str, tail: &str) -> Sentence {
    Sentence {
        text: format!("{prefix}{surface}{tail}"),
        mention: Some((prefix.len(), prefix.len() + surface.len())),
    }
}

fn clean_tail(e: &Planned) -> String {
    let mut tail = format!(" @date{{{}}}", e.date.format("%Y-%m-%d"));
    if let Some(stage) = e.attributes.get("stage") {
        tail.push_str(" stage ");
        tail.push_str(stage);
    }
    tail.push('.');
    tail
}

fn binomial(rng: &mut ChaCha8Rng, n: usize, p: f64) -> usize {
    (0..n).filter(|_| rng.random_bool(p)).count()
}

struct PatientOutput {
    docs: Vec<Document>,
    abstraction: Abstraction,
    log: Vec<ContradictionRecord>,
}

fn gen_patient(index: usize, params: &GeneratorParams, ontology: &Ontology) -> PatientOutput {
    let patient_id = PatientId::new(format!("p{:05}", index + 1));
    let mut jrng = ChaCha8Rng::seed_from_u64(params.seed);
    jrng.set_stream(2 * index as u64);
    let mut rrng = ChaCha8Rng::seed_from_u64(params.seed);
    rrng.set_stream(2 * index as u64 + 1);

    let target_events = params.events_per_patient.sample(&mut jrng);
    let events = sample_journey(&mut jrng, ontology, target_events);
    let rng = &mut rrng;

    let first = events.iter().map(|e| e.date).min().unwrap_or_else(base_date);
    let last = events.iter().map(|e| e.date).max().unwrap_or_else(base_date);
    let died = events.iter().any(|e| e.concept.as_str() == "death");
    let start = shift(first, -rng.random_range(0..60));
    let end = if died { last } else { shift(last, rng.random_range(30..365)) };
    let n_docs = params.docs_per_patient.sample(rng).max(2);
    let span = (end - start).num_days();
    let mut dates: Vec<NaiveDate> = (0..n_docs - 2).map(|_| shift(start, rng.random_range(0..=span))).collect();
    dates.extend([end, end]);
    dates.sort();

    let doc_ids: Vec<DocId> = (0..n_docs)
        .map(|i| DocId::new(format!("{}-d{:03}", patient_id, i + 1)))
        .collect();
    let mut sentences: Vec<Vec<Sentence>> = (0..n_docs).map(|_| Vec::new()).collect();
    // (doc, sentence) of every mention of each clean event
    let mut placed: Vec<Vec<(usize, usize)>> = vec![Vec::new(); events.len()];

    for (ei, e) in events.iter().enumerate() {
        let primary = dates.partition_point(|d| *d < e.date);
        let (lead, recaps) = prefixes(ontology, e);
        let tail = clean_tail(e);
        let later: Vec<usize> = (primary + 1..n_docs).collect();
        let n_recaps = (1 + rng.random_range(0..=2)).min(later.len());
        let mut docs: Vec<usize> = later.choose_multiple(rng, n_recaps).copied().collect();
        docs.sort_unstable();
        for (k, d) in std::iter::once(primary).chain(docs).enumerate() {
            let prefix = if k == 0 { lead } else { recaps.choose(rng).expect("non-empty") };
            let s = surface(rng, ontology, &e.concept, params.paraphrase_rate);
            sentences[d].push(mention(prefix, &s, &tail));
            placed[ei].push((d, sentences[d].len() - 1));
        }
    }

    let n_contra = if params.contradiction_length_coupling {
        binomial(rng, n_docs, params.contradiction_rate)
    } else {
        binomial(rng, params.docs_per_patient.mean().round() as usize, params.contradiction_rate)
    };
    let mut used = vec![0usize; events.len()];
    let mut log = Vec::new();
    let pregnant = events.iter().any(|e| e.concept.as_str() == "pregnancy");
    for _ in 0..n_contra {
        // (event index, is constraint)
        let eligible: Vec<(usize, bool)> = events
            .iter()
            .enumerate()
            .filter(|&(i, e)| {
                used[i] + 1 < placed[i].len()
                    && e.concept.as_str() != "death"
                    && e.concept.as_str() != "pregnancy"
                    && dates.last().is_some_and(|d| *d > e.date)
            })
            .flat_map(|(i, e)| {
                let constraint = e.concept.as_str() == "hysterectomy" && !pregnant;
                std::iter::once((i, false)).chain(constraint.then_some((i, true)))
            })
            .collect();
        let Some(&(ei, constraint)) = eligible.choose(rng) else {
            break;
        };
        used[ei] += 1;
        let e = &events[ei];
        let after = dates.partition_point(|d| *d <= e.date);
        let d = rng.random_range(after..n_docs);
        let (concept, polarity, sentence) = if constraint {
            let c = ConceptId::from("pregnancy");
            let s = surface(rng, ontology, &c, params.paraphrase_rate);
            (c, Polarity::Asserted, mention("Patient reports ", &s, "."))
        } else {
            let s = surface(rng, ontology, &e.concept, params.paraphrase_rate);
            let m = mention(contradiction_prefix(ontology, e), &s, contradiction_suffix(ontology, e));
            (e.concept.clone(), e.polarity.flip(), m)
        };
        sentences[d].push(sentence);
        log.push(ContradictionRecord {
            patient_id: patient_id.clone(),
            doc_id: doc_ids[d].clone(),
            kind: if constraint { ContradictionKind::Constraint } else { ContradictionKind::Polarity },
            concept,
            polarity,
            target: e.concept.clone(),
        });
    }

    let mut docs = Vec::with_capacity(n_docs);
    for (d, mut own) in sentences.into_iter().enumerate() {
        let (doc_type, header) = *DOC_TYPES.choose(rng).expect("non-empty");
        let n_filler = rng.random_range(12..=30);
        let mut order: Vec<Option<usize>> = (0..own.len()).map(Some).collect();
        order.extend(std::iter::repeat_n(None, n_filler));
        order.shuffle(rng);
        let mut text = String::from(header);
        let mut starts = vec![0usize; own.len()];
        for slot in order {
            text.push(' ');
            match slot {
                Some(k) => {
                    starts[k] = text.len();
                    text.push_str(&own[k].text);
                }
                None => text.push_str(FILLER.choose(rng).expect("non-empty")),
            }
        }
        for (k, s) in own.iter_mut().enumerate() {
            if let Some((a, b)) = s.mention.as_mut() {
                *a += starts[k];
                *b += starts[k];
            }
        }
        docs.push((own, Document {
            patient_id: patient_id.clone(),
            doc_id: doc_ids[d].clone(),
            authored_at: dates[d],
            doc_type: doc_type.to_string(),
            text,
        }));
    }

    let abstraction = Abstraction {
        patient_id: patient_id.clone(),
        events: events
            .iter()
            .zip(&placed)
            .map(|(e, spots)| AbstractionEvent {
                concept: e.concept.clone(),
                polarity: e.polarity,
                attributes: e.attributes.clone(),
                time: TimeInterval::at(Some(e.date)),
                confidence: 1.0,
                support: spots
                    .iter()
                    .map(|&(d, k)| {
                        let (start, end) = docs[d].0[k].mention.expect("clean mention");
                        Provenance {
                            doc_id: doc_ids[d].clone(),
                            authored_at: dates[d],
                            start,
                            end,
                        }
                    })
                    .collect(),
            })
            .collect(),
    };
    PatientOutput {
        docs: docs.into_iter().map(|(_, d)| d).collect(),
        abstraction,
        log,
    }
}

/// Samples clean journeys and renders them into documents. Patient `i` draws
/// from its own random streams, so adding patients leaves earlier ones intact.
pub fn gen_patients(params: &GeneratorParams, ontology: &Ontology) -> Result<(Corpus, GroundTruth), SynthError> {
    params.validate()?;
    let outputs: Vec<PatientOutput> = (0..params.n_patients)
        .into_par_iter()
        .map(|i| gen_patient(i, params, ontology))
        .collect();
    let mut docs = Vec::new();
    let mut abstractions = Vec::with_capacity(outputs.len());
    let mut log = Vec::new();
    for out in outputs {
        docs.extend(out.docs);
        abstractions.push(out.abstraction);
        log.extend(out.log);
    }
    let corpus = Corpus::from_documents(docs)?;
    Ok((corpus, GroundTruth { abstractions, log }))
}

/// Per-patient count of injected contradictions.
pub fn contradiction_counts(truth: &GroundTruth) -> BTreeMap<PatientId, usize> {
    let mut out: BTreeMap<PatientId, usize> =
        truth.abstractions.iter().map(|a| (a.patient_id.clone(), 0)).collect();
    for r in &truth.log {
        *out.entry(r.patient_id.clone()).or_default() += 1;
    }
    out
}
