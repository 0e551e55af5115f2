use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kb::ontology::{ConceptCategory, ConceptDef, ConstraintDef, ConstraintScope, ONTOLOGY_VERSION};
use crate::kb::{AttributeType, Ontology, OntologyFile};

use super::SynthError;

pub const STAGES: [&str; 4] = ["I", "II", "III", "IV"];

/// How many comorbidity concepts to draw from the fixed pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OntologySize {
    pub comorbidities: usize,
}

impl Default for OntologySize {
    fn default() -> Self {
        Self { comorbidities: 8 }
    }
}

const COMORBIDITY_POOL: [(&str, &[&str]); 12] = [
    ("hypertension", &["hypertension", "high blood pressure"]),
    ("type2_diabetes", &["type 2 diabetes", "T2DM"]),
    ("copd", &["COPD", "chronic obstructive pulmonary disease"]),
    ("atrial_fibrillation", &["atrial fibrillation", "AFib"]),
    ("hypothyroidism", &["hypothyroidism", "underactive thyroid"]),
    ("depression", &["depression", "major depressive disorder"]),
    ("chronic_kidney_disease", &["chronic kidney disease", "CKD"]),
    ("obesity", &["obesity"]),
    ("asthma", &["asthma"]),
    ("osteoporosis", &["osteoporosis"]),
    ("hyperlipidemia", &["hyperlipidemia", "high cholesterol"]),
    ("gerd", &["GERD", "acid reflux"]),
];

fn def(id: &str, forms: &[&str], parents: &[&str], category: ConceptCategory) -> ConceptDef {
    ConceptDef {
        id: id.into(),
        surface_forms: forms.iter().map(|s| s.to_string()).collect(),
        parents: parents.iter().map(|&p| p.into()).collect(),
        attributes_schema: BTreeMap::new(),
        category,
        removes: Vec::new(),
    }
}

fn staged(mut c: ConceptDef) -> ConceptDef {
    c.attributes_schema.insert("stage".into(), AttributeType::Ordinal);
    c
}

fn removing(mut c: ConceptDef, organ: &str) -> ConceptDef {
    c.removes.push(organ.into());
    c
}

/// Oncology ontology: cancers with a stage table, biomarkers, an ISA tree of
/// therapies with brand/generic synonyms, procedures (some removing organs),
/// outcomes, and a seeded subset of comorbidities.
pub fn gen_ontology(seed: u64, size: OntologySize) -> Result<Ontology, SynthError> {
    use ConceptCategory::*;
    if size.comorbidities > COMORBIDITY_POOL.len() {
        return Err(SynthError::Params(format!(
            "at most {} comorbidities available",
            COMORBIDITY_POOL.len()
        )));
    }
    let mut concepts = vec![
        def("cancer", &["cancer", "malignancy"], &[], Condition),
        staged(def("breast_cancer", &["breast cancer", "malignant breast neoplasm"], &["cancer"], Condition)),
        staged(def("lung_cancer", &["lung cancer", "lung carcinoma"], &["cancer"], Condition)),
        staged(def("nsclc", &["non-small cell lung cancer", "NSCLC"], &["lung_cancer"], Condition)),
        staged(def("sclc", &["small cell lung cancer", "SCLC"], &["lung_cancer"], Condition)),
        staged(def("colorectal_cancer", &["colorectal cancer", "colon cancer"], &["cancer"], Condition)),
        staged(def("prostate_cancer", &["prostate cancer", "prostate carcinoma"], &["cancer"], Condition)),
        def("pregnancy", &["pregnancy", "gestation"], &[], Condition),
        def("metastatic_disease", &["metastatic disease", "metastases"], &[], Finding),
        def("brain_metastasis", &["brain metastasis", "intracranial metastases"], &["metastatic_disease"], Finding),
        def("liver_metastasis", &["liver metastasis", "hepatic metastases"], &["metastatic_disease"], Finding),
        def("bone_metastasis", &["bone metastasis", "osseous metastases"], &["metastatic_disease"], Finding),
        def("driver_mutation", &["driver mutation"], &[], Biomarker),
        def("egfr_mutation", &["EGFR mutation", "EGFR mutated"], &["driver_mutation"], Biomarker),
        def("alk_rearrangement", &["ALK rearrangement", "ALK fusion"], &["driver_mutation"], Biomarker),
        def("kras_mutation", &["KRAS mutation", "KRAS mutated"], &["driver_mutation"], Biomarker),
        def("brca_mutation", &["BRCA mutation"], &[], Biomarker),
        def("brca1_mutation", &["BRCA1 mutation"], &["brca_mutation"], Biomarker),
        def("brca2_mutation", &["BRCA2 mutation"], &["brca_mutation"], Biomarker),
        def("her2_positive", &["HER2 positive", "HER2 amplified"], &[], Biomarker),
        def("pdl1_high", &["PD-L1 high", "high PD-L1 expression"], &[], Biomarker),
        def("systemic_therapy", &["systemic therapy", "systemic treatment"], &[], Therapy),
        def("chemotherapy", &["chemotherapy", "cytotoxic therapy"], &["systemic_therapy"], Therapy),
        def("platinum_chemotherapy", &["platinum chemotherapy", "platinum-based chemotherapy"], &["chemotherapy"], Therapy),
        def("carboplatin", &["carboplatin", "Paraplatin"], &["platinum_chemotherapy"], Therapy),
        def("cisplatin", &["cisplatin", "Platinol"], &["platinum_chemotherapy"], Therapy),
        def("paclitaxel", &["paclitaxel", "Taxol"], &["chemotherapy"], Therapy),
        def("docetaxel", &["docetaxel", "Taxotere"], &["chemotherapy"], Therapy),
        def("etoposide", &["etoposide", "Toposar"], &["chemotherapy"], Therapy),
        def("fluorouracil", &["fluorouracil", "5-FU"], &["chemotherapy"], Therapy),
        def("targeted_therapy", &["targeted therapy"], &["systemic_therapy"], Therapy),
        def("tki", &["tyrosine kinase inhibitor", "TKI"], &["targeted_therapy"], Therapy),
        def("egfr_tki", &["EGFR TKI", "EGFR inhibitor"], &["tki"], Therapy),
        def("osimertinib", &["osimertinib", "Tagrisso"], &["egfr_tki"], Therapy),
        def("erlotinib", &["erlotinib", "Tarceva"], &["egfr_tki"], Therapy),
        def("alk_tki", &["ALK inhibitor"], &["tki"], Therapy),
        def("alectinib", &["alectinib", "Alecensa"], &["alk_tki"], Therapy),
        def("her2_therapy", &["HER2-directed therapy"], &["targeted_therapy"], Therapy),
        def("trastuzumab", &["trastuzumab", "Herceptin"], &["her2_therapy"], Therapy),
        def("immunotherapy", &["immunotherapy", "checkpoint inhibitor"], &["systemic_therapy"], Therapy),
        def("pembrolizumab", &["pembrolizumab", "Keytruda"], &["immunotherapy"], Therapy),
        def("nivolumab", &["nivolumab", "Opdivo"], &["immunotherapy"], Therapy),
        def("hormone_therapy", &["hormone therapy", "endocrine therapy"], &["systemic_therapy"], Therapy),
        def("tamoxifen", &["tamoxifen", "Nolvadex"], &["hormone_therapy"], Therapy),
        def("letrozole", &["letrozole", "Femara"], &["hormone_therapy"], Therapy),
        def("leuprolide", &["leuprolide", "Lupron"], &["hormone_therapy"], Therapy),
        def("radiation_therapy", &["radiation therapy", "radiotherapy"], &[], Therapy),
        def("surgery", &["surgery", "surgical resection"], &[], Procedure),
        def("mastectomy", &["mastectomy"], &["surgery"], Procedure),
        def("lobectomy", &["lobectomy"], &["surgery"], Procedure),
        def("colectomy", &["colectomy"], &["surgery"], Procedure),
        def("prostatectomy", &["prostatectomy"], &["surgery"], Procedure),
        removing(def("hysterectomy", &["hysterectomy", "total abdominal hysterectomy"], &["surgery"], Procedure), "uterus"),
        removing(def("oophorectomy", &["oophorectomy", "bilateral salpingo-oophorectomy"], &["surgery"], Procedure), "ovary"),
        def("uterus", &["uterus"], &[], Anatomy),
        def("ovary", &["ovary", "ovaries"], &[], Anatomy),
        def("disease_progression", &["disease progression", "progressive disease"], &[], Outcome),
        def("death", &["death", "deceased"], &[], Outcome),
        def("comorbidity", &["chronic condition"], &[], Condition),
    ];

    let mut pool: Vec<usize> = (0..COMORBIDITY_POOL.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ONTOLOGY_STREAM);
    pool.shuffle(&mut rng);
    let mut chosen = pool[..size.comorbidities].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        let (id, forms) = COMORBIDITY_POOL[i];
        concepts.push(def(id, forms, &["comorbidity"], ConceptCategory::Condition));
    }

    let mut ordinals = BTreeMap::new();
    ordinals.insert("stage".to_string(), STAGES.iter().map(|s| s.to_string()).collect());
    Ok(Ontology::new(OntologyFile {
        version: ONTOLOGY_VERSION,
        concepts,
        constraints: vec![ConstraintDef {
            id: "pregnancy_requires_uterus".into(),
            subject_concept: "pregnancy".into(),
            requires_present: "uterus".into(),
            scope: ConstraintScope::FromEventDate,
        }],
        ordinals,
    })?)
}

pub(crate) const ONTOLOGY_STREAM: u64 = u64::MAX;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_deep_enough() {
        let a = gen_ontology(42, OntologySize::default()).unwrap();
        let b = gen_ontology(42, OntologySize::default()).unwrap();
        assert_eq!(a.to_json_bytes(), b.to_json_bytes());
        assert!(a.concepts().len() >= 20);
        assert_eq!(a.depth(&"osimertinib".into()), 4);
        assert_eq!(a.resolve("Tagrisso").map(|c| c.as_str()), Some("osimertinib"));
        for c in ["systemic_therapy", "targeted_therapy", "tki", "egfr_tki"] {
            assert!(a.is_a(&"osimertinib".into(), &c.into()));
        }
        assert_ne!(
            gen_ontology(7, OntologySize { comorbidities: 4 }).unwrap().to_json_bytes(),
            gen_ontology(8, OntologySize { comorbidities: 4 }).unwrap().to_json_bytes()
        );
    }
}
