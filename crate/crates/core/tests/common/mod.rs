//! Independent reference implementations used as test oracles. Nothing here
//! calls into the engine code it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use acr_core::corpus::{chunk_document, Chunk, ChunkParams, Corpus, Document};
use acr_core::embed::{build_index, DenseIndex, EmbedError, Embedder, Embedding, Fingerprint};
use acr_core::eval::{hallucination_ratio, macro_prf, micro_prf, Confusion};
use acr_core::ids::PatientId;
use acr_core::kb::ontology::{ConceptCategory, ConceptDef, OntologyFile};
use acr_core::kb::{
    build_patient_models, Abstraction, AbstractionEvent, AttributeType, Attributes, ConsolidationConfig,
    ExtractorConfig, Ontology, PatientModel, Polarity, RuleExtractor,
};
use acr_core::num::Scalar;
use acr_core::squerl::{Atom, Comparator, QueryAst};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parent links read straight from the ontology document.
pub struct OntologyOracle {
    parents: HashMap<String, Vec<String>>,
    schema: HashMap<(String, String), AttributeType>,
    ordinals: BTreeMap<String, Vec<String>>,
}

impl OntologyOracle {
    pub fn new(file: &OntologyFile) -> Self {
        let mut parents = HashMap::new();
        let mut schema = HashMap::new();
        for c in &file.concepts {
            parents.insert(
                c.id.as_str().to_string(),
                c.parents.iter().map(|p| p.as_str().to_string()).collect(),
            );
            for (attr, ty) in &c.attributes_schema {
                schema.insert((c.id.as_str().to_string(), attr.clone()), *ty);
            }
        }
        Self {
            parents,
            schema,
            ordinals: file.ordinals.clone(),
        }
    }

    /// Depth-first walk up the parent links.
    pub fn is_a(&self, child: &str, ancestor: &str) -> bool {
        let mut stack = vec![child.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(c) = stack.pop() {
            if c == ancestor {
                return true;
            }
            if seen.insert(c.clone()) {
                if let Some(ps) = self.parents.get(&c) {
                    stack.extend(ps.iter().cloned());
                }
            }
        }
        false
    }

    /// Every concept with a DFS path to `ancestor`, itself included.
    pub fn descendants(&self, ancestor: &str) -> BTreeSet<String> {
        self.parents
            .keys()
            .filter(|c| self.is_a(c, ancestor))
            .cloned()
            .collect()
    }

    pub fn ancestors(&self, child: &str) -> BTreeSet<String> {
        self.parents
            .keys()
            .filter(|a| self.is_a(child, a))
            .cloned()
            .collect()
    }

    fn rank(&self, attr: &str, v: &str) -> Option<usize> {
        self.ordinals
            .get(attr)?
            .iter()
            .position(|x| x.to_lowercase() == v.to_lowercase())
    }

    fn filter_holds(&self, concept: &str, attrs: &BTreeMap<String, String>, attr: &str, cmp: Comparator, value: &str) -> bool {
        let Some(actual) = attrs.get(attr) else {
            return false;
        };
        let ordinal = self.schema.get(&(concept.to_string(), attr.to_string())) == Some(&AttributeType::Ordinal)
            || self.ordinals.contains_key(attr);
        if ordinal {
            match (self.rank(attr, actual), self.rank(attr, value)) {
                (Some(a), Some(q)) => match cmp {
                    Comparator::Eq => a == q,
                    Comparator::Ne => a != q,
                    Comparator::Ge => a >= q,
                    Comparator::Le => a <= q,
                },
                _ => false,
            }
        } else {
            let eq = actual.to_lowercase() == value.to_lowercase();
            match cmp {
                Comparator::Eq => eq,
                Comparator::Ne => !eq,
                _ => false,
            }
        }
    }

    fn matches(&self, atom: &Atom, e: &AbstractionEvent) -> bool {
        e.polarity == atom.polarity
            && self.is_a(e.concept.as_str(), atom.concept.as_str())
            && atom.filters.iter().all(|f| {
                self.filter_holds(e.concept.as_str(), &e.attributes, &f.attribute, f.comparator, &f.value)
            })
    }

    /// Does one patient's event list satisfy the query?
    pub fn eligible(&self, ast: &QueryAst, events: &[AbstractionEvent]) -> bool {
        match ast {
            QueryAst::Atom(a) => events.iter().any(|e| self.matches(a, e)),
            QueryAst::And(l, r) => self.eligible(l, events) && self.eligible(r, events),
            QueryAst::Or(l, r) => self.eligible(l, events) || self.eligible(r, events),
            QueryAst::Except(l, r) => self.eligible(l, events) && !self.eligible(r, events),
            QueryAst::Not(x) => !self.eligible(x, events),
            QueryAst::Before(a, b) => events.iter().any(|ea| {
                self.matches(a, ea)
                    && events.iter().any(|eb| {
                        self.matches(b, eb)
                            && matches!((ea.time.end, eb.time.start), (Some(x), Some(y)) if x < y)
                    })
            }),
        }
    }
}

pub const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// One random list of per-query counts checked against the scalar oracle.
pub fn check_confusion_set(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..40);
    let items: Vec<(u64, u64, u64)> = (0..n)
        .map(|_| {
            // zeros are frequent so the 0/0 conventions get exercised
            let mut draw = || if rng.random_bool(0.2) { 0 } else { rng.random_range(0..500u64) };
            (draw(), draw(), draw())
        })
        .collect();
    let confusions: Vec<Confusion> = items
        .iter()
        .map(|&(tp, fp, fn_)| Confusion { tp, fp, fn_, tn: 1000 })
        .collect();
    let m = macro_prf::<f64>(&confusions).map_err(|e| e.to_string())?;
    let (p, r, f) = scalar_macro(&items);
    if !(close(m.precision, p) && close(m.recall, r) && close(m.f1, f)) {
        return Err(format!("seed {seed}: macro {m:?} vs ({p}, {r}, {f})"));
    }
    let u = micro_prf::<f64>(&confusions).map_err(|e| e.to_string())?;
    let (p, r, f) = scalar_micro(&items);
    if !(close(u.precision, p) && close(u.recall, r) && close(u.f1, f)) {
        return Err(format!("seed {seed}: micro {u:?} vs ({p}, {r}, {f})"));
    }
    for (c, &(tp, fp, fn_)) in confusions.iter().zip(&items) {
        let (p, r, f) = scalar_prf(tp, fp, fn_);
        if !(close(c.precision(), p) && close(c.recall(), r) && close(c.f1(), f)) {
            return Err(format!("seed {seed}: per-query {c:?}"));
        }
        match hallucination_ratio::<f64>(c) {
            Ok(h) if tp + fn_ > 0 && close(h, fp as f64 / (tp + fn_) as f64) => {}
            Err(_) if tp + fn_ == 0 => {}
            other => return Err(format!("seed {seed}: hallucination ratio {other:?} for {c:?}")),
        }
    }
    Ok(())
}

/// Precision, recall, F1 from raw counts with 0/0 read as 0.
pub fn scalar_prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Mean of per-item scores.
pub fn scalar_macro(items: &[(u64, u64, u64)]) -> (f64, f64, f64) {
    let n = items.len() as f64;
    let mut acc = (0.0, 0.0, 0.0);
    for &(tp, fp, fn_) in items {
        let (p, r, f) = scalar_prf(tp, fp, fn_);
        acc.0 += p;
        acc.1 += r;
        acc.2 += f;
    }
    (acc.0 / n, acc.1 / n, acc.2 / n)
}

/// Scores of the pooled counts.
pub fn scalar_micro(items: &[(u64, u64, u64)]) -> (f64, f64, f64) {
    let (tp, fp, fn_) = items
        .iter()
        .fold((0, 0, 0), |a, &(t, f, n)| (a.0 + t, a.1 + f, a.2 + n));
    scalar_prf(tp, fp, fn_)
}

/// Full sort of every stored vector by clamped dot product, ties by position.
pub fn brute_topk<S: Scalar>(query: &[S], vectors: &[Vec<S>], k: usize) -> Vec<(usize, S)> {
    let mut all: Vec<(usize, S)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut s = S::zero();
            for j in 0..v.len() {
                s = s + query[j] * v[j];
            }
            (i, s.max(-S::one()).min(S::one()))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Looks vectors up by chunk text; used to put arbitrary vectors in an index.
pub struct TableEmbedder<S> {
    pub table: HashMap<String, Embedding<S>>,
}

impl<S: Scalar> Embedder<S> for TableEmbedder<S> {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            name: "table".into(),
            params_hash: self.table.len().to_string(),
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbedError> {
        Ok(texts.iter().map(|t| self.table[*t].clone()).collect())
    }
}

fn random_vector<S: Scalar>(rng: &mut ChaCha8Rng, d: usize, coarse: bool) -> Vec<S> {
    (0..d)
        .map(|_| {
            let v = if coarse {
                rng.random_range(-2i32..=2) as f64
            } else {
                rng.random_range(-1.0..1.0)
            };
            S::from_f64_lossy(v)
        })
        .collect()
}

/// One random search instance checked against [`brute_topk`].
/// Coarse integer components make exact score ties common.
pub fn check_search_instance<S: Scalar>(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..150);
    let d = rng.random_range(1..24);
    let coarse = rng.random_bool(0.5);
    let mut table = HashMap::new();
    let mut chunks = Vec::new();
    // ids drawn out of order so the index has to sort them
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    for &id in &ids {
        let text = format!("v{id}");
        let v = Embedding::normalized(random_vector::<S>(&mut rng, d, coarse)).map_err(|e| e.to_string())?;
        table.insert(text.clone(), v);
        chunks.push(Chunk {
            chunk_id: format!("c{id:04}").as_str().into(),
            patient_id: format!("p{}", id % 7).as_str().into(),
            doc_id: format!("d{id}").as_str().into(),
            token_start: 0,
            token_end: 1,
            text,
        });
    }
    let embedder = TableEmbedder { table };
    let index: DenseIndex<S> = build_index(&chunks, &embedder).map_err(|e| e.to_string())?;

    let mut sorted = chunks.clone();
    sorted.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    let vectors: Vec<Vec<S>> = sorted.iter().map(|c| embedder.table[&c.text].values().to_vec()).collect();

    for _ in 0..3 {
        let q = Embedding::normalized(random_vector::<S>(&mut rng, d, coarse)).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..n + 5);
        let got = index.search(&q, k).map_err(|e| e.to_string())?;
        let want = brute_topk(q.values(), &vectors, k);
        if got.len() != want.len() {
            return Err(format!("seed {seed}: {} hits, expected {}", got.len(), want.len()));
        }
        for (h, (i, s)) in got.iter().zip(&want) {
            if h.chunk_id != sorted[*i].chunk_id || h.score != *s || h.patient_id != sorted[*i].patient_id {
                return Err(format!(
                    "seed {seed}: hit {} ({}) vs expected {} ({})",
                    h.chunk_id, h.score, sorted[*i].chunk_id, s
                ));
            }
        }
    }

    let bytes = index.to_bytes();
    let back = DenseIndex::<S>::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if back.to_bytes() != bytes {
        return Err(format!("seed {seed}: serialization is not byte-identical"));
    }
    Ok(())
}

/// Whitespace-separated document with irregular spacing.
pub fn random_document(rng: &mut ChaCha8Rng, n_tokens: usize) -> Document {
    const WORDS: [&str; 8] = ["alpha", "b", "c3", "d-4", "é", "x.y", "(z)", "42"];
    const GAPS: [&str; 5] = [" ", "  ", "\t", "\n", " \n "];
    let mut text = String::new();
    if rng.random_bool(0.2) {
        text.push_str(GAPS[rng.random_range(0..GAPS.len())]);
    }
    for i in 0..n_tokens {
        if i > 0 {
            text.push_str(GAPS[rng.random_range(0..GAPS.len())]);
        }
        text.push_str(WORDS[rng.random_range(0..WORDS.len())]);
        text.push_str(&i.to_string());
    }
    if rng.random_bool(0.2) {
        text.push('\n');
    }
    Document {
        patient_id: "p1".into(),
        doc_id: "d1".into(),
        authored_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        doc_type: "note".into(),
        text,
    }
}

/// Coverage, stride, count and text of one chunked document.
pub fn check_chunking(doc: &Document, params: ChunkParams) -> Result<(), String> {
    let chunks = chunk_document(doc, params).map_err(|e| e.to_string())?;
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    let t = tokens.len() as i64;
    let (size, overlap) = (params.chunk_size as i64, params.overlap as i64);
    let stride = size - overlap;
    let rest = t - overlap;
    let expected = if rest <= 0 { 1 } else { ((rest + stride - 1) / stride).max(1) };
    let ctx = format!("T={t} size={size} overlap={overlap}");
    if chunks.len() as i64 != expected {
        return Err(format!("{ctx}: {} chunks, expected {expected}", chunks.len()));
    }
    let mut covered = vec![false; tokens.len()];
    let mut ids = BTreeSet::new();
    for (i, c) in chunks.iter().enumerate() {
        let start = i as i64 * stride;
        let end = (start + size).min(t);
        if c.token_start as i64 != start || c.token_end as i64 != end {
            return Err(format!("{ctx}: chunk {i} spans {}..{}, expected {start}..{end}", c.token_start, c.token_end));
        }
        if c.text != tokens[start as usize..end as usize].join(" ") {
            return Err(format!("{ctx}: chunk {i} text differs"));
        }
        if c.doc_id != doc.doc_id || c.patient_id != doc.patient_id || !ids.insert(c.chunk_id.clone()) {
            return Err(format!("{ctx}: chunk {i} has wrong or repeated ids"));
        }
        covered[start as usize..end as usize].iter_mut().for_each(|x| *x = true);
    }
    if covered.iter().any(|c| !c) {
        return Err(format!("{ctx}: tokens left uncovered"));
    }
    if chunks.last().map(|c| c.token_end) != Some(tokens.len()) {
        return Err(format!("{ctx}: last chunk does not reach the end"));
    }
    Ok(())
}

/// One random chunking instance.
pub fn check_chunk_instance(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk_size = rng.random_range(1..40);
    let overlap = rng.random_range(0..chunk_size);
    let n_tokens = rng.random_range(1..200);
    let doc = random_document(&mut rng, n_tokens);
    check_chunking(&doc, ChunkParams { chunk_size, overlap })
}

pub fn concept(id: &str, forms: &[&str], parents: &[&str]) -> ConceptDef {
    ConceptDef {
        id: id.into(),
        surface_forms: forms.iter().map(|s| s.to_string()).collect(),
        parents: parents.iter().map(|&p| p.into()).collect(),
        attributes_schema: BTreeMap::new(),
        category: ConceptCategory::default(),
        removes: Vec::new(),
    }
}

/// Random DAG over `n` concepts; concept i may only have parents below i.
pub fn random_dag(n: usize, edges: &[(usize, usize)]) -> OntologyFile {
    let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        let (a, b) = (a % n, b % n);
        let (lo, hi) = (a.min(b), a.max(b));
        if lo != hi {
            parents[hi].insert(lo);
        }
    }
    let concepts = (0..n)
        .map(|i| {
            let id = format!("c{i}");
            let form = format!("concept {i}");
            let ps: Vec<String> = parents[i].iter().map(|p| format!("c{p}")).collect();
            let ps: Vec<&str> = ps.iter().map(String::as_str).collect();
            concept(&id, &[&form], &ps)
        })
        .collect();
    OntologyFile {
        version: acr_core::kb::ontology::ONTOLOGY_VERSION,
        concepts,
        constraints: Vec::new(),
        ordinals: BTreeMap::new(),
    }
}

pub fn polarity(neg: bool) -> Polarity {
    if neg {
        Polarity::Negated
    } else {
        Polarity::Asserted
    }
}

pub type EventKey = (String, Polarity, Attributes, Option<NaiveDate>, Option<NaiveDate>);

fn lower(a: &Attributes) -> Attributes {
    a.iter().map(|(k, v)| (k.to_lowercase(), v.to_lowercase())).collect()
}

pub fn abstraction_keys(a: &Abstraction) -> BTreeSet<EventKey> {
    a.events
        .iter()
        .map(|e| (e.concept.to_string(), e.polarity, lower(&e.attributes), e.time.start, e.time.end))
        .collect()
}

pub fn model_keys(m: &PatientModel) -> BTreeSet<EventKey> {
    m.active_events()
        .map(|(_, e)| (e.concept.to_string(), e.polarity, lower(&e.attributes), e.time.start, e.time.end))
        .collect()
}

/// Patients whose extracted active events differ from their clean abstraction.
pub fn round_trip_failures(ontology: &Ontology, corpus: &Corpus, abstractions: &[Abstraction]) -> Vec<String> {
    let extractor = RuleExtractor::new(ontology, ExtractorConfig::default());
    let models = build_patient_models(corpus, ontology, &extractor, &ConsolidationConfig::default()).unwrap();
    let by_id: HashMap<&PatientId, &PatientModel> = models.iter().map(|m| (&m.patient_id, m)).collect();
    let mut failures = Vec::new();
    for a in abstractions {
        let want = abstraction_keys(a);
        let got = by_id.get(&a.patient_id).map(|m| model_keys(m)).unwrap_or_default();
        if want != got {
            failures.push(format!(
                "{}: missing {:?}, extra {:?}",
                a.patient_id,
                want.difference(&got).collect::<Vec<_>>(),
                got.difference(&want).collect::<Vec<_>>()
            ));
        }
    }
    failures
}

/// What the three-note paradox patient ends up as under one policy.
#[derive(Debug)]
pub struct ParadoxOutcome {
    pub in_cohort: bool,
    /// `(constraint id, winner concept, loser concept)` per constraint conflict.
    pub constraint_conflicts: Vec<(String, String, String)>,
    pub polarity_conflicts: usize,
    pub retracted: Vec<String>,
}

/// Breast cancer, then a hysterectomy note, then a current pregnancy, each
/// in its own document; query is "breast cancer, later pregnancy".
pub fn paradox_scenario(policy: ConsolidationConfig, surgery_confidence: Option<f64>) -> ParadoxOutcome {
    use acr_core::kb::{build_kb, ConflictKind};
    use acr_core::squerl::{execute, parse};
    use acr_core::synthgen::{gen_ontology, OntologySize};

    let ontology = gen_ontology(42, OntologySize::default()).unwrap();
    let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
    let doc = |id: &str, at: &str, ty: &str, text: &str| Document {
        patient_id: "paradox".into(),
        doc_id: id.into(),
        authored_at: date(at),
        doc_type: ty.into(),
        text: text.into(),
    };
    let corpus = acr_core::corpus::Corpus::from_documents([
        doc(
            "paradox-d1",
            "2015-03-02",
            "oncology_consult",
            "Oncology consultation. 41 year old woman diagnosed with breast cancer @date{2015-02-20} stage II. Plan surgery and chemotherapy.",
        ),
        doc(
            "paradox-d2",
            "2016-06-14",
            "operative_note",
            "Operative note. Patient underwent total abdominal hysterectomy @date{2016-06-10} for risk reduction. Recovery uneventful.",
        ),
        doc(
            "paradox-d3",
            "2019-09-05",
            "gynecology_note",
            "Gynecology visit. Patient presents with pregnancy @date{2019-09-01} confirmed by ultrasound.",
        ),
    ])
    .unwrap();
    let mut config = ExtractorConfig::default();
    if let Some(c) = surgery_confidence {
        config.confidence_overrides.insert("hysterectomy".into(), c);
    }
    let extractor = RuleExtractor::new(&ontology, config);
    let models = build_patient_models(&corpus, &ontology, &extractor, &policy).unwrap();
    let model = models[0].clone();
    let kb = build_kb(models, &ontology).unwrap();
    let ast = parse("BEFORE(breast_cancer, pregnancy)", &ontology).unwrap();
    let in_cohort = execute(&ast, &kb).members().contains(&acr_core::ids::PatientId::from("paradox"));

    let concept = |i: usize| model.events[i].concept.to_string();
    let constraint_conflicts = model
        .conflicts
        .iter()
        .filter_map(|c| match &c.kind {
            ConflictKind::Constraint { constraint_id } => Some((constraint_id.clone(), concept(c.winner), concept(c.loser))),
            ConflictKind::Polarity => None,
        })
        .collect();
    ParadoxOutcome {
        in_cohort,
        constraint_conflicts,
        polarity_conflicts: model.conflicts.iter().filter(|c| c.kind == ConflictKind::Polarity).count(),
        retracted: model
            .events
            .iter()
            .filter(|e| !e.is_active())
            .map(|e| e.concept.to_string())
            .collect(),
    }
}
