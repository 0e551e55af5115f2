use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::Cohort;
use crate::eval::{categorize, Category, GoldMatrix, Thresholds};
use crate::ids::{ConceptId, PatientId, QueryId};
use crate::kb::ontology::ConceptCategory;
use crate::kb::{build_kb_from_abstractions, Abstraction, KnowledgeBase, Ontology, Polarity};
use crate::squerl::{
    execute, execute_indices, expert_class, parse, render_nl, translate_nl_ast, Atom, Comparator, QueryAst,
    QueryRecord, Relation, RelationKind,
};

use super::ontology::ONTOLOGY_STREAM;
use super::patients::GroundTruth;
use super::{GeneratorParams, SynthError};

const BANK_STREAM: u64 = ONTOLOGY_STREAM - 1;

/// Replaces every concept id with the given surface form. The result prints
/// as SQuerL text that parses back to the original AST.
fn relabel(ast: &QueryAst, f: &dyn Fn(&ConceptId) -> String) -> QueryAst {
    let atom = |a: &Atom| Atom {
        concept: ConceptId::new(f(&a.concept)),
        ..a.clone()
    };
    match ast {
        QueryAst::Atom(a) => QueryAst::Atom(atom(a)),
        QueryAst::And(l, r) => QueryAst::and(relabel(l, f), relabel(r, f)),
        QueryAst::Or(l, r) => QueryAst::or(relabel(l, f), relabel(r, f)),
        QueryAst::Except(l, r) => QueryAst::except(relabel(l, f), relabel(r, f)),
        QueryAst::Not(x) => QueryAst::not(relabel(x, f)),
        QueryAst::Before(a, b) => QueryAst::Before(atom(a), atom(b)),
    }
}

struct Sizer<'a> {
    kb: &'a KnowledgeBase,
    ontology: &'a Ontology,
}

impl Sizer<'_> {
    fn size(&self, ast: &QueryAst) -> usize {
        execute_indices(ast, self.kb).len()
    }

    fn canonical_nl(&self, ast: &QueryAst) -> Option<String> {
        let nl = render_nl(ast, self.ontology, &|c| self.ontology.canonical_surface(c).to_string())?;
        (translate_nl_ast(&nl, self.ontology).ok()? == *ast).then_some(nl)
    }
}

fn ids_in(ontology: &Ontology, cat: ConceptCategory) -> Vec<ConceptId> {
    ontology
        .concepts()
        .iter()
        .filter(|c| c.category == cat)
        .map(|c| c.id.clone())
        .collect()
}

/// Every query shape the bank draws from, in a fixed order.
fn candidate_pool(ontology: &Ontology) -> Vec<QueryAst> {
    use ConceptCategory::*;
    let cancer = ConceptId::from("cancer");
    let cancers: Vec<ConceptId> = ids_in(ontology, Condition)
        .into_iter()
        .filter(|c| ontology.is_a(c, &cancer))
        .collect();
    let staged: Vec<ConceptId> = cancers
        .iter()
        .filter(|c| ontology.attribute_type(c, "stage").is_some())
        .cloned()
        .collect();
    let therapies = ids_in(ontology, Therapy);
    let procedures = ids_in(ontology, Procedure);
    let biomarkers = ids_in(ontology, Biomarker);
    let findings = ids_in(ontology, Finding);
    let outcomes = ids_in(ontology, Outcome);
    let other_conditions: Vec<ConceptId> = ids_in(ontology, Condition)
        .into_iter()
        .filter(|c| !ontology.is_a(c, &cancer))
        .collect();
    let a = |c: &ConceptId| QueryAst::atom(c.clone());

    let mut pool = Vec::new();
    for c in ontology.concepts() {
        if c.category != Anatomy {
            pool.push(a(&c.id));
        }
    }
    for b in &biomarkers {
        pool.push(QueryAst::Atom(Atom::negated(b.clone())));
    }
    let stage_top = super::STAGES.last().copied().unwrap_or("IV");
    for c in &staged {
        for (cmp, v) in [(Comparator::Ge, "III"), (Comparator::Eq, stage_top), (Comparator::Le, "II"), (Comparator::Eq, "I")] {
            if ontology.canonical_ordinal("stage", v).is_some() {
                pool.push(QueryAst::Atom(Atom::asserted(c.clone()).with_filter("stage", cmp, v)));
            }
        }
    }
    let partners: Vec<&ConceptId> = therapies
        .iter()
        .chain(&procedures)
        .chain(&biomarkers)
        .chain(&findings)
        .chain(&outcomes)
        .chain(&other_conditions)
        .collect();
    for c in &cancers {
        for p in &partners {
            pool.push(QueryAst::and(a(c), a(p)));
        }
        for b in &biomarkers {
            pool.push(QueryAst::and(a(c), Atom::negated(b.clone())));
        }
        for t in therapies.iter().chain(&procedures) {
            pool.push(QueryAst::except(a(c), a(t)));
        }
        for o in &outcomes {
            pool.push(QueryAst::Before(Atom::asserted(c.clone()), Atom::asserted(o.clone())));
        }
        pool.push(QueryAst::Before(Atom::asserted(c.clone()), Atom::asserted("pregnancy")));
        pool.push(QueryAst::Before(Atom::asserted("pregnancy"), Atom::asserted(c.clone())));
    }
    for t in &therapies {
        for p in findings.iter().chain(&outcomes).chain(&biomarkers) {
            pool.push(QueryAst::and(a(t), a(p)));
        }
        for o in &outcomes {
            pool.push(QueryAst::Before(Atom::asserted(t.clone()), Atom::asserted(o.clone())));
            pool.push(QueryAst::except(a(t), a(o)));
        }
    }
    for (i, t) in therapies.iter().enumerate() {
        for u in &therapies[i + 1..] {
            if !ontology.is_a(t, u) && !ontology.is_a(u, t) {
                pool.push(QueryAst::or(a(t), a(u)));
            }
        }
    }
    for (i, f) in findings.iter().enumerate() {
        for g in &findings[i + 1..] {
            pool.push(QueryAst::or(a(f), a(g)));
        }
    }
    for x in outcomes.iter().chain(&procedures).chain(&findings) {
        pool.push(QueryAst::not(a(x)));
    }
    for c in &cancers {
        for b in &biomarkers {
            for t in &therapies {
                pool.push(QueryAst::and(QueryAst::and(a(c), a(b)), a(t)));
            }
        }
    }
    pool
}

struct Candidate {
    ast: QueryAst,
    nl: String,
    size: usize,
}

struct BankBuilder<'a> {
    ontology: &'a Ontology,
    records: Vec<QueryRecord>,
    asts: Vec<QueryAst>,
    used: HashSet<QueryAst>,
}

impl BankBuilder<'_> {
    fn next_id(&self) -> QueryId {
        QueryId::new(format!("q{:03}", self.records.len() + 1))
    }

    fn push(&mut self, ast: QueryAst, nl: String, squerl: QueryAst, relations: Vec<Relation>) -> QueryId {
        let id = self.next_id();
        self.used.insert(ast.clone());
        self.records.push(QueryRecord {
            query_id: id.clone(),
            nl_text: nl,
            squerl_text: squerl.to_string(),
            expert_class: expert_class(&ast, self.ontology),
            relations,
        });
        self.asts.push(ast);
        id
    }

    fn push_canonical(&mut self, c: &Candidate, relations: Vec<Relation>) -> QueryId {
        self.push(c.ast.clone(), c.nl.clone(), c.ast.clone(), relations)
    }

    fn find(&self, ast: &QueryAst) -> Option<QueryId> {
        self.asts.iter().position(|a| a == ast).map(|i| self.records[i].query_id.clone())
    }
}

fn relation(kind: RelationKind, other: QueryId) -> Vec<Relation> {
    vec![Relation { kind, other }]
}

/// Builds the query bank: one ISA subtype chain of length ≥ 5 plus shorter
/// ones, paraphrase pairs, intersection pairs, provably empty queries, and
/// fillers balanced across cohort-size categories.
///
/// Expert class comes from a fixed rubric: one point per operator, filter and
/// negated atom, plus one when any concept sits at ISA depth ≥ 4; 0 is Base,
/// 1 Low, 2–3 Medium, more Hard.
pub fn gen_query_bank(
    seed: u64,
    ontology: &Ontology,
    truth: &GroundTruth,
    params: &GeneratorParams,
) -> Result<Vec<QueryRecord>, SynthError> {
    let n = params.n_queries;
    let kb = build_kb_from_abstractions(&truth.abstractions, ontology)?;
    let sizer = Sizer { kb: &kb, ontology };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BANK_STREAM);
    let thresholds = Thresholds::default();

    let mut pool: Vec<Candidate> = candidate_pool(ontology)
        .into_iter()
        .filter_map(|ast| {
            let nl = sizer.canonical_nl(&ast)?;
            let size = sizer.size(&ast);
            Some(Candidate { ast, nl, size })
        })
        .collect();
    pool.shuffle(&mut rng);

    let chain_len = 5;
    if n < chain_len + 4 {
        return Err(SynthError::Params(format!("n_queries = {n} is too small for a subtype chain")));
    }
    let mut b = BankBuilder {
        ontology,
        records: Vec::new(),
        asts: Vec::new(),
        used: HashSet::new(),
    };

    // Subtype chains: root, root ∧ child, ... down an ISA path.
    let atom_size = |c: &ConceptId| sizer.size(&QueryAst::atom(c.clone()));
    let deep = ontology
        .concepts()
        .iter()
        .filter(|c| ontology.depth(&c.id) >= chain_len - 1 && atom_size(&c.id) > 0)
        .max_by_key(|c| (atom_size(&c.id), std::cmp::Reverse(c.id.clone())))
        .ok_or_else(|| SynthError::Insufficient("no populated concept at ISA depth 4".into()))?;
    let mut chains = vec![isa_path(ontology, &deep.id)];
    if n >= 50 {
        let mut shallow: Vec<&ConceptId> = ontology
            .concepts()
            .iter()
            .map(|c| &c.id)
            .filter(|c| (2..chain_len - 1).contains(&ontology.depth(c)) && atom_size(c) > 0)
            .filter(|c| !chains[0].contains(c))
            .collect();
        shallow.shuffle(&mut rng);
        chains.extend(shallow.into_iter().take(2).map(|c| isa_path(ontology, c)));
    }
    for path in chains {
        let mut ast = QueryAst::atom(path[0].clone());
        let mut parent = match b.find(&ast) {
            Some(id) => id,
            None => {
                let nl = sizer.canonical_nl(&ast).ok_or_else(|| untemplated(&ast))?;
                b.push(ast.clone(), nl, ast.clone(), vec![])
            }
        };
        for c in &path[1..] {
            ast = QueryAst::and(ast, QueryAst::atom(c.clone()));
            let nl = sizer.canonical_nl(&ast).ok_or_else(|| untemplated(&ast))?;
            parent = b.push(ast.clone(), nl, ast.clone(), relation(RelationKind::ChildOf, parent));
        }
    }

    // Paraphrase pairs: the same AST under non-canonical synonyms.
    let n_para = n / 10;
    let has_synonym = |c: &ConceptId| ontology.concept(c).is_some_and(|d| d.surface_forms.len() > 1);
    let mut made = 0;
    for cand in pool.iter().filter(|c| c.size > 0) {
        if made == n_para {
            break;
        }
        if b.used.contains(&cand.ast) || !cand.ast.atoms().iter().any(|a| has_synonym(&a.concept)) {
            continue;
        }
        let picks: BTreeMap<ConceptId, String> = cand
            .ast
            .atoms()
            .iter()
            .filter(|a| has_synonym(&a.concept))
            .map(|a| {
                let forms = &ontology.concept(&a.concept).expect("known concept").surface_forms;
                (a.concept.clone(), forms[1..].choose(&mut rng).expect("synonym").clone())
            })
            .collect();
        let surface = |c: &ConceptId| {
            picks
                .get(c)
                .cloned()
                .unwrap_or_else(|| ontology.canonical_surface(c).to_string())
        };
        let Some(nl) = render_nl(&cand.ast, ontology, &surface) else {
            continue;
        };
        let squerl = relabel(&cand.ast, &surface);
        let round_trips = translate_nl_ast(&nl, ontology).ok().as_ref() == Some(&cand.ast)
            && parse(&squerl.to_string(), ontology).ok().as_ref() == Some(&cand.ast);
        if !round_trips {
            continue;
        }
        let base = b.push_canonical(cand, vec![]);
        let id = b.next_id();
        b.records.push(QueryRecord {
            query_id: id,
            nl_text: nl,
            squerl_text: squerl.to_string(),
            expert_class: expert_class(&cand.ast, ontology),
            relations: relation(RelationKind::ParaphraseOf, base),
        });
        b.asts.push(cand.ast.clone());
        made += 1;
    }

    // Intersection pairs: A and A ∧ x, with x outside A's ISA subtree.
    let n_inter = n / 10;
    let mut made = 0;
    let bases: Vec<&Candidate> = pool
        .iter()
        .filter(|c| matches!(&c.ast, QueryAst::Atom(a) if a.polarity == Polarity::Asserted && a.filters.is_empty()))
        .filter(|c| c.size >= thresholds.beta)
        .collect();
    for cand in pool.iter().filter(|c| c.size > 0) {
        if made == n_inter {
            break;
        }
        let QueryAst::And(l, r) = &cand.ast else {
            continue;
        };
        let (QueryAst::Atom(base_atom), QueryAst::Atom(x)) = (&**l, &**r) else {
            continue;
        };
        if b.used.contains(&cand.ast) || ontology.is_a(&x.concept, &base_atom.concept) {
            continue;
        }
        let Some(base) = bases.iter().find(|c| c.ast == **l) else {
            continue;
        };
        let base_id = match b.find(&base.ast) {
            Some(id) => id,
            None => b.push_canonical(base, vec![]),
        };
        b.push_canonical(cand, relation(RelationKind::IntersectionOf, base_id));
        made += 1;
    }

    // Zero-result queries: monotone, each atom populated, no patient matches.
    let n_zero = (n as f64 * params.zero_result_fraction).round() as usize;
    let zero: Vec<&Candidate> = pool
        .iter()
        .filter(|c| c.size == 0 && c.ast.is_monotone() && !b.used.contains(&c.ast))
        .filter(|c| c.ast.atoms().iter().all(|a| sizer.size(&QueryAst::Atom((*a).clone())) > 0))
        .take(n_zero)
        .collect();
    if zero.len() < n_zero {
        return Err(SynthError::Insufficient(format!(
            "only {} provably empty queries available, {n_zero} requested",
            zero.len()
        )));
    }
    for c in zero {
        b.push_canonical(c, vec![]);
    }

    if b.records.len() > n {
        return Err(SynthError::Params(format!(
            "n_queries = {n} is smaller than the {} structured queries",
            b.records.len()
        )));
    }

    // Fill: keep Broad, Narrow and Sparse counts level.
    let category = |size: usize| categorize(size, thresholds.alpha, thresholds.beta).expect("default thresholds");
    let mut by_cat: BTreeMap<Category, Vec<&Candidate>> = BTreeMap::new();
    for c in pool.iter().filter(|c| c.size > 0 && !b.used.contains(&c.ast)) {
        by_cat.entry(category(c.size)).or_default().push(c);
    }
    for list in by_cat.values_mut() {
        list.reverse();
    }
    let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
    for ast in &b.asts {
        *counts.entry(category(sizer.size(ast))).or_default() += 1;
    }
    while b.records.len() < n {
        let pick = [Category::Broad, Category::Narrow, Category::Sparse]
            .into_iter()
            .filter(|cat| by_cat.get(cat).is_some_and(|l| !l.is_empty()))
            .min_by_key(|cat| counts.get(cat).copied().unwrap_or(0));
        let Some(cat) = pick else {
            return Err(SynthError::Insufficient(format!(
                "ran out of distinct queries after {}",
                b.records.len()
            )));
        };
        let cand = by_cat.get_mut(&cat).and_then(Vec::pop).expect("non-empty");
        if b.used.contains(&cand.ast) {
            continue;
        }
        b.push_canonical(cand, vec![]);
        *counts.entry(cat).or_default() += 1;
    }
    Ok(b.records)
}

fn untemplated(ast: &QueryAst) -> SynthError {
    SynthError::Insufficient(format!("no NL template renders {ast}"))
}

/// Root-to-`leaf` path following first parents.
fn isa_path(ontology: &Ontology, leaf: &ConceptId) -> Vec<ConceptId> {
    let mut path = vec![leaf.clone()];
    let mut cur = leaf.clone();
    while let Some(p) = ontology.concept(&cur).and_then(|c| c.parents.first()) {
        path.push(p.clone());
        cur = p.clone();
    }
    path.reverse();
    path
}

/// Gold cohorts by executing every query over the KB built from clean
/// abstractions. Never looks at rendered text.
pub fn gen_gold(
    abstractions: &[Abstraction],
    bank: &[QueryRecord],
    ontology: &Ontology,
) -> Result<GoldMatrix, SynthError> {
    let kb = build_kb_from_abstractions(abstractions, ontology)?;
    let mut gold = BTreeMap::new();
    for q in bank {
        let ast = parse(&q.squerl_text, ontology).map_err(|e| SynthError::Query {
            query_id: q.query_id.clone(),
            message: e.to_string(),
        })?;
        let cohort = execute(&ast, &kb);
        gold.insert(q.query_id.clone(), Cohort::new(cohort.members().iter().cloned()));
    }
    let population: BTreeSet<PatientId> = abstractions.iter().map(|a| a.patient_id.clone()).collect();
    Ok(GoldMatrix { gold, population })
}

/// How many bank queries fall in each cohort-size category.
pub fn category_counts(gold: &GoldMatrix, thresholds: Thresholds) -> Result<BTreeMap<Category, usize>, SynthError> {
    let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for c in gold.gold.values() {
        *out.entry(categorize(c.len(), thresholds.alpha, thresholds.beta)?).or_default() += 1;
    }
    Ok(out)
}
