use std::collections::{BTreeMap, BTreeSet};

use crate::cohort::Cohort;
use crate::kb::{AttributeType, ConsolidatedEvent, EventRef, KnowledgeBase, Ontology};

use super::{Atom, Comparator, Filter, QueryAst};

type PatientSet = BTreeSet<u32>;

fn filter_holds(f: &Filter, ev: &ConsolidatedEvent, ontology: &Ontology) -> bool {
    let Some(actual) = ev.attributes.get(&f.attribute) else {
        return false;
    };
    let ordinal = ontology.attribute_type(&ev.concept, &f.attribute) == Some(AttributeType::Ordinal)
        || ontology.is_ordinal_attribute(&f.attribute);
    if ordinal {
        let (Some(a), Some(q)) = (
            ontology.ordinal_rank(&f.attribute, actual),
            ontology.ordinal_rank(&f.attribute, &f.value),
        ) else {
            return false;
        };
        match f.comparator {
            Comparator::Eq => a == q,
            Comparator::Ne => a != q,
            Comparator::Ge => a >= q,
            Comparator::Le => a <= q,
        }
    } else {
        let eq = actual.eq_ignore_ascii_case(&f.value);
        match f.comparator {
            Comparator::Eq => eq,
            Comparator::Ne => !eq,
            Comparator::Ge | Comparator::Le => false,
        }
    }
}

/// Does an active event witness the atom? Concept closure via ISA ancestry.
pub fn atom_matches(atom: &Atom, ev: &ConsolidatedEvent, ontology: &Ontology) -> bool {
    ev.is_active()
        && ev.polarity == atom.polarity
        && ontology.is_a(&ev.concept, &atom.concept)
        && atom.filters.iter().all(|f| filter_holds(f, ev, ontology))
}

fn matching<'k>(atom: &'k Atom, kb: &'k KnowledgeBase) -> impl Iterator<Item = (EventRef, &'k ConsolidatedEvent)> + 'k {
    kb.postings(&atom.concept).iter().filter_map(move |&r| {
        let ev = kb.event(r);
        atom_matches(atom, ev, kb.ontology()).then_some((r, ev))
    })
}

fn eval(ast: &QueryAst, kb: &KnowledgeBase) -> PatientSet {
    match ast {
        QueryAst::Atom(a) => matching(a, kb).map(|(r, _)| r.patient).collect(),
        QueryAst::And(l, r) => {
            let l = eval(l, kb);
            if l.is_empty() {
                return l;
            }
            let r = eval(r, kb);
            l.intersection(&r).copied().collect()
        }
        QueryAst::Or(l, r) => {
            let mut l = eval(l, kb);
            l.extend(eval(r, kb));
            l
        }
        QueryAst::Except(l, r) => {
            let l = eval(l, kb);
            let r = eval(r, kb);
            l.difference(&r).copied().collect()
        }
        QueryAst::Not(x) => {
            let x = eval(x, kb);
            (0..kb.patients().len() as u32).filter(|p| !x.contains(p)).collect()
        }
        QueryAst::Before(a, b) => {
            let mut earliest_end: BTreeMap<u32, _> = BTreeMap::new();
            for (r, ev) in matching(a, kb) {
                if let Some(end) = ev.time.end {
                    earliest_end
                        .entry(r.patient)
                        .and_modify(|d| *d = end.min(*d))
                        .or_insert(end);
                }
            }
            let mut out = PatientSet::new();
            for (r, ev) in matching(b, kb) {
                if let (Some(start), Some(end_a)) = (ev.time.start, earliest_end.get(&r.patient)) {
                    if *end_a < start {
                        out.insert(r.patient);
                    }
                }
            }
            out
        }
    }
}

/// Patient indices (into `kb.patients()`) satisfying the query.
pub fn execute_indices(ast: &QueryAst, kb: &KnowledgeBase) -> BTreeSet<u32> {
    eval(ast, kb)
}

/// Evaluates the query; the cohort is ranked by the summed confidence of
/// witnessing events, ties by patient id.
pub fn execute(ast: &QueryAst, kb: &KnowledgeBase) -> Cohort {
    let members = eval(ast, kb);
    let mut score: BTreeMap<u32, f64> = members.iter().map(|&p| (p, 0.0)).collect();
    for atom in ast.atoms() {
        for (r, ev) in matching(atom, kb) {
            if let Some(s) = score.get_mut(&r.patient) {
                *s += ev.confidence;
            }
        }
    }
    let patients = kb.patients();
    let mut ranked: Vec<_> = score
        .into_iter()
        .map(|(p, s)| (patients[p as usize].clone(), s))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Cohort::ranked(ranked).expect("patient indices are unique")
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::NaiveDate;

    use super::*;
    use crate::kb::ontology::tests::chain_ontology;
    use crate::kb::{build_kb_from_abstractions, Abstraction, AbstractionEvent, Polarity, Provenance, TimeInterval};
    use crate::squerl::parse;

    fn ev(concept: &str, pol: Polarity, date: Option<&str>) -> AbstractionEvent {
        let d = date.map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap());
        AbstractionEvent {
            concept: concept.into(),
            polarity: pol,
            attributes: BTreeMap::new(),
            time: TimeInterval::at(d),
            confidence: 0.9,
            support: vec![Provenance {
                doc_id: "d".into(),
                authored_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                start: 0,
                end: 1,
            }],
        }
    }

    fn kb() -> KnowledgeBase {
        let a = |p: &str, events: Vec<AbstractionEvent>| Abstraction {
            patient_id: p.into(),
            events,
        };
        build_kb_from_abstractions(
            &[
                a("p1", vec![ev("osimertinib", Polarity::Asserted, Some("2020-01-01"))]),
                a(
                    "p2",
                    vec![
                        ev("chemotherapy", Polarity::Asserted, Some("2019-01-01")),
                        ev("tki", Polarity::Asserted, Some("2020-01-01")),
                    ],
                ),
                a("p3", vec![ev("tki", Polarity::Negated, None)]),
                a("p4", vec![ev("chemotherapy", Polarity::Asserted, None), ev("tki", Polarity::Asserted, Some("2020-01-01"))]),
            ],
            &chain_ontology(),
        )
        .unwrap()
    }

    fn run(q: &str) -> Vec<String> {
        let kb = kb();
        let ast = parse(q, kb.ontology()).unwrap();
        execute(&ast, &kb).members().iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn subtype_closure() {
        assert_eq!(run("targeted_therapy"), ["p1", "p2", "p4"]);
        assert_eq!(run("Tagrisso"), ["p1"]);
    }

    #[test]
    fn neg_is_not_complement() {
        assert_eq!(run("NEG tki"), ["p3"]);
        assert_eq!(run("NOT tki"), ["p3"]);
        assert_eq!(run("NOT chemotherapy"), ["p1", "p3"]);
    }

    #[test]
    fn set_operators() {
        assert_eq!(run("chemotherapy AND tki"), ["p2", "p4"]);
        assert_eq!(run("tki EXCEPT chemotherapy"), ["p1"]);
        assert_eq!(run("chemotherapy OR NEG tki"), ["p2", "p3", "p4"]);
    }

    #[test]
    fn before_needs_known_dates() {
        assert_eq!(run("BEFORE(chemotherapy, tki)"), ["p2"]);
        assert!(run("BEFORE(tki, chemotherapy)").is_empty());
    }

    #[test]
    fn ranking_covers_members() {
        let kb = kb();
        let c = execute(&parse("systemic_therapy", kb.ontology()).unwrap(), &kb);
        let order: Vec<_> = c.ordered_ids().iter().map(|p| p.as_str()).collect();
        assert_eq!(order, ["p2", "p4", "p1"]);
    }
}
