mod common;

use std::collections::BTreeSet;

use acr_core::squerl::parse;
use acr_core::synthgen::{self, generate, Benchmark, GeneratorParams};
use common::{abstraction_keys, round_trip_failures, OntologyOracle};

fn small(seed: u64) -> GeneratorParams {
    GeneratorParams {
        seed,
        n_patients: 120,
        n_queries: 40,
        ..GeneratorParams::default()
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&small(5)).unwrap().write(a.path()).unwrap();
    generate(&small(5)).unwrap().write(b.path()).unwrap();
    for f in [
        synthgen::ONTOLOGY_FILE,
        synthgen::CORPUS_FILE,
        synthgen::ABSTRACTIONS_FILE,
        synthgen::CONTRADICTIONS_FILE,
        synthgen::BANK_FILE,
        synthgen::GOLD_FILE,
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = generate(&small(6)).unwrap();
    assert_ne!(c.corpus, generate(&small(5)).unwrap().corpus);
}

#[test]
fn clean_render_round_trips_through_extraction() {
    let params = GeneratorParams {
        contradiction_rate: 0.0,
        paraphrase_rate: 1.0,
        n_patients: 100,
        n_queries: 20,
        ..GeneratorParams::default()
    };
    let b = generate(&params).unwrap();
    assert!(b.truth.log.is_empty());
    let failures = round_trip_failures(&b.ontology, &b.corpus, &b.truth.abstractions);
    assert!(failures.is_empty(), "{} patients differ: {:?}", failures.len(), &failures[..failures.len().min(3)]);
}

#[test]
fn paraphrase_rate_changes_text_but_not_truth() {
    let base = generate(&small(9)).unwrap();
    let other = generate(&GeneratorParams {
        paraphrase_rate: 0.9,
        ..small(9)
    })
    .unwrap();
    // support spans point into the rendered text, so only event content is compared
    let content = |b: &Benchmark| b.truth.abstractions.iter().map(abstraction_keys).collect::<Vec<_>>();
    assert_eq!(content(&base), content(&other));
    assert_eq!(base.gold.gold, other.gold.gold);
    assert_ne!(base.corpus, other.corpus);
}

#[test]
fn gold_matches_brute_force_interpreter() {
    let b = generate(&small(11)).unwrap();
    let oracle = OntologyOracle::new(b.ontology.file());
    for q in &b.bank {
        let ast = parse(&q.squerl_text, &b.ontology).unwrap();
        let want: BTreeSet<String> = b
            .truth
            .abstractions
            .iter()
            .filter(|a| oracle.eligible(&ast, &a.events))
            .map(|a| a.patient_id.to_string())
            .collect();
        let got: BTreeSet<String> = b.gold.get(&q.query_id).unwrap().members().iter().map(|p| p.to_string()).collect();
        assert_eq!(got, want, "{}", q.query_id);
    }
}

#[test]
fn contradictions_are_logged_and_coupled_to_length() {
    let b = generate(&GeneratorParams {
        contradiction_rate: 0.2,
        ..small(3)
    })
    .unwrap();
    assert!(!b.truth.log.is_empty());
    let counts = synthgen::contradiction_counts(&b.truth);
    let docs = b.corpus.doc_counts();
    let mut by_len: Vec<(usize, usize)> = docs
        .iter()
        .map(|(p, &n)| (n, counts.get(p).copied().unwrap_or(0)))
        .collect();
    by_len.sort();
    let third = by_len.len() / 3;
    let low: usize = by_len[..third].iter().map(|x| x.1).sum();
    let high: usize = by_len[by_len.len() - third..].iter().map(|x| x.1).sum();
    assert!(high > low, "top tercile {high} vs bottom {low}");
}

#[test]
fn rejects_out_of_range_params() {
    assert!(generate(&GeneratorParams {
        paraphrase_rate: 1.5,
        ..small(1)
    })
    .is_err());
    assert!(generate(&GeneratorParams {
        n_patients: 0,
        ..small(1)
    })
    .is_err());
}
