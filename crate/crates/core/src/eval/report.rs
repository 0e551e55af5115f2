use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::ids::{PatientId, QueryId};
use crate::io::short_hash;
use crate::squerl::{ExpertClass, QueryRecord, RelationKind};

use super::interchange::{CohortRecord, GoldMatrix};
use super::metrics::{
    categorize, confusion, confusion_of_sets, fp_count, hallucination_ratio, intersection_check, macro_prf,
    micro_prf, oracle_topk, paraphrase_check, round_pct, subtype_check, violation_pct, Category, Confusion,
    ParaphraseDiff, PrfScores, Thresholds,
};
use super::EvalError;

pub type Prf = PrfScores<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    Micro,
}

/// Broad and Narrow are macro-averaged, Sparse micro-averaged.
pub fn averaging_for(category: Category) -> Averaging {
    match category {
        Category::Sparse => Averaging::Micro,
        _ => Averaging::Macro,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: QueryId,
    pub category: Category,
    pub expert_class: ExpertClass,
    pub gold_size: usize,
    pub pred_size: usize,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent for zero-result queries, where it is undefined.
    pub hallucination_ratio: Option<f64>,
    pub fp_count: usize,
    /// Present when the prediction carries a ranking.
    pub oracle: Option<Confusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub category: Category,
    pub averaging: Averaging,
    pub n_queries: usize,
    pub cohort_retrieval: Option<Prf>,
    pub oracle_topk: Option<Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub stratum: String,
    pub n_queries: usize,
    /// `None` when the stratum has no queries.
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRow {
    pub query_a: QueryId,
    pub query_b: QueryId,
    pub size_a: usize,
    pub size_b: usize,
    #[serde(flatten)]
    pub diff: ParaphraseDiff,
}

/// `inner` should be contained in `outer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRow {
    pub outer: QueryId,
    pub inner: QueryId,
    pub outer_size: usize,
    pub inner_size: usize,
    pub violations: usize,
    pub pct_of_inner: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub paraphrase: Vec<ParaphraseRow>,
    pub intersection: Vec<ContainmentRow>,
    pub subtype: Vec<ContainmentRow>,
}

impl ConsistencyReport {
    pub fn paraphrase_violations(&self) -> usize {
        self.paraphrase.iter().map(|r| r.diff.a_minus_b + r.diff.b_minus_a).sum()
    }

    pub fn intersection_violations(&self) -> usize {
        self.intersection.iter().map(|r| r.violations).sum()
    }

    pub fn subtype_violations(&self) -> usize {
        self.subtype.iter().map(|r| r.violations).sum()
    }

    pub fn total_violations(&self) -> usize {
        self.paraphrase_violations() + self.intersection_violations() + self.subtype_violations()
    }
}

fn cohort_of<'a>(cohorts: &'a BTreeMap<QueryId, Cohort>, q: &QueryId) -> Result<&'a Cohort, EvalError> {
    cohorts.get(q).ok_or_else(|| EvalError::MissingCohort(q.clone()))
}

/// Gold-free checks driven by the bank's relation annotations.
pub fn consistency_report(
    bank: &[QueryRecord],
    cohorts: &BTreeMap<QueryId, Cohort>,
) -> Result<ConsistencyReport, EvalError> {
    let mut out = ConsistencyReport::default();
    for rec in bank {
        for rel in &rec.relations {
            let this = cohort_of(cohorts, &rec.query_id)?;
            let other = cohort_of(cohorts, &rel.other)?;
            match rel.kind {
                RelationKind::ParaphraseOf => out.paraphrase.push(ParaphraseRow {
                    query_a: rel.other.clone(),
                    query_b: rec.query_id.clone(),
                    size_a: other.len(),
                    size_b: this.len(),
                    diff: paraphrase_check(other, this),
                }),
                RelationKind::IntersectionOf | RelationKind::ChildOf => {
                    let violations = if rel.kind == RelationKind::ChildOf {
                        subtype_check(other, this)
                    } else {
                        intersection_check(other, this)
                    };
                    let row = ContainmentRow {
                        outer: rel.other.clone(),
                        inner: rec.query_id.clone(),
                        outer_size: other.len(),
                        inner_size: this.len(),
                        violations,
                        pct_of_inner: violation_pct(violations, this),
                    };
                    if rel.kind == RelationKind::ChildOf {
                        out.subtype.push(row);
                    } else {
                        out.intersection.push(row);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TercileBounds {
    pub tercile: usize,
    pub n_patients: usize,
    pub min_docs: usize,
    pub max_docs: usize,
}

/// Patients split into thirds by document count.
#[derive(Debug, Clone, PartialEq)]
pub struct Terciles {
    pub members: [BTreeSet<PatientId>; 3],
    pub bounds: Vec<TercileBounds>,
}

/// Sorts by `(N_d, patient_id)`; positions `[⌊t·n/3⌋, ⌊(t+1)·n/3⌋)` form tercile `t`.
pub fn doc_count_terciles(doc_counts: &BTreeMap<PatientId, usize>) -> Terciles {
    let mut sorted: Vec<(usize, &PatientId)> = doc_counts.iter().map(|(p, &n)| (n, p)).collect();
    sorted.sort();
    let n = sorted.len();
    let mut members: [BTreeSet<PatientId>; 3] = Default::default();
    let mut bounds = Vec::new();
    for t in 0..3 {
        let part = &sorted[t * n / 3..(t + 1) * n / 3];
        members[t] = part.iter().map(|(_, p)| (*p).clone()).collect();
        bounds.push(TercileBounds {
            tercile: t + 1,
            n_patients: part.len(),
            min_docs: part.first().map_or(0, |x| x.0),
            max_docs: part.last().map_or(0, |x| x.0),
        });
    }
    Terciles { members, bounds }
}

fn restrict(c: &Cohort, stratum: &BTreeSet<PatientId>) -> BTreeSet<PatientId> {
    c.members().intersection(stratum).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    /// Hash of the canonical cohort file this report scores.
    pub cohorts_hash: String,
    pub categories: Vec<CategoryScores>,
    pub per_query: Vec<QueryScore>,
    pub expert_strata: Vec<StratumRow>,
    pub tercile_strata: Vec<StratumRow>,
    pub consistency: ConsistencyReport,
}

impl SystemReport {
    pub fn category(&self, c: Category) -> Option<&CategoryScores> {
        self.categories.iter().find(|s| s.category == c)
    }

    pub fn zero_result_fp(&self) -> impl Iterator<Item = (&QueryId, usize)> {
        self.per_query
            .iter()
            .filter(|q| q.category == Category::ZeroResult)
            .map(|q| (&q.query_id, q.fp_count))
    }
}

pub fn cohorts_hash(cohorts: &BTreeMap<QueryId, Cohort>) -> String {
    let records: Vec<_> = cohorts
        .iter()
        .map(|(q, c)| CohortRecord::from_cohort(q.clone(), c))
        .collect();
    short_hash(&crate::io::jsonl_bytes(&records).expect("cohort records serialize"))
}

fn averaged(avg: Averaging, cs: &[Confusion]) -> Option<Prf> {
    match avg {
        Averaging::Macro => macro_prf(cs).ok(),
        Averaging::Micro => micro_prf(cs).ok(),
    }
}

/// Scores one system's cohorts against gold.
pub fn evaluate_system(
    system: &str,
    cohorts: &BTreeMap<QueryId, Cohort>,
    gold: &GoldMatrix,
    bank: &[QueryRecord],
    terciles: &Terciles,
    thresholds: Thresholds,
) -> Result<SystemReport, EvalError> {
    thresholds.validate()?;
    let mut per_query = Vec::with_capacity(bank.len());
    for rec in bank {
        let pred = cohort_of(cohorts, &rec.query_id)?;
        let g = gold.get(&rec.query_id)?;
        let conf = confusion(pred, g, &gold.population)?;
        let oracle = match pred.ranking() {
            Some(_) => Some(oracle_topk(pred, g, &gold.population)?),
            None => None,
        };
        per_query.push(QueryScore {
            query_id: rec.query_id.clone(),
            category: categorize(g.len(), thresholds.alpha, thresholds.beta)?,
            expert_class: rec.expert_class,
            gold_size: g.len(),
            pred_size: pred.len(),
            confusion: conf,
            precision: conf.precision(),
            recall: conf.recall(),
            f1: conf.f1(),
            hallucination_ratio: hallucination_ratio(&conf).ok(),
            fp_count: fp_count(pred, g),
            oracle,
        });
    }

    let categories = [Category::Broad, Category::Narrow, Category::Sparse]
        .into_iter()
        .map(|cat| {
            let qs: Vec<&QueryScore> = per_query.iter().filter(|q| q.category == cat).collect();
            let avg = averaging_for(cat);
            let conf: Vec<Confusion> = qs.iter().map(|q| q.confusion).collect();
            let oracle: Option<Vec<Confusion>> = qs.iter().map(|q| q.oracle).collect();
            CategoryScores {
                category: cat,
                averaging: avg,
                n_queries: qs.len(),
                cohort_retrieval: averaged(avg, &conf),
                oracle_topk: oracle.and_then(|o| averaged(avg, &o)),
            }
        })
        .collect();

    let expert_strata = ExpertClass::ALL
        .into_iter()
        .map(|class| {
            let conf: Vec<Confusion> = per_query
                .iter()
                .filter(|q| q.expert_class == class && q.category != Category::ZeroResult)
                .map(|q| q.confusion)
                .collect();
            StratumRow {
                stratum: class.as_str().to_string(),
                n_queries: conf.len(),
                macro_f1: macro_prf::<f64>(&conf).ok().map(|p| p.f1),
            }
        })
        .collect();

    let mut tercile_strata = Vec::new();
    for (t, stratum) in terciles.members.iter().enumerate() {
        let mut conf = Vec::new();
        for rec in bank {
            let g = restrict(gold.get(&rec.query_id)?, stratum);
            if g.is_empty() {
                continue;
            }
            let p = restrict(cohort_of(cohorts, &rec.query_id)?, stratum);
            conf.push(confusion_of_sets(&p, &g, stratum.len()));
        }
        tercile_strata.push(StratumRow {
            stratum: format!("T{}", t + 1),
            n_queries: conf.len(),
            macro_f1: macro_prf::<f64>(&conf).ok().map(|p| p.f1),
        });
    }

    Ok(SystemReport {
        system: system.to_string(),
        cohorts_hash: cohorts_hash(cohorts),
        categories,
        per_query,
        expert_strata,
        tercile_strata,
        consistency: consistency_report(bank, cohorts)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub alpha: usize,
    pub beta: usize,
    pub population_size: usize,
    pub n_queries: usize,
    pub bank_hash: String,
    pub gold_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub tercile_bounds: Vec<TercileBounds>,
    pub systems: Vec<SystemReport>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "–".to_string(), |x| format!("{x:.3}"))
}

impl EvalReport {
    pub fn system(&self, name: &str) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == name)
    }

    /// Canonical JSON: fixed field order, full precision.
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("report serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn to_markdown(&self) -> String {
        let m = &self.metadata;
        let mut s = String::new();
        let _ = writeln!(s, "# Cohort retrieval evaluation\n");
        let _ = writeln!(
            s,
            "tool {} · config `{}` · seed {} · bank `{}` · gold `{}` · {} patients · {} queries · α={} β={}\n",
            m.tool_version,
            m.config_hash,
            m.seed.map_or("–".into(), |x| x.to_string()),
            m.bank_hash,
            m.gold_hash,
            m.population_size,
            m.n_queries,
            m.alpha,
            m.beta
        );
        for (title, oracle) in [("Cohort Retrieval", false), ("Oracle Top-k", true)] {
            let _ = writeln!(s, "## {title}\n");
            let _ = writeln!(
                s,
                "| System | Broad P | Broad R | Broad F1 | Narrow P | Narrow R | Narrow F1 | Sparse P | Sparse R | Sparse F1 |"
            );
            let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
            for sys in &self.systems {
                let _ = write!(s, "| {} ", sys.system);
                for cat in &sys.categories {
                    let prf = if oracle { cat.oracle_topk } else { cat.cohort_retrieval };
                    let _ = write!(
                        s,
                        "| {} | {} | {} ",
                        fmt_opt(prf.map(|p| p.precision)),
                        fmt_opt(prf.map(|p| p.recall)),
                        fmt_opt(prf.map(|p| p.f1))
                    );
                }
                let _ = writeln!(s, "|");
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "Queries per category: {}\n", {
            let first = self.systems.first();
            [Category::Broad, Category::Narrow, Category::Sparse, Category::ZeroResult]
                .iter()
                .map(|c| {
                    let n = first.map_or(0, |sys| sys.per_query.iter().filter(|q| q.category == *c).count());
                    format!("{} {n}", c.as_str())
                })
                .collect::<Vec<_>>()
                .join(", ")
        });

        self.per_query_table(&mut s, "Hallucination ratio (FP / (TP + FN))", |q| {
            (q.category != Category::ZeroResult).then(|| fmt_opt(q.hallucination_ratio))
        });
        self.per_query_table(&mut s, "Zero-result queries: false positives", |q| {
            (q.category == Category::ZeroResult).then(|| q.fp_count.to_string())
        });

        let _ = writeln!(s, "## Consistency\n");
        let _ = writeln!(s, "| System | Paraphrase pairs | Paraphrase diffs | Intersection pairs | |C_B∖C_A| | Subtype pairs | |C_C∖C_P| |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for sys in &self.systems {
            let c = &sys.consistency;
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} |",
                sys.system,
                c.paraphrase.len(),
                c.paraphrase_violations(),
                c.intersection.len(),
                c.intersection_violations(),
                c.subtype.len(),
                c.subtype_violations()
            );
        }
        let _ = writeln!(s);
        for sys in &self.systems {
            let c = &sys.consistency;
            let bad_para: Vec<_> = c.paraphrase.iter().filter(|r| r.diff.a_minus_b + r.diff.b_minus_a > 0).collect();
            let bad_cont: Vec<_> = c.intersection.iter().chain(&c.subtype).filter(|r| r.violations > 0).collect();
            if bad_para.is_empty() && bad_cont.is_empty() {
                continue;
            }
            let _ = writeln!(s, "### {} violations\n", sys.system);
            if !bad_para.is_empty() {
                let _ = writeln!(s, "| A | B | |A| | |B| | A∖B | B∖A |");
                let _ = writeln!(s, "|---|---|---|---|---|---|");
                for r in bad_para {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {} ({}% of A) | {} ({}% of B) |",
                        r.query_a,
                        r.query_b,
                        r.size_a,
                        r.size_b,
                        r.diff.a_minus_b,
                        round_pct(r.diff.pct_of_a),
                        r.diff.b_minus_a,
                        round_pct(r.diff.pct_of_b)
                    );
                }
                let _ = writeln!(s);
            }
            if !bad_cont.is_empty() {
                let _ = writeln!(s, "| Outer | Inner | |outer| | |inner| | inner∖outer |");
                let _ = writeln!(s, "|---|---|---|---|---|");
                for r in bad_cont {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {} ({}% of inner) |",
                        r.outer,
                        r.inner,
                        r.outer_size,
                        r.inner_size,
                        r.violations,
                        round_pct(r.pct_of_inner)
                    );
                }
                let _ = writeln!(s);
            }
        }

        let _ = writeln!(s, "## Macro-F1 by expert class\n");
        self.strata_table(&mut s, |sys| &sys.expert_strata);
        let _ = writeln!(s, "## Macro-F1 by document-count tercile\n");
        for b in &self.tercile_bounds {
            let _ = writeln!(
                s,
                "- T{}: {} patients, {}–{} documents",
                b.tercile, b.n_patients, b.min_docs, b.max_docs
            );
        }
        let _ = writeln!(s);
        self.strata_table(&mut s, |sys| &sys.tercile_strata);
        s
    }

    fn per_query_table(&self, s: &mut String, title: &str, cell: impl Fn(&QueryScore) -> Option<String>) {
        let _ = writeln!(s, "## {title}\n");
        let Some(first) = self.systems.first() else {
            return;
        };
        let _ = write!(s, "| Query |");
        for sys in &self.systems {
            let _ = write!(s, " {} |", sys.system);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.systems.len()));
        for (i, q) in first.per_query.iter().enumerate() {
            if cell(q).is_none() {
                continue;
            }
            let _ = write!(s, "| {} |", q.query_id);
            for sys in &self.systems {
                let _ = write!(s, " {} |", sys.per_query.get(i).and_then(&cell).unwrap_or_default());
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s);
    }

    fn strata_table(&self, s: &mut String, rows: impl Fn(&SystemReport) -> &Vec<StratumRow>) {
        let Some(first) = self.systems.first() else {
            return;
        };
        let _ = write!(s, "| Stratum |");
        for sys in &self.systems {
            let _ = write!(s, " {} (n) |", sys.system);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.systems.len()));
        for (i, row) in rows(first).iter().enumerate() {
            let _ = write!(s, "| {} |", row.stratum);
            for sys in &self.systems {
                let r = &rows(sys)[i];
                let _ = write!(s, " {} ({}) |", fmt_opt(r.macro_f1), r.n_queries);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s);
    }

    /// One row per (system, query).
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "system", "query_id", "category", "expert_class", "gold_size", "pred_size", "tp", "fp", "fn", "tn",
            "precision", "recall", "f1", "hallucination_ratio", "fp_count", "oracle_tp", "oracle_fp", "oracle_fn",
        ])?;
        for sys in &self.systems {
            for q in &sys.per_query {
                let o = q.oracle;
                w.write_record([
                    sys.system.clone(),
                    q.query_id.to_string(),
                    q.category.as_str().to_string(),
                    q.expert_class.as_str().to_string(),
                    q.gold_size.to_string(),
                    q.pred_size.to_string(),
                    q.confusion.tp.to_string(),
                    q.confusion.fp.to_string(),
                    q.confusion.fn_.to_string(),
                    q.confusion.tn.to_string(),
                    q.precision.to_string(),
                    q.recall.to_string(),
                    q.f1.to_string(),
                    q.hallucination_ratio.map(|x| x.to_string()).unwrap_or_default(),
                    q.fp_count.to_string(),
                    o.map(|o| o.tp.to_string()).unwrap_or_default(),
                    o.map(|o| o.fp.to_string()).unwrap_or_default(),
                    o.map(|o| o.fn_.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squerl::Relation;

    fn ids(r: std::ops::Range<usize>) -> Vec<PatientId> {
        r.map(|i| PatientId::new(format!("p{i:02}"))).collect()
    }

    #[test]
    fn terciles_split_by_count_then_id() {
        let counts: BTreeMap<PatientId, usize> = ids(0..10).into_iter().map(|p| (p, 5)).collect();
        let t = doc_count_terciles(&counts);
        let sizes: Vec<_> = t.members.iter().map(BTreeSet::len).collect();
        assert_eq!(sizes, [3, 3, 4]);
        assert!(t.members[0].contains(&PatientId::from("p00")));
        assert!(t.members[2].contains(&PatientId::from("p09")));

        let counts: BTreeMap<PatientId, usize> = ids(0..6).into_iter().zip([9, 1, 8, 2, 7, 3]).collect();
        let t = doc_count_terciles(&counts);
        assert_eq!(t.bounds[0].max_docs, 2);
        assert_eq!(t.bounds[2].min_docs, 8);
    }

    fn record(id: &str, class: ExpertClass, rel: Option<(RelationKind, &str)>) -> QueryRecord {
        QueryRecord {
            query_id: id.into(),
            nl_text: String::new(),
            squerl_text: String::new(),
            expert_class: class,
            relations: rel
                .map(|(kind, o)| Relation { kind, other: o.into() })
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn perfect_system_scores_one_and_report_renders() {
        let population: BTreeSet<PatientId> = ids(0..60).into_iter().collect();
        let broad: Cohort = ids(0..55).into_iter().collect();
        let child: Cohort = ids(0..12).into_iter().collect();
        let sparse: Cohort = ids(0..3).into_iter().collect();
        let gold = GoldMatrix {
            gold: [
                ("q1".into(), broad.clone()),
                ("q2".into(), child.clone()),
                ("q3".into(), sparse.clone()),
                ("q4".into(), Cohort::default()),
            ]
            .into_iter()
            .collect(),
            population: population.clone(),
        };
        let bank = vec![
            record("q1", ExpertClass::Base, None),
            record("q2", ExpertClass::Low, Some((RelationKind::ChildOf, "q1"))),
            record("q3", ExpertClass::Low, Some((RelationKind::IntersectionOf, "q1"))),
            record("q4", ExpertClass::Hard, None),
        ];
        let counts: BTreeMap<PatientId, usize> = population.iter().map(|p| (p.clone(), 3)).collect();
        let terciles = doc_count_terciles(&counts);
        let rep = evaluate_system("symbolic", &gold.gold, &gold, &bank, &terciles, Thresholds::default()).unwrap();
        for c in &rep.categories {
            let p = c.cohort_retrieval.unwrap();
            assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0), "{:?}", c.category);
        }
        assert_eq!(rep.consistency.total_violations(), 0);
        assert_eq!(rep.zero_result_fp().map(|x| x.1).sum::<usize>(), 0);
        assert_eq!(rep.expert_strata.len(), 4);
        assert_eq!(rep.expert_strata[2].n_queries, 0);
        assert_eq!(rep.expert_strata[2].macro_f1, None);
        assert_eq!(rep.tercile_strata.len(), 3);

        let report = EvalReport {
            metadata: ReportMetadata {
                tool_version: "test".into(),
                config_hash: "c".into(),
                seed: Some(1),
                alpha: 50,
                beta: 10,
                population_size: 60,
                n_queries: 4,
                bank_hash: "b".into(),
                gold_hash: "g".into(),
            },
            tercile_bounds: terciles.bounds.clone(),
            systems: vec![rep],
        };
        let md = report.to_markdown();
        assert!(md.contains("## Oracle Top-k"));
        assert!(md.contains("| q4 | 0 |"));
        assert!(md.contains("T3"));
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
    }
}
