use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::ids::PatientId;
use crate::num::{ratio_or_zero, Scalar};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Broad,
    Narrow,
    Sparse,
    ZeroResult,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Broad, Category::Narrow, Category::Sparse, Category::ZeroResult];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Broad => "Broad",
            Category::Narrow => "Narrow",
            Category::Sparse => "Sparse",
            Category::ZeroResult => "ZeroResult",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: usize,
    pub beta: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { alpha: 50, beta: 10 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.beta >= 1 && self.beta < self.alpha {
            Ok(())
        } else {
            Err(EvalError::InvalidThresholds {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }
}

/// Gold-cohort-size category.
pub fn categorize(n: usize, alpha: usize, beta: usize) -> Result<Category, EvalError> {
    Thresholds { alpha, beta }.validate()?;
    Ok(if n >= alpha {
        Category::Broad
    } else if n >= beta {
        Category::Narrow
    } else if n >= 1 {
        Category::Sparse
    } else {
        Category::ZeroResult
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn precision<S: Scalar>(&self) -> S {
        ratio_or_zero(self.tp, self.tp + self.fp)
    }

    pub fn recall<S: Scalar>(&self) -> S {
        ratio_or_zero(self.tp, self.tp + self.fn_)
    }

    pub fn f1<S: Scalar>(&self) -> S {
        f1_of(self.precision(), self.recall())
    }

    pub fn fpr<S: Scalar>(&self) -> S {
        ratio_or_zero(self.fp, self.fp + self.tn)
    }

    pub fn prf<S: Scalar>(&self) -> PrfScores<S> {
        PrfScores {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn f1_of<S: Scalar>(p: S, r: S) -> S {
    if p + r == S::zero() {
        S::zero()
    } else {
        S::from_count(2) * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScores<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
}

/// Set-theoretic counts of `pred` against `gold` within `population`.
pub fn confusion(pred: &Cohort, gold: &Cohort, population: &BTreeSet<PatientId>) -> Result<Confusion, EvalError> {
    if let Some(p) = pred
        .members()
        .iter()
        .chain(gold.members())
        .find(|p| !population.contains(*p))
    {
        return Err(EvalError::NotInPopulation(p.clone()));
    }
    Ok(confusion_of_sets(pred.members(), gold.members(), population.len()))
}

pub(crate) fn confusion_of_sets(pred: &BTreeSet<PatientId>, gold: &BTreeSet<PatientId>, population: usize) -> Confusion {
    let tp = pred.intersection(gold).count() as u64;
    let fp = pred.len() as u64 - tp;
    let fn_ = gold.len() as u64 - tp;
    Confusion {
        tp,
        fp,
        fn_,
        tn: population as u64 - tp - fp - fn_,
    }
}

/// Unweighted mean of per-query precision, recall and F1.
pub fn macro_prf<S: Scalar>(confusions: &[Confusion]) -> Result<PrfScores<S>, EvalError> {
    if confusions.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let n = S::from_count(confusions.len() as u64);
    let mut sum = PrfScores {
        precision: S::zero(),
        recall: S::zero(),
        f1: S::zero(),
    };
    for c in confusions {
        let s = c.prf::<S>();
        sum.precision = sum.precision + s.precision;
        sum.recall = sum.recall + s.recall;
        sum.f1 = sum.f1 + s.f1;
    }
    Ok(PrfScores {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    })
}

/// Precision, recall and F1 of the summed counts.
pub fn micro_prf<S: Scalar>(confusions: &[Confusion]) -> Result<PrfScores<S>, EvalError> {
    if confusions.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let total = confusions.iter().fold(Confusion::default(), |a, &b| a + b);
    Ok(total.prf())
}

/// FP / (TP + FN). Undefined for empty gold; use [`fp_count`] there.
pub fn hallucination_ratio<S: Scalar>(c: &Confusion) -> Result<S, EvalError> {
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::HallucinationUndefined);
    }
    Ok(S::from_count(c.fp) / S::from_count(c.tp + c.fn_))
}

pub fn fp_count(pred: &Cohort, gold: &Cohort) -> usize {
    pred.members().difference(gold.members()).count()
}

/// Truncates the ranked prediction to `|gold|` and scores that.
pub fn oracle_topk(pred: &Cohort, gold: &Cohort, population: &BTreeSet<PatientId>) -> Result<Confusion, EvalError> {
    let ranking = pred.ranking().ok_or(EvalError::MissingRanking)?;
    let top: Cohort = ranking.iter().take(gold.len()).map(|(p, _)| p.clone()).collect();
    confusion(&top, gold, population)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseDiff {
    pub a_minus_b: usize,
    pub b_minus_a: usize,
    /// `|A∖B| / |A|` in percent; 0 for an empty cohort.
    pub pct_of_a: f64,
    pub pct_of_b: f64,
}

fn pct(n: usize, of: usize) -> f64 {
    if of == 0 {
        0.0
    } else {
        100.0 * n as f64 / of as f64
    }
}

/// Display rounding: half away from zero, integer percent.
pub fn round_pct(p: f64) -> i64 {
    p.round() as i64
}

pub fn paraphrase_check(a: &Cohort, b: &Cohort) -> ParaphraseDiff {
    let a_minus_b = a.members().difference(b.members()).count();
    let b_minus_a = b.members().difference(a.members()).count();
    ParaphraseDiff {
        a_minus_b,
        b_minus_a,
        pct_of_a: pct(a_minus_b, a.len()),
        pct_of_b: pct(b_minus_a, b.len()),
    }
}

/// `|C_B ∖ C_A|`: complex-query patients missing from the base cohort.
pub fn intersection_check(base: &Cohort, complex: &Cohort) -> usize {
    complex.members().difference(base.members()).count()
}

/// `|C_C ∖ C_P|`: child-query patients missing from the parent cohort.
pub fn subtype_check(parent: &Cohort, child: &Cohort) -> usize {
    child.members().difference(parent.members()).count()
}

/// Violations relative to the size of the cohort that should be contained.
pub fn violation_pct(violations: usize, contained: &Cohort) -> f64 {
    pct(violations, contained.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ids: &[&str]) -> Cohort {
        ids.iter().map(|&s| PatientId::from(s)).collect()
    }

    fn pop(n: usize) -> BTreeSet<PatientId> {
        (1..=n).map(|i| PatientId::new(format!("p{i}"))).collect()
    }

    #[test]
    fn categories_at_boundaries() {
        let cat = |n| categorize(n, 50, 10).unwrap();
        assert_eq!(cat(50), Category::Broad);
        assert_eq!(cat(49), Category::Narrow);
        assert_eq!(cat(10), Category::Narrow);
        assert_eq!(cat(9), Category::Sparse);
        assert_eq!(cat(1), Category::Sparse);
        assert_eq!(cat(0), Category::ZeroResult);
        assert!(categorize(3, 10, 10).is_err());
        assert!(categorize(3, 10, 0).is_err());
    }

    #[test]
    fn confusion_examples() {
        let k = confusion(&c(&["p1", "p3", "p4"]), &c(&["p1", "p2"]), &pop(10)).unwrap();
        assert_eq!(k, Confusion { tp: 1, fp: 2, fn_: 1, tn: 6 });
        let k = confusion(&c(&[]), &c(&[]), &pop(10)).unwrap();
        assert_eq!(k, Confusion { tp: 0, fp: 0, fn_: 0, tn: 10 });
        assert!(matches!(confusion(&c(&["zz"]), &c(&[]), &pop(3)), Err(EvalError::NotInPopulation(_))));
    }

    #[test]
    fn macro_and_micro_hand_example() {
        let qs = [
            Confusion { tp: 1, fp: 0, fn_: 1, tn: 0 },
            Confusion { tp: 0, fp: 1, fn_: 1, tn: 0 },
        ];
        let m: PrfScores<f64> = macro_prf(&qs).unwrap();
        let u: PrfScores<f64> = micro_prf(&qs).unwrap();
        assert!((m.precision - 0.5).abs() < 1e-15);
        assert!((u.precision - 0.5).abs() < 1e-15);
        assert!((m.recall - 0.25).abs() < 1e-15);
        assert!((u.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((u.f1 - 0.4).abs() < 1e-15);
        assert!(macro_prf::<f64>(&[]).is_err());
    }

    #[test]
    fn single_query_two_thirds() {
        let k = confusion(&c(&["p1", "p2", "p3"]), &c(&["p2", "p3", "p4"]), &pop(5)).unwrap();
        let m: PrfScores<f32> = macro_prf(&[k]).unwrap();
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn hallucination_ratio_cases() {
        let k = Confusion { tp: 0, fp: 2, fn_: 2, tn: 0 };
        assert_eq!(hallucination_ratio::<f64>(&k).unwrap(), 1.0);
        let k = Confusion { tp: 3, fp: 0, fn_: 0, tn: 0 };
        assert_eq!(hallucination_ratio::<f64>(&k).unwrap(), 0.0);
        let k = Confusion { tp: 0, fp: 4, fn_: 0, tn: 0 };
        assert!(matches!(hallucination_ratio::<f64>(&k), Err(EvalError::HallucinationUndefined)));
        assert_eq!(fp_count(&c(&["a", "b"]), &c(&[])), 2);
    }

    #[test]
    fn oracle_truncates_to_gold_size() {
        let pred = Cohort::ranked(vec![("p1".into(), 3.0), ("p2".into(), 2.0), ("p3".into(), 1.0)]).unwrap();
        let k = oracle_topk(&pred, &c(&["p2", "p3"]), &pop(5)).unwrap();
        assert_eq!((k.tp, k.fp, k.fn_), (1, 1, 1));
        let k = oracle_topk(&pred, &c(&[]), &pop(5)).unwrap();
        assert_eq!(k.fp, 0);
        assert!(matches!(oracle_topk(&c(&["p1"]), &c(&[]), &pop(5)), Err(EvalError::MissingRanking)));
    }

    #[test]
    fn paraphrase_percentages() {
        let a: Cohort = (0..12).map(|i| PatientId::new(format!("a{i}"))).collect();
        let mut b_ids: Vec<PatientId> = (0..10).map(|i| PatientId::new(format!("a{i}"))).collect();
        b_ids.extend((0..3).map(|i| PatientId::new(format!("b{i}"))));
        let b: Cohort = b_ids.into_iter().collect();
        let d = paraphrase_check(&a, &b);
        assert_eq!((d.a_minus_b, d.b_minus_a), (2, 3));
        assert_eq!((round_pct(d.pct_of_a), round_pct(d.pct_of_b)), (17, 23));
        let d = paraphrase_check(&c(&["x"]), &c(&["y"]));
        assert_eq!((d.pct_of_a, d.pct_of_b), (100.0, 100.0));
        let d = paraphrase_check(&c(&[]), &c(&[]));
        assert_eq!((d.a_minus_b, d.pct_of_a), (0, 0.0));
    }

    #[test]
    fn containment_percentages() {
        assert_eq!(round_pct(violation_pct(22, &(0..547).map(|i| PatientId::new(i.to_string())).collect())), 4);
        assert_eq!(round_pct(violation_pct(36, &(0..181).map(|i| PatientId::new(i.to_string())).collect())), 20);
        assert_eq!(round_pct(2.5), 3);
        assert_eq!(intersection_check(&c(&["a", "b"]), &c(&["b", "c"])), 1);
        assert_eq!(subtype_check(&c(&["a", "b"]), &c(&["a"])), 0);
    }
}
