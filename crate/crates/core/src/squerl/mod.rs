//! SQuerL: set-valued query language over the knowledge base.
//!
//! See `docs/squerl.md` for the grammar and semantics.

mod bank;
mod exec;
mod parse;
mod translate;

pub use bank::{
    expert_class, load_query_bank, parse_bank, save_query_bank, validate_bank, BankError, ExpertClass,
    QueryRecord, Relation, RelationKind,
};
pub use exec::{atom_matches, execute, execute_indices};
pub use parse::{parse, ParseError};
pub use translate::{render_nl, translate_nl, translate_nl_ast, TranslateError};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::ConceptId;
use crate::kb::{Ontology, OntologyError, Polarity};

/// Language version; bumped whenever grammar or keywords change.
pub const LANGUAGE_VERSION: &str = "1.0";

pub const KEYWORDS: [&str; 6] = ["AND", "OR", "EXCEPT", "NOT", "BEFORE", "NEG"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    Eq,
    Ne,
    Ge,
    Le,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Ge => ">=",
            Comparator::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Filter {
    pub attribute: String,
    pub comparator: Comparator,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub concept: ConceptId,
    pub polarity: Polarity,
    pub filters: Vec<Filter>,
}

impl Atom {
    pub fn asserted(concept: impl Into<ConceptId>) -> Self {
        Self {
            concept: concept.into(),
            polarity: Polarity::Asserted,
            filters: Vec::new(),
        }
    }

    pub fn negated(concept: impl Into<ConceptId>) -> Self {
        Self {
            polarity: Polarity::Negated,
            ..Self::asserted(concept)
        }
    }

    pub fn with_filter(mut self, attribute: &str, comparator: Comparator, value: &str) -> Self {
        self.filters.push(Filter {
            attribute: attribute.to_string(),
            comparator,
            value: value.to_string(),
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryAst {
    Atom(Atom),
    And(Box<QueryAst>, Box<QueryAst>),
    Or(Box<QueryAst>, Box<QueryAst>),
    Except(Box<QueryAst>, Box<QueryAst>),
    Not(Box<QueryAst>),
    Before(Atom, Atom),
}

impl From<Atom> for QueryAst {
    fn from(a: Atom) -> Self {
        QueryAst::Atom(a)
    }
}

impl QueryAst {
    pub fn atom(concept: impl Into<ConceptId>) -> Self {
        QueryAst::Atom(Atom::asserted(concept))
    }

    pub fn and(l: impl Into<QueryAst>, r: impl Into<QueryAst>) -> Self {
        QueryAst::And(Box::new(l.into()), Box::new(r.into()))
    }

    pub fn or(l: impl Into<QueryAst>, r: impl Into<QueryAst>) -> Self {
        QueryAst::Or(Box::new(l.into()), Box::new(r.into()))
    }

    pub fn except(l: impl Into<QueryAst>, r: impl Into<QueryAst>) -> Self {
        QueryAst::Except(Box::new(l.into()), Box::new(r.into()))
    }

    pub fn not(x: impl Into<QueryAst>) -> Self {
        QueryAst::Not(Box::new(x.into()))
    }

    /// Every atom in the tree, left to right, including `BEFORE` operands.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            QueryAst::Atom(a) => out.push(a),
            QueryAst::And(l, r) | QueryAst::Or(l, r) | QueryAst::Except(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
            QueryAst::Not(x) => x.collect_atoms(out),
            QueryAst::Before(a, b) => {
                out.push(a);
                out.push(b);
            }
        }
    }

    pub fn concepts(&self) -> BTreeSet<&ConceptId> {
        self.atoms().into_iter().map(|a| &a.concept).collect()
    }

    /// Number of binary and unary operators, `BEFORE` included.
    pub fn operator_count(&self) -> usize {
        match self {
            QueryAst::Atom(_) => 0,
            QueryAst::And(l, r) | QueryAst::Or(l, r) | QueryAst::Except(l, r) => {
                1 + l.operator_count() + r.operator_count()
            }
            QueryAst::Not(x) => 1 + x.operator_count(),
            QueryAst::Before(..) => 1,
        }
    }

    /// No `NOT`, no `EXCEPT` and no `NEG` atoms: adding events can only grow the result.
    pub fn is_monotone(&self) -> bool {
        match self {
            QueryAst::Atom(a) => a.polarity == Polarity::Asserted,
            QueryAst::And(l, r) | QueryAst::Or(l, r) => l.is_monotone() && r.is_monotone(),
            QueryAst::Except(..) | QueryAst::Not(_) => false,
            QueryAst::Before(a, b) => {
                a.polarity == Polarity::Asserted && b.polarity == Polarity::Asserted
            }
        }
    }
}

/// The concept plus all of its ISA-descendants.
pub fn closure<'o>(concept: &ConceptId, ontology: &'o Ontology) -> Result<&'o BTreeSet<ConceptId>, OntologyError> {
    ontology.closure(concept.as_str())
}

fn is_bare_word(s: &str) -> bool {
    !s.is_empty()
        && !KEYWORDS.contains(&s)
        && s.chars().all(|c| !c.is_whitespace() && !"()[],\"=!<>\\".contains(c))
}

fn write_word(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if is_bare_word(s) {
        f.write_str(s)
    } else {
        write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.polarity == Polarity::Negated {
            f.write_str("NEG ")?;
        }
        write_word(f, self.concept.as_str())?;
        if !self.filters.is_empty() {
            f.write_str("[")?;
            for (i, flt) in self.filters.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_word(f, &flt.attribute)?;
                f.write_str(flt.comparator.symbol())?;
                write_word(f, &flt.value)?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

impl QueryAst {
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let (prec, op) = match self {
            QueryAst::Or(..) => (0, "OR"),
            QueryAst::And(..) => (1, "AND"),
            QueryAst::Except(..) => (1, "EXCEPT"),
            QueryAst::Atom(a) => return write!(f, "{a}"),
            QueryAst::Before(a, b) => return write!(f, "BEFORE({a}, {b})"),
            QueryAst::Not(x) => {
                f.write_str("NOT ")?;
                return x.fmt_prec(f, 2);
            }
        };
        let (QueryAst::Or(l, r) | QueryAst::And(l, r) | QueryAst::Except(l, r)) = self else {
            unreachable!()
        };
        if min > prec {
            f.write_str("(")?;
        }
        l.fmt_prec(f, prec)?;
        write!(f, " {op} ")?;
        r.fmt_prec(f, prec + 1)?;
        if min > prec {
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Canonical text: concept ids, minimal parentheses.
impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printer_uses_minimal_parentheses() {
        let q = QueryAst::except(QueryAst::or(QueryAst::atom("a"), QueryAst::atom("b")), QueryAst::atom("c"));
        assert_eq!(q.to_string(), "(a OR b) EXCEPT c");
        let q = QueryAst::and(QueryAst::atom("a"), QueryAst::and(QueryAst::atom("b"), QueryAst::atom("c")));
        assert_eq!(q.to_string(), "a AND (b AND c)");
        let q = QueryAst::not(QueryAst::or(
            Atom::negated("a"),
            Atom::asserted("b").with_filter("stage", Comparator::Ge, "II"),
        ));
        assert_eq!(q.to_string(), "NOT (NEG a OR b[stage>=II])");
    }

    #[test]
    fn monotone_detection() {
        assert!(QueryAst::and(QueryAst::atom("a"), QueryAst::atom("b")).is_monotone());
        assert!(!QueryAst::and(QueryAst::atom("a"), Atom::negated("b")).is_monotone());
        assert!(!QueryAst::not(QueryAst::atom("a")).is_monotone());
    }
}
