//! Template translation between query-bank natural language and SQuerL.
//!
//! An NL query is a head phrase followed by zero or more refinement suffixes,
//! e.g. `patients receiving systemic therapy, specifically targeted therapy`.
//! Refinements apply left to right.

use thiserror::Error;

use crate::ids::ConceptId;
use crate::kb::ontology::ConceptCategory;
use crate::kb::{Ontology, Polarity};

use super::{Atom, Comparator, QueryAst};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslateError {
    #[error("no query template matches {0:?}; write the SQuerL text by hand or use an LLM translator")]
    Untranslatable(String),
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Lit(&'static str),
    Concept,
    Word,
}

use Piece::{Concept as C, Lit as L, Word as W};

enum Head {
    Either,
    Before,
    Neg,
    Without,
    Filter(Comparator),
    Plain,
}

const HEADS: &[(&[Piece], Head)] = &[
    (&[L("patients with either "), C, L(" or "), C], Head::Either),
    (&[L("patients with "), C, L(" before "), C], Head::Before),
    (&[L("patients who tested negative for "), C], Head::Neg),
    (&[L("patients without any record of "), C], Head::Without),
    (&[L("patients with "), C, L(" "), W, L(" "), W, L(" or higher")], Head::Filter(Comparator::Ge)),
    (&[L("patients with "), C, L(" "), W, L(" "), W, L(" or lower")], Head::Filter(Comparator::Le)),
    (&[L("patients with "), C, L(" "), W, L(" "), W], Head::Filter(Comparator::Eq)),
    (&[L("patients with "), C], Head::Plain),
    (&[L("patients treated with "), C], Head::Plain),
    (&[L("patients receiving "), C], Head::Plain),
    (&[L("patients who underwent "), C], Head::Plain),
    (&[L("patients diagnosed with "), C], Head::Plain),
];

#[derive(Clone, Copy)]
enum Refine {
    And,
    AndNeg,
    Except,
}

const SUFFIXES: &[(&str, Refine)] = &[
    (", who also had ", Refine::And),
    (", specifically ", Refine::And),
    (", who tested negative for ", Refine::AndNeg),
    (", excluding those with ", Refine::Except),
];

fn match_pieces<'t>(
    text: &'t str,
    pieces: &[Piece],
    caps: &mut Vec<&'t str>,
    accept: &mut dyn FnMut(&[&'t str]) -> Option<QueryAst>,
) -> Option<QueryAst> {
    let Some((first, rest)) = pieces.split_first() else {
        return if text.is_empty() { accept(caps) } else { None };
    };
    match first {
        Piece::Lit(l) => match_pieces(text.strip_prefix(l)?, rest, caps, accept),
        Piece::Concept | Piece::Word => {
            let word_only = matches!(first, Piece::Word);
            let ends: Vec<usize> = match rest.first() {
                Some(Piece::Lit(l)) => text.match_indices(l).map(|(i, _)| i).collect(),
                _ => vec![text.len()],
            };
            for end in ends {
                let cap = &text[..end];
                if cap.is_empty() || (word_only && cap.contains(' ')) {
                    continue;
                }
                caps.push(cap);
                let found = match_pieces(&text[end..], rest, caps, accept);
                caps.pop();
                if found.is_some() {
                    return found;
                }
            }
            None
        }
    }
}

fn head_ast(head: &Head, caps: &[&str], ontology: &Ontology) -> Option<QueryAst> {
    let concept = |s: &str| ontology.resolve(s).cloned();
    Some(match head {
        Head::Either => QueryAst::or(QueryAst::atom(concept(caps[0])?), QueryAst::atom(concept(caps[1])?)),
        Head::Before => QueryAst::Before(Atom::asserted(concept(caps[0])?), Atom::asserted(concept(caps[1])?)),
        Head::Neg => QueryAst::Atom(Atom::negated(concept(caps[0])?)),
        Head::Without => QueryAst::not(QueryAst::atom(concept(caps[0])?)),
        Head::Plain => QueryAst::atom(concept(caps[0])?),
        Head::Filter(cmp) => {
            let c = concept(caps[0])?;
            let attr = caps[1];
            if !known_attribute(&c, attr, ontology) {
                return None;
            }
            let value = if ontology.is_ordinal_attribute(attr) {
                ontology.canonical_ordinal(attr, caps[2])?.to_string()
            } else if *cmp == Comparator::Eq {
                caps[2].to_string()
            } else {
                return None;
            };
            QueryAst::Atom(Atom::asserted(c).with_filter(attr, *cmp, &value))
        }
    })
}

fn translate_head(text: &str, ontology: &Ontology) -> Option<QueryAst> {
    HEADS.iter().find_map(|(pieces, head)| {
        match_pieces(text, pieces, &mut Vec::new(), &mut |caps| head_ast(head, caps, ontology))
    })
}

/// Splits off refinement suffixes; returns the head and the suffixes in order.
fn split_suffixes(text: &str) -> (&str, Vec<(Refine, &str)>) {
    let mut cuts: Vec<(usize, usize, Refine)> = SUFFIXES
        .iter()
        .flat_map(|(marker, kind)| {
            text.match_indices(marker)
                .map(move |(i, m)| (i, i + m.len(), *kind))
        })
        .collect();
    cuts.sort_by_key(|c| c.0);
    let Some(&(first, _, _)) = cuts.first() else {
        return (text, Vec::new());
    };
    let mut parts = Vec::new();
    for (n, &(_, body_start, kind)) in cuts.iter().enumerate() {
        let body_end = cuts.get(n + 1).map_or(text.len(), |c| c.0);
        parts.push((kind, &text[body_start..body_end.max(body_start)]));
    }
    (&text[..first], parts)
}

fn normalize(nl: &str) -> String {
    let s = nl
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let s = s.trim_end_matches(['.', '?', '!']).trim();
    s.strip_prefix("find me ").unwrap_or(s).to_string()
}

/// Parses NL text produced by [`render_nl`] into an AST.
pub fn translate_nl_ast(nl: &str, ontology: &Ontology) -> Result<QueryAst, TranslateError> {
    let fail = || TranslateError::Untranslatable(nl.to_string());
    let text = normalize(nl);
    let (head, suffixes) = split_suffixes(&text);
    let mut ast = translate_head(head, ontology).ok_or_else(fail)?;
    for (kind, body) in suffixes {
        let c = ontology.resolve(body).cloned().ok_or_else(fail)?;
        ast = match kind {
            Refine::And => QueryAst::and(ast, QueryAst::atom(c)),
            Refine::AndNeg => QueryAst::and(ast, Atom::negated(c)),
            Refine::Except => QueryAst::except(ast, QueryAst::atom(c)),
        };
    }
    Ok(ast)
}

/// Deterministic NL → SQuerL text. Unknown phrasing is an error, never a guess.
pub fn translate_nl(nl: &str, ontology: &Ontology) -> Result<String, TranslateError> {
    translate_nl_ast(nl, ontology).map(|a| a.to_string())
}

fn verb(c: &ConceptId, ontology: &Ontology) -> &'static str {
    match ontology.concept(c).map(|d| d.category) {
        Some(ConceptCategory::Therapy) => "patients treated with ",
        Some(ConceptCategory::Procedure) => "patients who underwent ",
        _ => "patients with ",
    }
}

/// Declared on the concept or an ordinal anywhere in the ontology.
fn known_attribute(c: &ConceptId, attr: &str, ontology: &Ontology) -> bool {
    ontology.attribute_type(c, attr).is_some() || ontology.is_ordinal_attribute(attr)
}

fn plain(a: &Atom) -> bool {
    a.polarity == Polarity::Asserted && a.filters.is_empty()
}

fn render_head(ast: &QueryAst, ontology: &Ontology, surface: &dyn Fn(&ConceptId) -> String) -> Option<String> {
    Some(match ast {
        QueryAst::Atom(a) if plain(a) => format!("{}{}", verb(&a.concept, ontology), surface(&a.concept)),
        QueryAst::Atom(a) if a.polarity == Polarity::Negated => {
            format!("patients who tested negative for {}", surface(&a.concept))
        }
        QueryAst::Atom(a) if a.filters.len() == 1 => {
            let f = &a.filters[0];
            let tail = match f.comparator {
                Comparator::Ge => " or higher",
                Comparator::Le => " or lower",
                Comparator::Eq => "",
                Comparator::Ne => return None,
            };
            if f.value.contains(' ') || f.attribute.contains(' ') || !known_attribute(&a.concept, &f.attribute, ontology) {
                return None;
            }
            format!("patients with {} {} {}{tail}", surface(&a.concept), f.attribute, f.value)
        }
        QueryAst::Or(l, r) => match (&**l, &**r) {
            (QueryAst::Atom(a), QueryAst::Atom(b)) if plain(a) && plain(b) => {
                format!("patients with either {} or {}", surface(&a.concept), surface(&b.concept))
            }
            _ => return None,
        },
        QueryAst::Before(a, b) if plain(a) && plain(b) => {
            format!("patients with {} before {}", surface(&a.concept), surface(&b.concept))
        }
        QueryAst::Not(x) => match &**x {
            QueryAst::Atom(a) if plain(a) => format!("patients without any record of {}", surface(&a.concept)),
            _ => return None,
        },
        _ => return None,
    })
}

fn last_concept(ast: &QueryAst) -> Option<&ConceptId> {
    match ast {
        QueryAst::Atom(a) => Some(&a.concept),
        QueryAst::And(_, r) => last_concept(r),
        _ => None,
    }
}

/// Renders an AST in the NL template language, choosing surface forms via
/// `surface`. `None` when the shape has no template.
pub fn render_nl(
    ast: &QueryAst,
    ontology: &Ontology,
    surface: &dyn Fn(&ConceptId) -> String,
) -> Option<String> {
    let suffix = |l: &QueryAst, marker: &str, c: &ConceptId| -> Option<String> {
        Some(format!("{}{marker}{}", render_nl(l, ontology, surface)?, surface(c)))
    };
    match ast {
        QueryAst::And(l, r) => match &**r {
            QueryAst::Atom(b) if plain(b) => {
                let refines = last_concept(l).is_some_and(|p| p != &b.concept && ontology.is_a(&b.concept, p));
                let marker = if refines { ", specifically " } else { ", who also had " };
                suffix(l, marker, &b.concept)
            }
            QueryAst::Atom(b) if b.polarity == Polarity::Negated && b.filters.is_empty() => {
                suffix(l, ", who tested negative for ", &b.concept)
            }
            _ => None,
        },
        QueryAst::Except(l, r) => match &**r {
            QueryAst::Atom(b) if plain(b) => suffix(l, ", excluding those with ", &b.concept),
            _ => None,
        },
        _ => render_head(ast, ontology, surface),
    }
}
