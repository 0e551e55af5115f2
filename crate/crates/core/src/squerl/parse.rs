use thiserror::Error;

use crate::kb::{Ontology, Polarity};

use super::{Atom, Comparator, Filter, QueryAst};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: found {found}, expected one of {}", expected.join(", "))]
    Syntax {
        offset: usize,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("unterminated string starting at byte {offset}")]
    UnterminatedString { offset: usize },
    #[error("unknown concept {name:?} at byte {offset}; nearest: {}", suggestions.join(", "))]
    UnknownConcept {
        offset: usize,
        name: String,
        suggestions: Vec<String>,
    },
    #[error("invalid filter at byte {offset}: {message}")]
    Filter { offset: usize, message: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnterminatedString { offset }
            | ParseError::UnknownConcept { offset, .. }
            | ParseError::Filter { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Quoted(String),
    And,
    Or,
    Except,
    Not,
    Before,
    Neg,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Cmp(Comparator),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("{w:?}"),
            Tok::Quoted(w) => format!("\"{w}\""),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::Except => "EXCEPT".into(),
            Tok::Not => "NOT".into(),
            Tok::Before => "BEFORE".into(),
            Tok::Neg => "NEG".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::LBracket => "[".into(),
            Tok::RBracket => "]".into(),
            Tok::Comma => ",".into(),
            Tok::Cmp(c) => c.symbol().into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

const SPECIAL: &str = "()[],\"=!<>";

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        let two = bytes.get(i + 1).copied();
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '=' => Tok::Cmp(Comparator::Eq),
            '!' | '>' | '<' if two == Some(b'=') => {
                i += 1;
                Tok::Cmp(match c {
                    '!' => Comparator::Ne,
                    '>' => Comparator::Ge,
                    _ => Comparator::Le,
                })
            }
            '!' | '>' | '<' => {
                return Err(ParseError::Syntax {
                    offset: start,
                    found: format!("{c:?}"),
                    expected: vec!["!=", ">=", "<="],
                })
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut chars = src[j..].chars();
                loop {
                    match chars.next() {
                        None => return Err(ParseError::UnterminatedString { offset: start }),
                        Some('"') => {
                            j += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = chars
                                .next()
                                .ok_or(ParseError::UnterminatedString { offset: start })?;
                            s.push(esc);
                            j += 1 + esc.len_utf8();
                        }
                        Some(ch) => {
                            s.push(ch);
                            j += ch.len_utf8();
                        }
                    }
                }
                out.push((Tok::Quoted(s), start));
                i = j;
                continue;
            }
            _ => {
                let end = src[i..]
                    .find(|ch: char| ch.is_whitespace() || SPECIAL.contains(ch))
                    .map_or(src.len(), |n| i + n);
                let word = &src[i..end];
                i = end;
                let tok = match word {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "EXCEPT" => Tok::Except,
                    "NOT" => Tok::Not,
                    "BEFORE" => Tok::Before,
                    "NEG" => Tok::Neg,
                    _ => Tok::Word(word.to_string()),
                };
                out.push((tok, start));
                continue;
            }
        };
        i += 1;
        out.push((tok, start));
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ontology: &'a Ontology,
}

const FACTOR_START: [&str; 5] = ["NOT", "BEFORE", "(", "NEG", "concept name"];

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) {
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
    }

    fn error(&self, expected: &[&'static str]) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            found: self.peek().describe(),
            expected: expected.to_vec(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn expr(&mut self) -> Result<QueryAst, ParseError> {
        let mut l = self.term()?;
        while *self.peek() == Tok::Or {
            self.bump();
            l = QueryAst::or(l, self.term()?);
        }
        Ok(l)
    }

    fn term(&mut self) -> Result<QueryAst, ParseError> {
        let mut l = self.factor()?;
        loop {
            match self.peek() {
                Tok::And => {
                    self.bump();
                    l = QueryAst::and(l, self.factor()?);
                }
                Tok::Except => {
                    self.bump();
                    l = QueryAst::except(l, self.factor()?);
                }
                _ => return Ok(l),
            }
        }
    }

    fn factor(&mut self) -> Result<QueryAst, ParseError> {
        match self.peek() {
            Tok::Not => {
                self.bump();
                Ok(QueryAst::not(self.factor()?))
            }
            Tok::Before => {
                self.bump();
                self.expect(Tok::LParen, "(")?;
                let a = self.atom()?;
                self.expect(Tok::Comma, ",")?;
                let b = self.atom()?;
                self.expect(Tok::RParen, ")")?;
                Ok(QueryAst::Before(a, b))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, ")")?;
                Ok(e)
            }
            Tok::Word(_) | Tok::Quoted(_) | Tok::Neg => Ok(QueryAst::Atom(self.atom()?)),
            _ => Err(self.error(&FACTOR_START)),
        }
    }

    /// A quoted string, or the longest run of bare words.
    fn name(&mut self) -> Result<(String, usize), ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.bump();
                Ok((s, offset))
            }
            Tok::Word(w) => {
                self.bump();
                let mut words = vec![w];
                while let Tok::Word(w) = self.peek().clone() {
                    self.bump();
                    words.push(w);
                }
                Ok((words.join(" "), offset))
            }
            _ => Err(self.error(&["concept name"])),
        }
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let polarity = if *self.peek() == Tok::Neg {
            self.bump();
            Polarity::Negated
        } else {
            Polarity::Asserted
        };
        let (name, offset) = self.name()?;
        let concept = self
            .ontology
            .resolve(&name)
            .cloned()
            .ok_or_else(|| ParseError::UnknownConcept {
                offset,
                suggestions: self.ontology.nearest_names(&name, 3),
                name,
            })?;
        let mut filters = Vec::new();
        if polarity == Polarity::Asserted && *self.peek() == Tok::LBracket {
            self.bump();
            loop {
                filters.push(self.filter()?);
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RBracket => {
                        self.bump();
                        break;
                    }
                    _ => return Err(self.error(&[",", "]"])),
                }
            }
        }
        Ok(Atom {
            concept,
            polarity,
            filters,
        })
    }

    fn word(&mut self, expected: &[&'static str]) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Word(w) | Tok::Quoted(w) => {
                self.bump();
                Ok(w)
            }
            _ => Err(self.error(expected)),
        }
    }

    fn filter(&mut self) -> Result<Filter, ParseError> {
        let offset = self.offset();
        let attribute = self.word(&["attribute name"])?.to_lowercase();
        let comparator = match *self.peek() {
            Tok::Cmp(c) => {
                self.bump();
                c
            }
            _ => return Err(self.error(&["=", "!=", ">=", "<="])),
        };
        let raw = self.word(&["value"])?;
        let value = if self.ontology.is_ordinal_attribute(&attribute) {
            self.ontology
                .canonical_ordinal(&attribute, &raw)
                .ok_or_else(|| ParseError::Filter {
                    offset,
                    message: format!("{raw:?} is not a value of ordinal {attribute:?}"),
                })?
                .to_string()
        } else if matches!(comparator, Comparator::Ge | Comparator::Le) {
            return Err(ParseError::Filter {
                offset,
                message: format!("{attribute:?} is not ordinal; only = and != apply"),
            });
        } else {
            raw.to_lowercase()
        };
        Ok(Filter {
            attribute,
            comparator,
            value,
        })
    }
}

/// Parses and resolves a query against the ontology.
pub fn parse(text: &str, ontology: &Ontology) -> Result<QueryAst, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        ontology,
    };
    let ast = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error(&["AND", "OR", "EXCEPT", "end of input"]));
    }
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::kb::ontology::tests::concept;
    use crate::kb::ontology::{AttributeType, OntologyFile};

    fn onto() -> Ontology {
        let mut bc = concept("breast_cancer", &["breast cancer"], &[]);
        bc.attributes_schema.insert("stage".into(), AttributeType::Ordinal);
        let mut ordinals = BTreeMap::new();
        ordinals.insert("stage".into(), vec!["I".into(), "II".into(), "III".into(), "IV".into()]);
        Ontology::new(OntologyFile {
            version: 1,
            concepts: vec![
                bc,
                concept("lung_cancer", &["lung cancer"], &[]),
                concept("pik3ca_mutation", &["PIK3CA mutation"], &[]),
                concept("tamoxifen", &["tamoxifen", "Nolvadex"], &[]),
                concept("pregnancy", &["pregnancy"], &[]),
            ],
            constraints: vec![],
            ordinals,
        })
        .unwrap()
    }

    #[test]
    fn and_of_atoms() {
        let o = onto();
        let q = parse("breast_cancer AND pik3ca_mutation", &o).unwrap();
        assert_eq!(q, QueryAst::and(QueryAst::atom("breast_cancer"), QueryAst::atom("pik3ca_mutation")));
    }

    #[test]
    fn parenthesized_or_except() {
        let o = onto();
        let q = parse("(lung_cancer OR breast_cancer) EXCEPT tamoxifen", &o).unwrap();
        assert_eq!(
            q,
            QueryAst::except(
                QueryAst::or(QueryAst::atom("lung_cancer"), QueryAst::atom("breast_cancer")),
                QueryAst::atom("tamoxifen")
            )
        );
    }

    #[test]
    fn leading_operator_is_error_at_zero() {
        let o = onto();
        let e = parse("AND breast_cancer", &o).unwrap_err();
        assert_eq!(e.offset(), 0);
        assert!(matches!(e, ParseError::Syntax { ref expected, .. } if expected.contains(&"NOT")));
    }

    #[test]
    fn multiword_and_synonym_names() {
        let o = onto();
        let q = parse("breast cancer AND Nolvadex", &o).unwrap();
        assert_eq!(q, parse("breast_cancer AND tamoxifen", &o).unwrap());
        let q = parse("\"PIK3CA mutation\" OR NEG tamoxifen", &o).unwrap();
        assert_eq!(q, QueryAst::or(QueryAst::atom("pik3ca_mutation"), Atom::negated("tamoxifen")));
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let o = onto();
        let q = parse("lung_cancer OR breast_cancer AND tamoxifen", &o).unwrap();
        assert_eq!(
            q,
            QueryAst::or(
                QueryAst::atom("lung_cancer"),
                QueryAst::and(QueryAst::atom("breast_cancer"), QueryAst::atom("tamoxifen"))
            )
        );
    }

    #[test]
    fn filters_and_before() {
        let o = onto();
        let q = parse("breast_cancer[stage>=ii] AND BEFORE(breast_cancer, pregnancy)", &o).unwrap();
        let QueryAst::And(l, r) = q else { panic!() };
        assert_eq!(*l, QueryAst::Atom(Atom::asserted("breast_cancer").with_filter("stage", Comparator::Ge, "II")));
        assert_eq!(*r, QueryAst::Before(Atom::asserted("breast_cancer"), Atom::asserted("pregnancy")));
        assert!(matches!(parse("breast_cancer[stage>=V]", &o), Err(ParseError::Filter { .. })));
    }

    #[test]
    fn unknown_name_suggests() {
        let o = onto();
        match parse("tamoxifn", &o) {
            Err(ParseError::UnknownConcept { suggestions, offset, .. }) => {
                assert_eq!(offset, 0);
                assert_eq!(suggestions[0], "tamoxifen");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_and_unclosed() {
        let o = onto();
        assert_eq!(parse("tamoxifen )", &o).unwrap_err().offset(), 10);
        assert_eq!(parse("(tamoxifen", &o).unwrap_err().offset(), 10);
        assert!(matches!(parse("\"tamox", &o), Err(ParseError::UnterminatedString { offset: 0 })));
    }
}
