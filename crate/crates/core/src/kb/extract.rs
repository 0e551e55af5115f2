use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::ids::{ConceptId, DocId};

use super::ontology::{normalize_name, AttributeType, Ontology};
use super::{Attributes, Fact, Polarity, Provenance};

const DATE_TAG: &str = "@date{";
const SINGLE_CUES: [&str; 3] = ["no", "denies", "without"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub base_confidence: f64,
    /// Per-concept confidence replacing the base value.
    pub confidence_overrides: BTreeMap<ConceptId, f64>,
    /// How many tokens before a mention a negation cue may appear.
    pub negation_window: usize,
    /// How many tokens after a mention are scanned for attributes.
    pub attribute_window: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            base_confidence: 0.8,
            confidence_overrides: BTreeMap::new(),
            negation_window: 4,
            attribute_window: 4,
        }
    }
}

/// Document-level text-to-facts step. Implementations must be deterministic.
pub trait FactExtractor: Sync {
    fn extract_text(&self, text: &str, doc_id: &DocId, authored_at: NaiveDate) -> Vec<Fact>;

    fn extract(&self, doc: &Document) -> Vec<Fact> {
        self.extract_text(&doc.text, &doc.doc_id, doc.authored_at)
    }
}

#[derive(Debug)]
struct Token<'a> {
    raw: &'a str,
    core: &'a str,
    core_start: usize,
    core_end: usize,
    core_lower: String,
    ends_sentence: bool,
}

fn tokens_with_offsets(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let base = text.as_ptr() as usize;
    for raw in text.split_whitespace() {
        let start = raw.as_ptr() as usize - base;
        let lead = raw.len() - raw.trim_start_matches(['"', '\'', '(', '[', '{']).len();
        let trimmed_end = raw.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', ']', '}', '"', '\'']);
        let core_end = start + trimmed_end.len().max(lead);
        let tail = &raw[trimmed_end.len().max(lead)..];
        out.push(Token {
            raw,
            core: &text[start + lead..core_end],
            core_start: start + lead,
            core_end,
            core_lower: text[start + lead..core_end].to_lowercase(),
            ends_sentence: tail.contains(['.', ';', '!', '?']),
        });
    }
    out
}

fn parse_date_tag(raw: &str) -> Option<NaiveDate> {
    let rest = raw.strip_prefix(DATE_TAG)?;
    let date = rest.get(..10)?;
    if rest.as_bytes().get(10) != Some(&b'}') {
        return None;
    }
    NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()
}

/// Rule-based extractor: longest-match surface forms, negation cues,
/// adjacent attributes, and `@date{YYYY-MM-DD}` event-date tags.
pub struct RuleExtractor<'o> {
    ontology: &'o Ontology,
    config: ExtractorConfig,
    /// first word -> candidate word sequences, longest first
    forms: HashMap<String, Vec<(Vec<String>, ConceptId)>>,
}

impl<'o> RuleExtractor<'o> {
    pub fn new(ontology: &'o Ontology, config: ExtractorConfig) -> Self {
        let mut forms: HashMap<String, Vec<(Vec<String>, ConceptId)>> = HashMap::new();
        for concept in ontology.concepts() {
            for form in &concept.surface_forms {
                let words: Vec<String> = normalize_name(form)
                    .split(' ')
                    .map(str::to_string)
                    .collect();
                if words[0].is_empty() {
                    continue;
                }
                forms
                    .entry(words[0].clone())
                    .or_default()
                    .push((words, concept.id.clone()));
            }
        }
        for list in forms.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
            list.dedup();
        }
        Self {
            ontology,
            config,
            forms,
        }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    fn match_at(&self, tokens: &[Token<'_>], i: usize) -> Option<(usize, &ConceptId)> {
        let candidates = self.forms.get(&tokens[i].core_lower)?;
        'outer: for (words, concept) in candidates {
            if i + words.len() > tokens.len() {
                continue;
            }
            for (k, w) in words.iter().enumerate() {
                let t = &tokens[i + k];
                if &t.core_lower != w || (k + 1 < words.len() && t.ends_sentence) {
                    continue 'outer;
                }
            }
            return Some((words.len(), concept));
        }
        None
    }

    fn negated(&self, tokens: &[Token<'_>], i: usize) -> bool {
        let lo = i.saturating_sub(self.config.negation_window);
        let from = tokens[lo..i]
            .iter()
            .rposition(|t| t.ends_sentence)
            .map_or(lo, |p| lo + p + 1);
        (from..i).any(|j| {
            let w = tokens[j].core_lower.as_str();
            SINGLE_CUES.contains(&w)
                || (w == "negative" && j + 1 < i && tokens[j + 1].core_lower == "for")
        })
    }

    fn attributes(&self, concept: &ConceptId, tokens: &[Token<'_>], mut k: usize) -> Attributes {
        let mut attrs = Attributes::new();
        let schema = match self.ontology.concept(concept) {
            Some(c) if !c.attributes_schema.is_empty() => &c.attributes_schema,
            _ => return attrs,
        };
        let stop = (k + self.config.attribute_window).min(tokens.len());
        while k < stop {
            let t = &tokens[k];
            if let Some(ty) = schema.get(&t.core_lower) {
                if !t.ends_sentence && k + 1 < tokens.len() {
                    let value = tokens[k + 1].core;
                    let stored = match ty {
                        AttributeType::Ordinal => self
                            .ontology
                            .canonical_ordinal(&t.core_lower, value)
                            .map(str::to_string),
                        AttributeType::String => Some(value.to_lowercase()),
                    };
                    if let Some(v) = stored {
                        attrs.entry(t.core_lower.clone()).or_insert(v);
                    }
                    if tokens[k + 1].ends_sentence {
                        break;
                    }
                    k += 2;
                    continue;
                }
            }
            if t.ends_sentence {
                break;
            }
            k += 1;
        }
        attrs
    }
}

impl FactExtractor for RuleExtractor<'_> {
    fn extract_text(&self, text: &str, doc_id: &DocId, authored_at: NaiveDate) -> Vec<Fact> {
        let tokens = tokens_with_offsets(text);
        let mut facts = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let Some((len, concept)) = self.match_at(&tokens, i) else {
                i += 1;
                continue;
            };
            let last = i + len - 1;
            let mut next = last + 1;
            let mut event_date = None;
            if !tokens[last].ends_sentence && next < tokens.len() {
                if let Some(d) = parse_date_tag(tokens[next].raw) {
                    event_date = Some(d);
                    next += 1;
                }
            }
            let sentence_closed = tokens[last].ends_sentence
                || (event_date.is_some() && tokens[next - 1].ends_sentence);
            let attributes = if sentence_closed {
                Attributes::new()
            } else {
                self.attributes(concept, &tokens, next)
            };
            let polarity = if self.negated(&tokens, i) {
                Polarity::Negated
            } else {
                Polarity::Asserted
            };
            let confidence = self
                .config
                .confidence_overrides
                .get(concept)
                .copied()
                .unwrap_or(self.config.base_confidence);
            facts.push(Fact {
                concept: concept.clone(),
                polarity,
                attributes,
                event_date: Some(event_date.unwrap_or(authored_at)),
                confidence,
                provenance: Provenance {
                    doc_id: doc_id.clone(),
                    authored_at,
                    start: tokens[i].core_start,
                    end: tokens[last].core_end,
                },
            });
            i += len;
        }
        facts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::ontology::{ConceptCategory, ConceptDef, OntologyFile};

    fn ontology() -> Ontology {
        let c = |id: &str, forms: &[&str], parents: &[&str]| ConceptDef {
            id: id.into(),
            surface_forms: forms.iter().map(|s| s.to_string()).collect(),
            parents: parents.iter().map(|&s| s.into()).collect(),
            attributes_schema: BTreeMap::new(),
            category: ConceptCategory::Other,
            removes: vec![],
        };
        let mut bc = c("breast_cancer", &["breast cancer", "malignant breast neoplasm"], &["cancer"]);
        bc.attributes_schema.insert("stage".into(), AttributeType::Ordinal);
        let mut ordinals = BTreeMap::new();
        ordinals.insert(
            "stage".into(),
            ["0", "I", "II", "IIA", "IIB", "III", "IV"].iter().map(|s| s.to_string()).collect(),
        );
        Ontology::new(OntologyFile {
            version: 1,
            concepts: vec![
                c("cancer", &["cancer"], &[]),
                bc,
                c("brca1_mutation", &["BRCA1 mutation"], &[]),
                c("osimertinib", &["osimertinib", "Tagrisso"], &[]),
                c("lung_cancer", &["lung cancer"], &["cancer"]),
                c("nsclc", &["non-small cell lung cancer", "NSCLC"], &["lung_cancer"]),
            ],
            constraints: vec![],
            ordinals,
        })
        .unwrap()
    }

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn run(text: &str) -> Vec<Fact> {
        let o = ontology();
        let ex = RuleExtractor::new(&o, ExtractorConfig::default());
        ex.extract_text(text, &"d1".into(), date("2020-01-02"))
    }

    #[test]
    fn diagnosis_with_stage() {
        let text = "Patient diagnosed with breast cancer, stage II.";
        let facts = run(text);
        assert_eq!(facts.len(), 1);
        let f = &facts[0];
        assert_eq!(f.concept.as_str(), "breast_cancer");
        assert_eq!(f.polarity, Polarity::Asserted);
        assert_eq!(f.attributes.get("stage").map(String::as_str), Some("II"));
        assert_eq!(f.event_date, Some(date("2020-01-02")));
        assert_eq!(f.confidence, 0.8);
        assert_eq!(&text[f.provenance.start..f.provenance.end], "breast cancer");
    }

    #[test]
    fn negation_cue() {
        let facts = run("Genetic testing negative for BRCA1 mutation.");
        assert_eq!(facts[0].polarity, Polarity::Negated);
        let facts = run("No lymph node involvement. Started osimertinib today.");
        assert_eq!(facts[0].polarity, Polarity::Asserted, "cue in previous sentence");
    }

    #[test]
    fn brand_name_maps_to_generic() {
        let facts = run("Started Tagrisso @date{2019-05-06}.");
        assert_eq!(facts[0].concept.as_str(), "osimertinib");
        assert_eq!(facts[0].event_date, Some(date("2019-05-06")));
    }

    #[test]
    fn longest_match_wins() {
        let facts = run("History of non-small cell lung cancer and malignant breast neoplasm @date{2015-01-01} stage iia.");
        let ids: Vec<_> = facts.iter().map(|f| f.concept.as_str()).collect();
        assert_eq!(ids, vec!["nsclc", "breast_cancer"]);
        assert_eq!(facts[1].attributes["stage"], "IIA");
    }

    #[test]
    fn no_matches_is_empty() {
        assert!(run("Vital signs stable today.").is_empty());
    }
}
