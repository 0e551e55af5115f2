//! Concept DAG with synonyms, ordinal attribute tables and requires-constraints.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ConceptId;
use crate::io::{self, IoError};

pub const ONTOLOGY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConceptCategory {
    Condition,
    Biomarker,
    Therapy,
    Procedure,
    Anatomy,
    Finding,
    Outcome,
    #[default]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeType {
    /// Values come from the ontology ordinal table of the same name.
    Ordinal,
    String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptDef {
    pub id: ConceptId,
    pub surface_forms: Vec<String>,
    #[serde(default)]
    pub parents: Vec<ConceptId>,
    #[serde(default)]
    pub attributes_schema: BTreeMap<String, AttributeType>,
    #[serde(default)]
    pub category: ConceptCategory,
    /// Anatomy this concept (a procedure) asserts absent from its date onward.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removes: Vec<ConceptId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintScope {
    FromEventDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintDef {
    pub id: String,
    pub subject_concept: ConceptId,
    pub requires_present: ConceptId,
    pub scope: ConstraintScope,
}

/// On-disk ontology document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyFile {
    pub version: u32,
    pub concepts: Vec<ConceptDef>,
    #[serde(default)]
    pub constraints: Vec<ConstraintDef>,
    #[serde(default)]
    pub ordinals: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("duplicate concept id {0}")]
    DuplicateConcept(ConceptId),
    #[error("concept {concept} has unknown parent {parent}")]
    UnknownParent { concept: ConceptId, parent: ConceptId },
    #[error("ISA cycle through concept {0}")]
    Cycle(ConceptId),
    #[error("surface form {form:?} maps to both {first} and {second}")]
    AmbiguousSurface {
        form: String,
        first: ConceptId,
        second: ConceptId,
    },
    #[error("unknown concept {name:?}; nearest: {suggestions:?}")]
    UnknownConcept {
        name: String,
        suggestions: Vec<String>,
    },
    #[error("concept {concept} uses ordinal table {table:?} which is not defined")]
    UnknownOrdinalTable { concept: ConceptId, table: String },
    #[error("constraint {id} references unknown concept {concept}")]
    BadConstraint { id: String, concept: ConceptId },
    #[error("unsupported ontology version {0}")]
    Version(u32),
}

#[derive(Debug, Error)]
pub enum OntologyLoadError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Invalid(#[from] OntologyError),
}

/// Validated ontology with precomputed ancestor/descendant closures.
#[derive(Debug, Clone)]
pub struct Ontology {
    file: OntologyFile,
    index: HashMap<ConceptId, usize>,
    names: HashMap<String, usize>,
    ancestors: Vec<Vec<ConceptId>>,
    descendants: Vec<BTreeSet<ConceptId>>,
    depth: Vec<usize>,
}

pub fn normalize_name(s: &str) -> String {
    s.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl Ontology {
    pub fn new(file: OntologyFile) -> Result<Self, OntologyError> {
        if file.version != ONTOLOGY_VERSION {
            return Err(OntologyError::Version(file.version));
        }
        let mut index = HashMap::new();
        for (i, c) in file.concepts.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(OntologyError::DuplicateConcept(c.id.clone()));
            }
        }
        let n = file.concepts.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (i, c) in file.concepts.iter().enumerate() {
            for p in &c.parents {
                let &j = index.get(p).ok_or_else(|| OntologyError::UnknownParent {
                    concept: c.id.clone(),
                    parent: p.clone(),
                })?;
                parents[i].push(j);
                children[j].push(i);
            }
            for (attr, ty) in &c.attributes_schema {
                if *ty == AttributeType::Ordinal && !file.ordinals.contains_key(attr) {
                    return Err(OntologyError::UnknownOrdinalTable {
                        concept: c.id.clone(),
                        table: attr.clone(),
                    });
                }
            }
            for r in &c.removes {
                if !index.contains_key(r) {
                    return Err(OntologyError::UnknownParent {
                        concept: c.id.clone(),
                        parent: r.clone(),
                    });
                }
            }
        }
        let order = topo_order(&parents, &file)?;

        let mut depth = vec![0usize; n];
        for &i in &order {
            depth[i] = parents[i].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        }
        let mut anc_sets: Vec<BTreeSet<ConceptId>> = vec![BTreeSet::new(); n];
        for &i in &order {
            let mut set = BTreeSet::new();
            set.insert(file.concepts[i].id.clone());
            for &p in &parents[i] {
                set.extend(anc_sets[p].iter().cloned());
            }
            anc_sets[i] = set;
        }
        let mut descendants: Vec<BTreeSet<ConceptId>> = vec![BTreeSet::new(); n];
        for &i in order.iter().rev() {
            let mut set = BTreeSet::new();
            set.insert(file.concepts[i].id.clone());
            for &c in &children[i] {
                set.extend(descendants[c].iter().cloned());
            }
            descendants[i] = set;
        }

        let mut names: HashMap<String, usize> = HashMap::new();
        for (i, c) in file.concepts.iter().enumerate() {
            let forms = std::iter::once(c.id.as_str()).chain(c.surface_forms.iter().map(String::as_str));
            for form in forms {
                let key = normalize_name(form);
                if key.is_empty() {
                    continue;
                }
                match names.get(&key) {
                    Some(&j) if j != i => {
                        return Err(OntologyError::AmbiguousSurface {
                            form: form.to_string(),
                            first: file.concepts[j].id.clone(),
                            second: c.id.clone(),
                        })
                    }
                    _ => {
                        names.insert(key, i);
                    }
                }
            }
        }
        for con in &file.constraints {
            for c in [&con.subject_concept, &con.requires_present] {
                if !index.contains_key(c) {
                    return Err(OntologyError::BadConstraint {
                        id: con.id.clone(),
                        concept: c.clone(),
                    });
                }
            }
        }
        Ok(Self {
            ancestors: anc_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            descendants,
            depth,
            index,
            names,
            file,
        })
    }

    pub fn load(path: &Path) -> Result<Self, OntologyLoadError> {
        let file: OntologyFile = io::read_json(path)?;
        Ok(Self::new(file)?)
    }

    pub fn file(&self) -> &OntologyFile {
        &self.file
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(&self.file).expect("ontology serializes");
        b.push(b'\n');
        b
    }

    pub fn concepts(&self) -> &[ConceptDef] {
        &self.file.concepts
    }

    pub fn constraints(&self) -> &[ConstraintDef] {
        &self.file.constraints
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.index.contains_key(id)
    }

    pub fn concept(&self, id: &ConceptId) -> Option<&ConceptDef> {
        self.index.get(id).map(|&i| &self.file.concepts[i])
    }

    /// Resolves an id or surface form (case-insensitive, `_` and spaces equivalent).
    pub fn resolve(&self, name: &str) -> Option<&ConceptId> {
        self.names
            .get(&normalize_name(name))
            .map(|&i| &self.file.concepts[i].id)
    }

    pub fn resolve_or_suggest(&self, name: &str) -> Result<ConceptId, OntologyError> {
        self.resolve(name).cloned().ok_or_else(|| OntologyError::UnknownConcept {
            name: name.to_string(),
            suggestions: self.nearest_names(name, 3),
        })
    }

    /// Surface forms closest to `name` by edit distance.
    pub fn nearest_names(&self, name: &str, n: usize) -> Vec<String> {
        let key = normalize_name(name);
        let mut scored: Vec<(usize, &String)> = self
            .names
            .keys()
            .map(|k| (strsim::levenshtein(&key, k), k))
            .collect();
        scored.sort();
        scored.into_iter().take(n).map(|(_, k)| k.clone()).collect()
    }

    /// Reflexive ancestors, sorted.
    pub fn ancestors(&self, id: &ConceptId) -> &[ConceptId] {
        self.index
            .get(id)
            .map(|&i| self.ancestors[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn is_a(&self, concept: &ConceptId, ancestor: &ConceptId) -> bool {
        self.ancestors(concept).binary_search(ancestor).is_ok()
    }

    /// The concept plus all ISA-descendants. Names resolve through synonyms first.
    pub fn closure(&self, name: &str) -> Result<&BTreeSet<ConceptId>, OntologyError> {
        let id = self.resolve_or_suggest(name)?;
        Ok(&self.descendants[self.index[&id]])
    }

    /// Length of the longest ISA path from a root.
    pub fn depth(&self, id: &ConceptId) -> usize {
        self.index.get(id).map(|&i| self.depth[i]).unwrap_or(0)
    }

    pub fn canonical_surface<'a>(&'a self, id: &'a ConceptId) -> &'a str {
        self.concept(id)
            .and_then(|c| c.surface_forms.first())
            .map(String::as_str)
            .unwrap_or(id.as_str())
    }

    pub fn attribute_type(&self, concept: &ConceptId, attr: &str) -> Option<AttributeType> {
        self.concept(concept)?.attributes_schema.get(attr).copied()
    }

    /// True if any concept declares this attribute as ordinal.
    pub fn is_ordinal_attribute(&self, attr: &str) -> bool {
        self.file.ordinals.contains_key(attr)
    }

    /// Position of `value` in the ordinal table `attr` (case-insensitive).
    pub fn ordinal_rank(&self, attr: &str, value: &str) -> Option<usize> {
        self.file
            .ordinals
            .get(attr)?
            .iter()
            .position(|v| v.eq_ignore_ascii_case(value))
    }

    pub fn canonical_ordinal(&self, attr: &str, value: &str) -> Option<&str> {
        let rank = self.ordinal_rank(attr, value)?;
        Some(self.file.ordinals[attr][rank].as_str())
    }

    /// Anatomy concepts asserted absent by an event of `concept`.
    pub fn removes(&self, concept: &ConceptId) -> &[ConceptId] {
        self.concept(concept).map(|c| c.removes.as_slice()).unwrap_or(&[])
    }

    /// Every `(normalized surface form, concept)` pair including ids.
    pub fn surface_index(&self) -> impl Iterator<Item = (&str, &ConceptId)> {
        self.names
            .iter()
            .map(|(k, &i)| (k.as_str(), &self.file.concepts[i].id))
    }
}

fn topo_order(parents: &[Vec<usize>], file: &OntologyFile) -> Result<Vec<usize>, OntologyError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = parents.len();
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < parents[node].len() {
                let p = parents[node][*next];
                *next += 1;
                match state[p] {
                    0 => {
                        state[p] = 1;
                        stack.push((p, 0));
                    }
                    1 => return Err(OntologyError::Cycle(file.concepts[p].id.clone())),
                    _ => {}
                }
            } else {
                state[node] = 2;
                order.push(node);
                stack.pop();
            }
        }
    }
    // parents precede children
    Ok(order)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn concept(id: &str, forms: &[&str], parents: &[&str]) -> ConceptDef {
        ConceptDef {
            id: id.into(),
            surface_forms: forms.iter().map(|s| s.to_string()).collect(),
            parents: parents.iter().map(|&s| s.into()).collect(),
            attributes_schema: BTreeMap::new(),
            category: ConceptCategory::Other,
            removes: Vec::new(),
        }
    }

    pub fn chain_ontology() -> Ontology {
        Ontology::new(OntologyFile {
            version: 1,
            concepts: vec![
                concept("systemic_therapy", &["systemic therapy"], &[]),
                concept("targeted_therapy", &["targeted therapy"], &["systemic_therapy"]),
                concept("tki", &["tyrosine kinase inhibitor", "TKI"], &["targeted_therapy"]),
                concept("egfr_tki", &["EGFR TKI"], &["tki"]),
                concept("osimertinib", &["osimertinib", "Tagrisso"], &["egfr_tki"]),
                concept("chemotherapy", &["chemotherapy"], &["systemic_therapy"]),
            ],
            constraints: vec![],
            ordinals: BTreeMap::new(),
        })
        .unwrap()
    }

    #[test]
    fn closure_of_leaf_is_itself() {
        let o = chain_ontology();
        let c = o.closure("osimertinib").unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.contains(&ConceptId::from("osimertinib")));
    }

    #[test]
    fn closure_through_synonym_and_chain() {
        let o = chain_ontology();
        let c = o.closure("targeted therapy").unwrap();
        for id in ["targeted_therapy", "tki", "egfr_tki", "osimertinib"] {
            assert!(c.contains(&ConceptId::from(id)));
        }
        assert!(!c.contains(&ConceptId::from("chemotherapy")));
        assert_eq!(o.closure("TAGRISSO").unwrap(), o.closure("osimertinib").unwrap());
        assert_eq!(o.depth(&"osimertinib".into()), 4);
    }

    #[test]
    fn ancestors_include_whole_chain() {
        let o = chain_ontology();
        let a = o.ancestors(&"osimertinib".into());
        assert_eq!(a.len(), 5);
        assert!(o.is_a(&"osimertinib".into(), &"systemic_therapy".into()));
    }

    #[test]
    fn unknown_concept_suggests() {
        let o = chain_ontology();
        match o.closure("osimertinb") {
            Err(OntologyError::UnknownConcept { suggestions, .. }) => {
                assert_eq!(suggestions[0], "osimertinib")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_cycles_and_ambiguity() {
        let cyc = OntologyFile {
            version: 1,
            concepts: vec![concept("a", &[], &["b"]), concept("b", &[], &["a"])],
            constraints: vec![],
            ordinals: BTreeMap::new(),
        };
        assert!(matches!(Ontology::new(cyc), Err(OntologyError::Cycle(_))));
        let amb = OntologyFile {
            version: 1,
            concepts: vec![concept("a", &["x"], &[]), concept("b", &["X"], &[])],
            constraints: vec![],
            ordinals: BTreeMap::new(),
        };
        assert!(matches!(Ontology::new(amb), Err(OntologyError::AmbiguousSurface { .. })));
    }
}
