//! Anatomy terminology: canonical names, synonyms and a parent forest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{longest_matches, normalize};

/// One entry of `terminology.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRecord {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnatomyTerm {
    pub canonical: String,
    /// Additional surface forms; never contains `canonical`.
    pub synonyms: BTreeSet<String>,
    pub parent: Option<String>,
}

/// A validated anatomy terminology.
///
/// Every surface form (canonical names and synonyms) maps to exactly one
/// canonical term, and parent links form a forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Terminology {
    terms: BTreeMap<String, AnatomyTerm>,
    surface_index: BTreeMap<String, String>,
    /// Surface forms paired with the position of their canonical in `terms`.
    forms: Vec<(String, usize)>,
    canonicals: Vec<String>,
}

impl Terminology {
    pub fn from_records(records: Vec<TermRecord>) -> Result<Self> {
        let mut terms: BTreeMap<String, AnatomyTerm> = BTreeMap::new();
        for rec in records {
            let canonical = normalize(&rec.canonical);
            if canonical.is_empty() {
                return Err(Error::InvalidTerminology(
                    "canonical name must be non-empty".into(),
                ));
            }
            let mut synonyms = BTreeSet::new();
            for s in &rec.synonyms {
                let s = normalize(s);
                if s.is_empty() {
                    return Err(Error::InvalidTerminology(format!(
                        "empty synonym for {canonical:?}"
                    )));
                }
                if s == canonical {
                    return Err(Error::SynonymIsCanonical(canonical));
                }
                synonyms.insert(s);
            }
            let parent = rec.parent.as_deref().map(normalize);
            if terms.contains_key(&canonical) {
                return Err(Error::DuplicateTerm(canonical));
            }
            terms.insert(
                canonical.clone(),
                AnatomyTerm {
                    canonical,
                    synonyms,
                    parent,
                },
            );
        }

        let mut surface_index: BTreeMap<String, String> = BTreeMap::new();
        for term in terms.values() {
            for form in std::iter::once(&term.canonical).chain(&term.synonyms) {
                if let Some(prev) = surface_index.insert(form.clone(), term.canonical.clone()) {
                    let (first, second) = if prev <= term.canonical {
                        (prev, term.canonical.clone())
                    } else {
                        (term.canonical.clone(), prev)
                    };
                    return Err(Error::AmbiguousSurfaceForm {
                        form: form.clone(),
                        first,
                        second,
                    });
                }
            }
        }

        for term in terms.values() {
            if let Some(parent) = &term.parent {
                if !terms.contains_key(parent) {
                    return Err(Error::DanglingParent {
                        term: term.canonical.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }
        for term in terms.values() {
            let mut steps = 0;
            let mut cur = term.parent.as_ref();
            while let Some(p) = cur {
                if p == &term.canonical || steps > terms.len() {
                    return Err(Error::CyclicHierarchy(term.canonical.clone()));
                }
                steps += 1;
                cur = terms[p].parent.as_ref();
            }
        }

        let canonicals: Vec<String> = terms.keys().cloned().collect();
        let position: BTreeMap<&str, usize> = canonicals
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let forms = surface_index
            .iter()
            .map(|(form, canon)| (form.clone(), position[canon.as_str()]))
            .collect();

        Ok(Terminology {
            terms,
            surface_index,
            forms,
            canonicals,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let records: Vec<TermRecord> = serde_json::from_str(json)?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.terms.contains_key(canonical)
    }

    pub fn get(&self, canonical: &str) -> Option<&AnatomyTerm> {
        self.terms.get(canonical)
    }

    /// Canonical names in sorted order.
    pub fn canonicals(&self) -> &[String] {
        &self.canonicals
    }

    pub fn terms(&self) -> impl Iterator<Item = &AnatomyTerm> {
        self.terms.values()
    }

    /// Map from every normalized surface form to its canonical term.
    pub fn surface_index(&self) -> &BTreeMap<String, String> {
        &self.surface_index
    }

    /// Resolve any surface form (after normalization) to its canonical term.
    pub fn resolve(&self, surface: &str) -> Option<&str> {
        self.surface_index.get(&normalize(surface)).map(String::as_str)
    }

    /// Canonical anatomies mentioned in `sentence` as whole words.
    ///
    /// Overlapping surface forms are resolved longest-first, so "left lung"
    /// does not also report "lung" for the same span.
    pub fn match_anatomies(&self, sentence: &str) -> BTreeSet<String> {
        let norm = normalize(sentence);
        longest_matches(&norm, self.forms.iter().map(|(f, id)| (f.as_str(), *id)))
            .into_iter()
            .map(|span| self.canonicals[span.id].clone())
            .collect()
    }

    /// Chain of ancestors from the immediate parent up to the root.
    pub fn ancestors(&self, canonical: &str) -> Result<Vec<String>> {
        let term = self
            .terms
            .get(canonical)
            .ok_or_else(|| Error::UnknownAnatomy(canonical.to_string()))?;
        let mut out = Vec::new();
        let mut cur = term.parent.as_ref();
        while let Some(p) = cur {
            out.push(p.clone());
            cur = self.terms[p].parent.as_ref();
        }
        Ok(out)
    }
}
