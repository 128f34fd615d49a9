use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposition::split_sentences;
use crate::error::{Error, Result};
use crate::terminology::Terminology;
use crate::text::{longest_matches, normalize, whole_word_matches};

/// Negation cues; a sentence containing any of them marks its entities absent.
pub const NEGATION_CUES: [&str; 5] = ["no", "without", "clear of", "free of", "normal"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Anatomy,
    Abnormality,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub canonical: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub canonical: String,
    pub kind: EntityKind,
}

/// An abnormality term as listed in `lexicon.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbnormalityRecord {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

/// On-disk form: `{"abnormalities": [{"canonical": ..., "synonyms": [...]}, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconFile {
    pub abnormalities: Vec<AbnormalityRecord>,
}

/// Entity vocabulary for relevance scoring: every anatomy of a terminology
/// plus a list of abnormality terms.
///
/// Entry order (anatomies sorted, then abnormalities sorted) fixes the layout
/// of bag-of-entity vectors: entry `e` occupies slots `2e` (present) and
/// `2e + 1` (absent).
#[derive(Debug, Clone)]
pub struct Lexicon {
    terminology: Terminology,
    entries: Vec<LexiconEntry>,
    forms: Vec<(String, usize)>,
    abnormalities: Vec<String>,
}

impl Lexicon {
    pub fn new(terminology: Terminology, abnormalities: Vec<AbnormalityRecord>) -> Result<Self> {
        let mut entries: Vec<LexiconEntry> = terminology
            .canonicals()
            .iter()
            .map(|c| LexiconEntry {
                canonical: c.clone(),
                kind: EntityKind::Anatomy,
            })
            .collect();
        let mut forms: Vec<(String, usize)> = Vec::new();
        for (form, canon) in terminology.surface_index() {
            let idx = entries.iter().position(|e| &e.canonical == canon).unwrap();
            forms.push((form.clone(), idx));
        }

        let mut abn: Vec<(String, BTreeSet<String>)> = Vec::new();
        for rec in abnormalities {
            let canonical = normalize(&rec.canonical);
            if canonical.is_empty() {
                return Err(Error::InvalidTerminology(
                    "abnormality name must be non-empty".into(),
                ));
            }
            let mut syn = BTreeSet::new();
            for s in &rec.synonyms {
                let s = normalize(s);
                if s == canonical {
                    return Err(Error::SynonymIsCanonical(canonical));
                }
                if s.is_empty() {
                    return Err(Error::InvalidTerminology(format!(
                        "empty synonym for {canonical:?}"
                    )));
                }
                syn.insert(s);
            }
            abn.push((canonical, syn));
        }
        abn.sort();
        for w in abn.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateTerm(w[0].0.clone()));
            }
        }
        let abnormality_names: Vec<String> = abn.iter().map(|(c, _)| c.clone()).collect();
        for (canonical, syn) in abn {
            let idx = entries.len();
            for form in std::iter::once(canonical.clone()).chain(syn) {
                forms.push((form, idx));
            }
            entries.push(LexiconEntry {
                canonical,
                kind: EntityKind::Abnormality,
            });
        }

        forms.sort();
        for w in forms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::AmbiguousSurfaceForm {
                    form: w[0].0.clone(),
                    first: entries[w[0].1].canonical.clone(),
                    second: entries[w[1].1].canonical.clone(),
                });
            }
        }

        Ok(Lexicon {
            terminology,
            entries,
            forms,
            abnormalities: abnormality_names,
        })
    }

    pub fn from_file(terminology: Terminology, file: LexiconFile) -> Result<Self> {
        Self::new(terminology, file.abnormalities)
    }

    pub fn load(terminology: Terminology, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LexiconFile = serde_json::from_str(&json)?;
        Self::from_file(terminology, file)
    }

    pub fn terminology(&self) -> &Terminology {
        &self.terminology
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Canonical abnormality names, sorted.
    pub fn abnormalities(&self) -> &[String] {
        &self.abnormalities
    }

    /// Length of a bag-of-entity vector.
    pub fn feature_dim(&self) -> usize {
        2 * self.entries.len()
    }

    /// Entity codes (`2 * entry + polarity`) mentioned in one sentence, deduplicated.
    fn sentence_codes(&self, sentence: &str) -> Vec<u32> {
        let norm = normalize(sentence);
        let negated = NEGATION_CUES
            .iter()
            .any(|cue| !whole_word_matches(&norm, cue).is_empty());
        let offset = u32::from(negated);
        let mut codes: Vec<u32> =
            longest_matches(&norm, self.forms.iter().map(|(f, i)| (f.as_str(), *i)))
                .into_iter()
                .map(|s| 2 * s.id as u32 + offset)
                .collect();
        codes.sort_unstable();
        codes.dedup();
        codes
    }

    /// Sorted, deduplicated entity codes for a whole text.
    pub(crate) fn entity_codes(&self, text: &str) -> Vec<u32> {
        let mut codes: Vec<u32> = split_sentences(text)
            .iter()
            .flat_map(|s| self.sentence_codes(s))
            .collect();
        codes.sort_unstable();
        codes.dedup();
        codes
    }

    /// Entity mentions of `text` with sentence-level negation polarity.
    pub fn extract_entities(&self, text: &str) -> BTreeSet<EntityMention> {
        self.entity_codes(text)
            .into_iter()
            .map(|code| EntityMention {
                canonical: self.entries[(code / 2) as usize].canonical.clone(),
                polarity: if code % 2 == 0 {
                    Polarity::Present
                } else {
                    Polarity::Absent
                },
            })
            .collect()
    }

    /// Count vector over (entity, polarity) slots; each sentence contributes
    /// at most one count per slot.
    pub fn bag_of_entities(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_dim()];
        for s in split_sentences(text) {
            for code in self.sentence_codes(&s) {
                v[code as usize] += 1.0;
            }
        }
        v
    }
}
