//! Sentence segmentation and anatomy-keyed regional findings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Report};
use crate::error::{Error, Result};
use crate::terminology::Terminology;

/// Split report prose on periods.
///
/// Fragments are trimmed and empty ones dropped. A period with an ASCII
/// digit on both sides (a decimal point such as `1.5`) does not split.
pub fn split_sentences(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'.' {
            continue;
        }
        let decimal = i > 0
            && i + 1 < bytes.len()
            && bytes[i - 1].is_ascii_digit()
            && bytes[i + 1].is_ascii_digit();
        if decimal {
            continue;
        }
        push_trimmed(&mut out, &text[start..i]);
        start = i + 1;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, fragment: &str) {
    let s = fragment.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Sentences joined back into scoreable text: `"a. b."`.
pub fn join_sentences<S: AsRef<str>>(sentences: &[S]) -> String {
    if sentences.is_empty() {
        return String::new();
    }
    let mut s = sentences
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(". ");
    s.push('.');
    s
}

/// Sentences of one report attached to one anatomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionalFinding {
    pub report_id: String,
    pub anatomy: String,
    pub sentences: Vec<String>,
}

impl RegionalFinding {
    pub fn text(&self) -> String {
        join_sentences(&self.sentences)
    }
}

/// Regional findings of one report, keyed by canonical anatomy.
pub type ReportFindings = BTreeMap<String, RegionalFinding>;

/// Decompose one report.
///
/// Each sentence is attached to every anatomy it mentions and to all of
/// their ancestors. A sentence is attached at most once per anatomy.
pub fn decompose(report: &Report, terminology: &Terminology) -> ReportFindings {
    let sentences = split_sentences(&report.text);
    let mut attached: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (idx, sentence) in sentences.iter().enumerate() {
        for anatomy in terminology.match_anatomies(sentence) {
            let ancestors = terminology
                .ancestors(&anatomy)
                .expect("matched anatomy is a known term");
            for a in std::iter::once(anatomy).chain(ancestors) {
                attached.entry(a).or_default().insert(idx);
            }
        }
    }
    attached
        .into_iter()
        .map(|(anatomy, idxs)| {
            let finding = RegionalFinding {
                report_id: report.id.clone(),
                anatomy: anatomy.clone(),
                sentences: idxs.into_iter().map(|i| sentences[i].clone()).collect(),
            };
            (anatomy, finding)
        })
        .collect()
}

/// Regional findings for every report of a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecomposedCorpus {
    report_ids: Vec<String>,
    findings: Vec<ReportFindings>,
    counts: BTreeMap<String, usize>,
    total: usize,
}

impl DecomposedCorpus {
    fn from_parts(report_ids: Vec<String>, findings: Vec<ReportFindings>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for f in &findings {
            for anatomy in f.keys() {
                *counts.entry(anatomy.clone()).or_default() += 1;
            }
        }
        let total = counts.values().sum();
        DecomposedCorpus {
            report_ids,
            findings,
            counts,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.report_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.report_ids.is_empty()
    }

    pub fn report_ids(&self) -> &[String] {
        &self.report_ids
    }

    /// Findings of the `i`-th report.
    pub fn report(&self, i: usize) -> &ReportFindings {
        &self.findings[i]
    }

    pub fn finding(&self, i: usize, anatomy: &str) -> Option<&RegionalFinding> {
        self.findings[i].get(anatomy)
    }

    /// Number of reports with a finding for each anatomy.
    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    /// Total number of (report, anatomy) findings.
    pub fn total(&self) -> usize {
        self.total
    }

    /// All findings, report-major then anatomy order.
    pub fn iter(&self) -> impl Iterator<Item = &RegionalFinding> {
        self.findings.iter().flat_map(|f| f.values())
    }

    /// Per-report scoring text for `anatomy`; empty when the report is silent about it.
    pub fn texts_for(&self, anatomy: &str) -> Vec<String> {
        self.findings
            .iter()
            .map(|f| f.get(anatomy).map(RegionalFinding::text).unwrap_or_default())
            .collect()
    }

    pub fn has_finding(&self, anatomy: &str) -> Vec<bool> {
        self.findings.iter().map(|f| f.contains_key(anatomy)).collect()
    }

    /// Write `findings.jsonl`: one `{"report_id","anatomy","text"}` line per finding.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for f in self.iter() {
            let rec = FindingRecord {
                report_id: f.report_id.clone(),
                anatomy: f.anatomy.clone(),
                text: f.text(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rebuild a decomposition from `findings.jsonl`, aligned to `corpus` order.
    pub fn read_jsonl(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let index: BTreeMap<&str, usize> = corpus
            .reports()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut findings = vec![ReportFindings::new(); corpus.len()];
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FindingRecord =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            let &i = index
                .get(rec.report_id.as_str())
                .ok_or_else(|| Error::UnknownReport(rec.report_id.clone()))?;
            findings[i].insert(
                rec.anatomy.clone(),
                RegionalFinding {
                    report_id: rec.report_id,
                    anatomy: rec.anatomy,
                    sentences: split_sentences(&rec.text),
                },
            );
        }
        let ids = corpus.reports().iter().map(|r| r.id.clone()).collect();
        Ok(Self::from_parts(ids, findings))
    }
}

/// Line format of `findings.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub report_id: String,
    pub anatomy: String,
    pub text: String,
}

/// Decompose every report; reports are processed in parallel and merged by index.
pub fn decompose_corpus(corpus: &Corpus, terminology: &Terminology) -> DecomposedCorpus {
    let findings: Vec<ReportFindings> = corpus
        .reports()
        .par_iter()
        .map(|r| decompose(r, terminology))
        .collect();
    let ids = corpus.reports().iter().map(|r| r.id.clone()).collect();
    DecomposedCorpus::from_parts(ids, findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminology::TermRecord;

    fn lungs() -> Terminology {
        Terminology::from_records(vec![
            TermRecord {
                canonical: "lung".into(),
                synonyms: vec!["lungs".into()],
                parent: None,
            },
            TermRecord {
                canonical: "left lung".into(),
                synonyms: vec![],
                parent: Some("lung".into()),
            },
            TermRecord {
                canonical: "right lung".into(),
                synonyms: vec![],
                parent: Some("lung".into()),
            },
        ])
        .unwrap()
    }

    fn report(id: &str, text: &str) -> Report {
        Report {
            id: id.into(),
            text: text.into(),
            features: None,
        }
    }

    #[test]
    fn splits_on_periods() {
        assert_eq!(
            split_sentences("Heart size is normal. Lungs are clear."),
            vec!["Heart size is normal", "Lungs are clear"]
        );
        assert!(split_sentences("").is_empty());
        assert!(split_sentences(" . .. ").is_empty());
    }

    #[test]
    fn decimal_guard() {
        assert_eq!(
            split_sentences("Effusion measures 1.5 cm. Stable."),
            vec!["Effusion measures 1.5 cm", "Stable"]
        );
        // a period after a digit but before a space still splits
        assert_eq!(split_sentences("Size 3. Next"), vec!["Size 3", "Next"]);
    }

    #[test]
    fn join_round_trips_through_split() {
        let s = vec!["Effusion measures 1.5 cm".to_string(), "Stable".to_string()];
        assert_eq!(join_sentences(&s), "Effusion measures 1.5 cm. Stable.");
        assert_eq!(split_sentences(&join_sentences(&s)), s);
        assert_eq!(join_sentences::<String>(&[]), "");
    }

    #[test]
    fn child_merges_into_parent() {
        let f = decompose(&report("r", "Left lung is clear."), &lungs());
        assert_eq!(f.len(), 2);
        assert_eq!(f["left lung"].sentences, vec!["Left lung is clear"]);
        assert_eq!(f["lung"].sentences, vec!["Left lung is clear"]);
    }

    #[test]
    fn no_mentions_gives_empty_map() {
        assert!(decompose(&report("r", "No acute process."), &lungs()).is_empty());
        assert!(decompose(&report("r", ""), &lungs()).is_empty());
    }

    #[test]
    fn parent_collects_both_children() {
        let f = decompose(&report("r", "Left lung clear. Right lung clear."), &lungs());
        assert_eq!(f["lung"].sentences, vec!["Left lung clear", "Right lung clear"]);
        assert_eq!(f["left lung"].sentences, vec!["Left lung clear"]);
        assert_eq!(f["right lung"].sentences, vec!["Right lung clear"]);
    }

    #[test]
    fn sentence_added_once_per_anatomy() {
        let f = decompose(&report("r", "Left lung and right lung and lungs clear."), &lungs());
        assert_eq!(f["lung"].sentences.len(), 1);
    }

    #[test]
    fn corpus_counts_are_additive() {
        let corpus = Corpus::new(vec![
            report("a", "Left lung is clear."),
            report("b", "Left lung clear. Right lung clear."),
        ])
        .unwrap();
        let dc = decompose_corpus(&corpus, &lungs());
        let per_report: usize = (0..dc.len()).map(|i| dc.report(i).len()).sum();
        assert_eq!(dc.total(), per_report);
        assert_eq!(dc.total(), 5);
        assert_eq!(dc.counts()["lung"], 2);
        assert_eq!(dc.counts()["right lung"], 1);
    }

    #[test]
    fn empty_corpus() {
        let dc = decompose_corpus(&Corpus::new(vec![]).unwrap(), &lungs());
        assert!(dc.is_empty());
        assert_eq!(dc.total(), 0);
        assert!(dc.counts().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let corpus = Corpus::new(vec![
            report("a", "Left lung measures 1.5 cm. Heart ok."),
            report("b", "Right lung clear."),
        ])
        .unwrap();
        let dc = decompose_corpus(&corpus, &lungs());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("findings.jsonl");
        dc.write_jsonl(&p).unwrap();
        assert_eq!(DecomposedCorpus::read_jsonl(&p, &corpus).unwrap(), dc);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sentence() -> impl Strategy<Value = String> {
            prop_oneof![
                Just("Left lung is clear"),
                Just("Right lung shows opacity"),
                Just("Lungs are hyperinflated"),
                Just("Heart size is 1.5 cm"),
                Just("No acute findings"),
                Just("Left lung and right lung clear"),
            ]
            .prop_map(String::from)
        }

        proptest! {
            #[test]
            fn hierarchy_monotone_and_conservative(parts in proptest::collection::vec(sentence(), 0..8)) {
                let text = join_sentences(&parts);
                let t = lungs();
                let r = report("r", &text);
                let f = decompose(&r, &t);
                let source = split_sentences(&text);
                for finding in f.values() {
                    prop_assert!(!finding.sentences.is_empty());
                    for s in &finding.sentences {
                        prop_assert!(source.contains(s));
                    }
                    for parent in t.ancestors(&finding.anatomy).unwrap() {
                        let p = &f[&parent].sentences;
                        for s in &finding.sentences {
                            prop_assert!(p.contains(s));
                        }
                    }
                }
                prop_assert_eq!(decompose(&r, &t), f);
            }
        }
    }
}
