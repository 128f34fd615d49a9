//! Report corpora: JSON-lines I/O and a seeded synthetic generator.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::Lexicon;

/// One report, optionally paired with an image-proxy feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub id: String,
    pub text: String,
    pub features: Option<Vec<f32>>,
}

/// Line format of `reports.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct ReportRecord {
    id: String,
    report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f32>>,
}

/// An ordered, validated collection of reports.
///
/// The position of a report is its row/column index in every matrix built
/// from the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    reports: Vec<Report>,
    feature_dim: Option<usize>,
}

impl Corpus {
    pub fn new(reports: Vec<Report>) -> Result<Self> {
        let mut builder = CorpusBuilder::default();
        for (i, r) in reports.into_iter().enumerate() {
            builder.push(r, i + 1)?;
        }
        Ok(builder.finish())
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn ids(&self) -> Vec<String> {
        self.reports.iter().map(|r| r.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.reports.iter().position(|r| r.id == id)
    }

    /// Feature vectors as an `N x D` f64 matrix.
    pub fn feature_matrix(&self) -> Result<Array2<f64>> {
        let d = self.feature_dim.ok_or(Error::MissingFeatures)?;
        let mut m = Array2::zeros((self.len(), d));
        for (i, r) in self.reports.iter().enumerate() {
            let f = r.features.as_ref().ok_or(Error::MissingFeatures)?;
            for (j, &x) in f.iter().enumerate() {
                m[[i, j]] = f64::from(x);
            }
        }
        Ok(m)
    }

    /// Parse a JSON-lines corpus. Blank lines are skipped; line numbers in
    /// errors are 1-based physical lines.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut builder = CorpusBuilder::default();
        for (n, line) in reader.lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReportRecord =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: lineno,
                    message: e.to_string(),
                })?;
            builder.push(
                Report {
                    id: rec.id,
                    text: rec.report,
                    features: rec.features,
                },
                lineno,
            )?;
        }
        Ok(builder.finish())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.reports {
            let rec = ReportRecord {
                id: r.id.clone(),
                report: r.text.clone(),
                features: r.features.clone(),
            };
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Default)]
struct CorpusBuilder {
    reports: Vec<Report>,
    seen: HashSet<String>,
    feature_dim: Option<usize>,
}

impl CorpusBuilder {
    fn push(&mut self, r: Report, line: usize) -> Result<()> {
        if r.id.is_empty() {
            return Err(Error::EmptyId { line });
        }
        if !self.seen.insert(r.id.clone()) {
            return Err(Error::DuplicateId { line, id: r.id });
        }
        let dim = r.features.as_ref().map(Vec::len);
        if let Some(f) = &r.features {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteFeature { line });
            }
        }
        if self.reports.is_empty() {
            self.feature_dim = dim;
        } else if dim != self.feature_dim {
            return Err(Error::RaggedFeatures {
                line,
                expected: self.feature_dim.unwrap_or(0),
                found: dim.unwrap_or(0),
            });
        }
        self.reports.push(r);
        Ok(())
    }

    fn finish(self) -> Corpus {
        Corpus {
            reports: self.reports,
            feature_dim: self.feature_dim,
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(BufReader::new(file))
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus.to_jsonl_string()).map_err(|e| Error::io(path, e))
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_reports: usize,
    /// Inclusive `[min, max]` number of distinct anatomies per report.
    pub anatomies_per_report: (usize, usize),
    /// Std of the Gaussian noise added to every feature.
    pub noise_std: f64,
    /// Probability that a sentence uses the "is normal" template.
    #[serde(default = "default_normal_prob")]
    pub normal_prob: f64,
    pub seed: u64,
}

fn default_normal_prob() -> f64 {
    0.3
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_reports: 50,
            anatomies_per_report: (2, 4),
            noise_std: 0.0,
            normal_prob: default_normal_prob(),
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.anatomies_per_report;
        if self.num_reports == 0 {
            return Err(Error::InvalidConfig("num_reports must be positive".into()));
        }
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "anatomies_per_report range [{lo}, {hi}] is empty"
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.normal_prob) {
            return Err(Error::InvalidConfig("normal_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One templated sentence of a synthetic report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSentence {
    pub anatomy: String,
    /// `None` for "<Anatomy> is normal."
    pub abnormality: Option<String>,
}

impl PlannedSentence {
    pub fn render(&self) -> String {
        let name = capitalize(&self.anatomy);
        match &self.abnormality {
            None => format!("{name} is normal."),
            Some(a) => format!("{name} shows {a}."),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// RNG stream used for noise draws; text sampling uses stream 0.
pub const NOISE_STREAM: u64 = 1;

/// Generate a corpus plus the template plan behind every report.
///
/// Texts are sampled from stream 0 of a ChaCha8 generator seeded with
/// `spec.seed`; noise comes from stream [`NOISE_STREAM`] with one standard
/// normal draw per feature (drawn even when `noise_std` is zero), so the
/// noise can be regenerated independently of the texts.
pub fn generate_synthetic_with_plan(
    spec: &SynthSpec,
    lexicon: &Lexicon,
) -> Result<(Corpus, Vec<Vec<PlannedSentence>>)> {
    spec.validate()?;
    let anatomies = lexicon.terminology().canonicals();
    if anatomies.is_empty() {
        return Err(Error::EmptyTerminology);
    }
    let abnormalities = lexicon.abnormalities();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let width = spec.num_reports.to_string().len().max(5);
    let (lo, hi) = spec.anatomies_per_report;
    let mut reports = Vec::with_capacity(spec.num_reports);
    let mut plans = Vec::with_capacity(spec.num_reports);
    for i in 0..spec.num_reports {
        let k = rng.random_range(lo..=hi).min(anatomies.len());
        let picked = sample(&mut rng, anatomies.len(), k);
        let plan: Vec<PlannedSentence> = picked
            .iter()
            .map(|a| {
                let normal = abnormalities.is_empty() || rng.random_bool(spec.normal_prob);
                let abnormality = if normal {
                    None
                } else {
                    Some(abnormalities[rng.random_range(0..abnormalities.len())].clone())
                };
                PlannedSentence {
                    anatomy: anatomies[a].clone(),
                    abnormality,
                }
            })
            .collect();
        let text = plan
            .iter()
            .map(PlannedSentence::render)
            .collect::<Vec<_>>()
            .join(" ");
        let features = lexicon
            .bag_of_entities(&text)
            .into_iter()
            .map(|clean| {
                let z: f64 = noise_rng.sample(StandardNormal);
                (clean + spec.noise_std * z) as f32
            })
            .collect();
        reports.push(Report {
            id: format!("syn-{i:0width$}"),
            text,
            features: Some(features),
        });
        plans.push(plan);
    }
    Ok((Corpus::new(reports)?, plans))
}

pub fn generate_synthetic(spec: &SynthSpec, lexicon: &Lexicon) -> Result<Corpus> {
    generate_synthetic_with_plan(spec, lexicon).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relevance::AbnormalityRecord;
    use crate::terminology::{TermRecord, Terminology};

    fn lexicon() -> Lexicon {
        let t = Terminology::from_records(
            ["heart", "lung", "pleura", "aorta"]
                .iter()
                .map(|c| TermRecord {
                    canonical: c.to_string(),
                    synonyms: vec![],
                    parent: None,
                })
                .collect(),
        )
        .unwrap();
        let abn = ["effusion", "opacity", "calcification"]
            .iter()
            .map(|c| AbnormalityRecord {
                canonical: c.to_string(),
                synonyms: vec![],
            })
            .collect();
        Lexicon::new(t, abn).unwrap()
    }

    #[test]
    fn loads_in_order() {
        let c = Corpus::from_reader(
            "{\"id\":\"a\",\"report\":\"x\"}\n{\"id\":\"b\",\"report\":\"y\"}\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(c.ids(), vec!["a", "b"]);
        assert_eq!(c.feature_dim(), None);
    }

    #[test]
    fn duplicate_id_reports_line() {
        let err = Corpus::from_reader(
            "{\"id\":\"a\",\"report\":\"x\"}\n{\"id\":\"a\",\"report\":\"y\"}\n".as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn ragged_features() {
        let src = "{\"id\":\"a\",\"report\":\"\",\"features\":[1,2,3,4]}\n\
                   {\"id\":\"b\",\"report\":\"\",\"features\":[1,2,3,4,5]}\n";
        let err = Corpus::from_reader(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::RaggedFeatures { line: 2, expected: 4, found: 5 }));
        let src = "{\"id\":\"a\",\"report\":\"\",\"features\":[1]}\n{\"id\":\"b\",\"report\":\"\"}\n";
        assert!(matches!(
            Corpus::from_reader(src.as_bytes()),
            Err(Error::RaggedFeatures { .. })
        ));
    }

    #[test]
    fn malformed_line_number() {
        let src = "{\"id\":\"a\",\"report\":\"\"}\n\n{oops\n";
        assert!(matches!(
            Corpus::from_reader(src.as_bytes()),
            Err(Error::MalformedLine { line: 3, .. })
        ));
        // NaN cannot be written in JSON, and huge literals overflow f32 to inf
        let src = "{\"id\":\"a\",\"report\":\"\",\"features\":[1e39]}\n";
        assert!(Corpus::from_reader(src.as_bytes()).is_err());
    }

    #[test]
    fn empty_text_is_allowed() {
        let c = Corpus::from_reader("{\"id\":\"a\",\"report\":\"\"}\n".as_bytes()).unwrap();
        assert_eq!(c.reports()[0].text, "");
    }

    #[test]
    fn single_noiseless_report() {
        let lx = lexicon();
        let spec = SynthSpec {
            num_reports: 1,
            anatomies_per_report: (1, 1),
            noise_std: 0.0,
            normal_prob: 0.5,
            seed: 7,
        };
        let (c, plan) = generate_synthetic_with_plan(&spec, &lx).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(plan[0].len(), 1);
        let r = &c.reports()[0];
        assert_eq!(crate::decomposition::split_sentences(&r.text).len(), 1);
        let clean: Vec<f32> = lx.bag_of_entities(&r.text).iter().map(|&x| x as f32).collect();
        assert_eq!(r.features.as_ref().unwrap(), &clean);
    }

    #[test]
    fn seed_determinism() {
        let lx = lexicon();
        let spec = SynthSpec {
            noise_std: 0.3,
            ..SynthSpec::default()
        };
        let a = generate_synthetic(&spec, &lx).unwrap().to_jsonl_string();
        let b = generate_synthetic(&spec, &lx).unwrap().to_jsonl_string();
        assert_eq!(a, b);
        let other = generate_synthetic(&SynthSpec { seed: 8, ..spec }, &lx).unwrap();
        assert_ne!(a, other.to_jsonl_string());
    }

    #[test]
    fn noise_matches_regenerated_stream() {
        let lx = lexicon();
        let noisy_spec = SynthSpec {
            num_reports: 6,
            noise_std: 0.1,
            seed: 11,
            ..SynthSpec::default()
        };
        let clean_spec = SynthSpec {
            noise_std: 0.0,
            ..noisy_spec.clone()
        };
        let noisy = generate_synthetic(&noisy_spec, &lx).unwrap();
        let clean = generate_synthetic(&clean_spec, &lx).unwrap();

        // replay the noise stream independently of the generator
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(NOISE_STREAM);
        for (n, c) in noisy.reports().iter().zip(clean.reports()) {
            assert_eq!(n.text, c.text);
            let (nf, cf) = (n.features.as_ref().unwrap(), c.features.as_ref().unwrap());
            let mut diff_sq = 0.0f64;
            let mut expect_sq = 0.0f64;
            for (&x, &y) in nf.iter().zip(cf) {
                let z: f64 = rng.sample(StandardNormal);
                let expected = (f64::from(y) + 0.1 * z) as f32;
                assert_eq!(x, expected);
                diff_sq += (f64::from(x) - f64::from(y)).powi(2);
                expect_sq += (0.1 * z).powi(2);
            }
            assert!((diff_sq.sqrt() - expect_sq.sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_terminology_is_an_error() {
        let lx = Lexicon::new(Terminology::from_records(vec![]).unwrap(), vec![]).unwrap();
        assert!(matches!(
            generate_synthetic(&SynthSpec::default(), &lx),
            Err(Error::EmptyTerminology)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn write_load_round_trip(seed in any::<u64>(), n in 1usize..12, noise in 0.0f64..2.0) {
                let spec = SynthSpec { num_reports: n, noise_std: noise, seed, ..SynthSpec::default() };
                let c = generate_synthetic(&spec, &lexicon()).unwrap();
                let text = c.to_jsonl_string();
                let back = Corpus::from_reader(text.as_bytes()).unwrap();
                prop_assert_eq!(&back, &c);
                prop_assert_eq!(back.to_jsonl_string(), text);
            }
        }
    }
}
