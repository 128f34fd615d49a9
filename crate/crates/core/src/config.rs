//! TOML run configuration, `key=value` overrides and run-directory naming.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, SynthSpec};
use crate::error::{Error, Result};
use crate::model::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Input corpus. When absent, `gen-synthetic` writes one into the run
    /// directory and later commands read it from there.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub terminology: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ks: vec![1, 5, 10] }
    }
}

/// How reports are divided into training and test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitConfig {
    /// Train and test on every report.
    All,
    /// Seeded random hold-out.
    Fraction { test_fraction: f64, seed: u64 },
    /// Explicit id lists.
    Ids { train_ids: Vec<String>, test_ids: Vec<String> },
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Fraction {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Corpus rows for training and testing, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitConfig {
    pub fn resolve(&self, corpus: &Corpus) -> Result<Split> {
        let n = corpus.len();
        let mut split = match self {
            SplitConfig::All => Split {
                train: (0..n).collect(),
                test: (0..n).collect(),
            },
            SplitConfig::Fraction { test_fraction, seed } => {
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(Error::InvalidConfig("test_fraction must be in [0, 1)".into()));
                }
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                let n_test = ((n as f64 * test_fraction).round() as usize).clamp(n.min(1), n);
                Split {
                    test: order[..n_test].to_vec(),
                    train: order[n_test..].to_vec(),
                }
            }
            SplitConfig::Ids { train_ids, test_ids } => {
                let lookup = |ids: &[String]| {
                    ids.iter()
                        .map(|id| corpus.index_of(id).ok_or_else(|| Error::UnknownReport(id.clone())))
                        .collect::<Result<Vec<_>>>()
                };
                let split = Split {
                    train: lookup(train_ids)?,
                    test: lookup(test_ids)?,
                };
                if let Some(&dup) = split.test.iter().find(|i| split.train.contains(i)) {
                    return Err(Error::InvalidConfig(format!(
                        "report {:?} is in both train and test splits",
                        corpus.reports()[dup].id
                    )));
                }
                split
            }
        };
        split.train.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Anatomies evaluated (and trained in stage 2) as conditions.
    #[serde(default)]
    pub conditions: Vec<String>,
    pub paths: Paths,
    #[serde(default)]
    pub synthetic: Option<SynthSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Worker threads for matrix construction; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
}

impl RunConfig {
    /// Parse a TOML document, apply `key=value` overrides and validate.
    /// Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = self.paths.corpus.as_mut() {
            fix(c);
        }
        fix(&mut self.paths.terminology);
        fix(&mut self.paths.lexicon);
        fix(&mut self.paths.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let ks = &self.eval.ks;
        if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "eval.ks must be non-empty, >= 1 and strictly ascending".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the effective config,
    /// excluding the output directory.
    pub fn content_hash(&self) -> String {
        let mut clone = self.clone();
        clone.paths.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&clone).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `output_dir/<first 12 hex digits of the content hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.paths.output_dir.join(&self.content_hash()[..12])
    }
}

/// Set a dotted key such as `train.steps=100`. The value is parsed as a TOML
/// value and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {item:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override {key:?}: {part:?} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
