//! Config-driven commands. Every artifact lands in the run directory.
//!
//! ```text
//! <run>/corpus.jsonl          gen-synthetic (unless paths.corpus is set)
//! <run>/findings.jsonl        decompose
//! <run>/finding_counts.json   decompose
//! <run>/matrices/*.rirm       score (global + one per condition)
//! <run>/checkpoint.ricp       train
//! <run>/train_trace.json      train
//! <run>/metrics.json          eval
//! <run>/rankings.csv          eval
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::benchmark::{run_benchmark, BenchmarkInputs, MetricReport};
use crate::config::{RunConfig, Split};
use crate::corpus::{generate_synthetic, load_corpus, write_corpus, Corpus};
use crate::decomposition::{decompose_corpus, DecomposedCorpus};
use crate::error::{Error, Result};
use crate::model::{
    stage1_eval_loss, stage2_eval_loss, train_stage1, train_stage2, Checkpoint, ConditionData,
    EncoderState, Stage1Data, Stage2Data,
};
use crate::relevance::{build_matrix_with_workers, EntityF1Scorer, Lexicon, MatrixSource, SimilarityMatrix};
use crate::retrieval::{conditional_rank, rank, RankingResult};
use crate::terminology::Terminology;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const FINDINGS_FILE: &str = "findings.jsonl";
pub const COUNTS_FILE: &str = "finding_counts.json";
pub const MATRIX_DIR: &str = "matrices";
pub const CHECKPOINT_FILE: &str = "checkpoint.ricp";
pub const TRACE_FILE: &str = "train_trace.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RANKINGS_FILE: &str = "rankings.csv";

/// A resolved config plus its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: RunConfig) -> Self {
        let dir = config.run_dir();
        Run { config, dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let cfg = self.path("config.json");
        let json = serde_json::to_string_pretty(&self.config)? + "\n";
        std::fs::write(&cfg, json).map_err(|e| Error::io(cfg, e))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.config
            .paths
            .corpus
            .clone()
            .unwrap_or_else(|| self.path(CORPUS_FILE))
    }

    pub fn terminology(&self) -> Result<Terminology> {
        Terminology::load(&self.config.paths.terminology)
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        Lexicon::load(self.terminology()?, &self.config.paths.lexicon)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let path = self.corpus_path();
        if !path.exists() {
            return Err(missing(path, "run gen-synthetic or set paths.corpus"));
        }
        load_corpus(path)
    }

    pub fn findings(&self, corpus: &Corpus) -> Result<DecomposedCorpus> {
        let path = self.path(FINDINGS_FILE);
        if !path.exists() {
            return Err(missing(path, "run decompose first"));
        }
        DecomposedCorpus::read_jsonl(path, corpus)
    }

    pub fn global_matrix_path(&self) -> PathBuf {
        self.dir.join(MATRIX_DIR).join("global.rirm")
    }

    pub fn condition_matrix_path(&self, anatomy: &str) -> PathBuf {
        self.dir.join(MATRIX_DIR).join(format!("cond-{}.rirm", slug(anatomy)))
    }

    fn matrix(&self, path: PathBuf, corpus: &Corpus) -> Result<SimilarityMatrix> {
        if !path.exists() {
            return Err(missing(path, "run score first"));
        }
        let m = SimilarityMatrix::read(&path)?;
        if m.row_ids() != corpus.ids().as_slice() || m.col_ids() != m.row_ids() {
            return Err(Error::DimMismatch(format!(
                "{} does not match the corpus report ids",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self.path(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(missing(path, "run train first"));
        }
        Checkpoint::load(path)
    }
}

fn missing(path: PathBuf, hint: &str) -> Error {
    Error::MissingArtifact {
        path,
        hint: hint.into(),
    }
}

/// File-name-safe form of an anatomy name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Bag-of-entity text features, one row per report.
pub fn text_features(corpus: &Corpus, lexicon: &Lexicon) -> Array2<f64> {
    let dim = lexicon.feature_dim();
    let mut out = Array2::zeros((corpus.len(), dim));
    for (mut row, r) in out.axis_iter_mut(Axis(0)).zip(corpus.reports()) {
        row.assign(&Array1::from(lexicon.bag_of_entities(&r.text)));
    }
    out
}

/// Stage-2 / conditional-eval inputs for one anatomy.
pub fn condition_data(
    lexicon: &Lexicon,
    anatomy: &str,
    matrix: &SimilarityMatrix,
    findings: &DecomposedCorpus,
) -> Result<ConditionData> {
    if !lexicon.terminology().contains(anatomy) {
        return Err(Error::UnknownAnatomy(anatomy.to_string()));
    }
    Ok(ConditionData {
        name: anatomy.to_string(),
        features: Array1::from(lexicon.bag_of_entities(anatomy)),
        truth: matrix.to_array(),
        has_finding: findings.has_finding(anatomy),
    })
}

/// Write a synthetic corpus to the run directory.
pub fn cmd_gen_synthetic(run: &Run) -> Result<PathBuf> {
    let spec = run
        .config
        .synthetic
        .clone()
        .ok_or_else(|| Error::InvalidConfig("config has no [synthetic] section".into()))?;
    run.prepare()?;
    let corpus = generate_synthetic(&spec, &run.lexicon()?)?;
    let path = run.path(CORPUS_FILE);
    write_corpus(&corpus, &path)?;
    log::info!("wrote {} synthetic reports to {}", corpus.len(), path.display());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingCounts {
    pub reports: usize,
    pub total: usize,
    pub per_anatomy: BTreeMap<String, usize>,
}

/// Decompose the corpus into regional findings.
pub fn cmd_decompose(run: &Run) -> Result<FindingCounts> {
    let terminology = run.terminology()?;
    let corpus = run.corpus()?;
    run.prepare()?;
    let findings = decompose_corpus(&corpus, &terminology);
    findings.write_jsonl(run.path(FINDINGS_FILE))?;
    let counts = FindingCounts {
        reports: corpus.len(),
        total: findings.total(),
        per_anatomy: findings.counts().clone(),
    };
    let path = run.path(COUNTS_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&counts)? + "\n").map_err(|e| Error::io(path, e))?;
    Ok(counts)
}

/// Build the global matrix and one matrix per configured condition.
pub fn cmd_score(run: &Run) -> Result<Vec<PathBuf>> {
    let lexicon = run.lexicon()?;
    for c in &run.config.conditions {
        if !lexicon.terminology().contains(c) {
            return Err(Error::UnknownAnatomy(c.clone()));
        }
    }
    let corpus = run.corpus()?;
    let findings = if run.config.conditions.is_empty() {
        None
    } else {
        Some(run.findings(&corpus)?)
    };
    run.prepare()?;
    let dir = run.dir.join(MATRIX_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let scorer = EntityF1Scorer::new(&lexicon);
    let workers = run.config.workers;
    let mut written = Vec::new();
    let global = build_matrix_with_workers(MatrixSource::Global(&corpus), &scorer, workers)?;
    global.write(run.global_matrix_path())?;
    written.push(run.global_matrix_path());
    if let Some(findings) = &findings {
        for anatomy in &run.config.conditions {
            let source = MatrixSource::Conditional {
                findings,
                terminology: lexicon.terminology(),
                anatomy,
            };
            let m = build_matrix_with_workers(source, &scorer, workers)?;
            let path = run.condition_matrix_path(anatomy);
            m.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Loss traces plus full-pool objective values before and after each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub stage1_initial: f64,
    pub stage1_final: f64,
    pub stage2_initial: f64,
    pub stage2_final: f64,
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
}

struct Loaded {
    lexicon: Lexicon,
    corpus: Corpus,
    split: Split,
    image: Array2<f64>,
    text: Array2<f64>,
    truth: Array2<f64>,
    conditions: Vec<ConditionData>,
}

fn load_for_model(run: &Run) -> Result<Loaded> {
    let lexicon = run.lexicon()?;
    let corpus = run.corpus()?;
    let split = run.config.split.resolve(&corpus)?;
    let image = corpus.feature_matrix()?;
    let text = text_features(&corpus, &lexicon);
    let truth = run.matrix(run.global_matrix_path(), &corpus)?.to_array();
    let mut conditions = Vec::new();
    if !run.config.conditions.is_empty() {
        let findings = run.findings(&corpus)?;
        for anatomy in &run.config.conditions {
            let m = run.matrix(run.condition_matrix_path(anatomy), &corpus)?;
            conditions.push(condition_data(&lexicon, anatomy, &m, &findings)?);
        }
    }
    Ok(Loaded {
        lexicon,
        corpus,
        split,
        image,
        text,
        truth,
        conditions,
    })
}

/// Train both stages and write the checkpoint and loss trace.
pub fn cmd_train(run: &Run) -> Result<TrainTrace> {
    let cfg = &run.config.train;
    let data = load_for_model(run)?;
    run.prepare()?;
    let init = EncoderState::init(
        data.image.ncols(),
        data.text.ncols(),
        cfg.embed_dim,
        cfg.temperature,
        cfg.fusion,
        cfg.seed,
    )?;
    let stage1 = Stage1Data {
        image: data.image.view(),
        text: data.text.view(),
        truth: data.truth.view(),
        train: &data.split.train,
    };
    let stage1_initial = stage1_eval_loss(&init, stage1, cfg)?;
    let s1 = train_stage1(init, stage1, cfg)?;
    let stage1_final = stage1_eval_loss(&s1.state, stage1, cfg)?;
    log::info!("stage 1: {stage1_initial:.4} -> {stage1_final:.4}");

    let stage2 = Stage2Data {
        image: data.image.view(),
        conditions: &data.conditions,
        train: &data.split.train,
    };
    let stage2_initial = stage2_eval_loss(&s1.state, stage2, cfg)?;
    let s2 = train_stage2(s1.state, stage2, cfg)?;
    let stage2_final = stage2_eval_loss(&s2.state, stage2, cfg)?;
    log::info!("stage 2: {stage2_initial:.4} -> {stage2_final:.4}");

    Checkpoint::new(s2.state, cfg).save(run.path(CHECKPOINT_FILE))?;
    let trace = TrainTrace {
        stage1_initial,
        stage1_final,
        stage2_initial,
        stage2_final,
        stage1: s1.trace,
        stage2: s2.trace,
    };
    let path = run.path(TRACE_FILE);
    std::fs::write(&path, serde_json::to_string(&trace)? + "\n").map_err(|e| Error::io(path, e))?;
    Ok(trace)
}

/// Evaluate the checkpoint on the test split; writes metrics.json and rankings.csv.
pub fn cmd_eval(run: &Run) -> Result<MetricReport> {
    let checkpoint = run.checkpoint()?;
    let data = load_for_model(run)?;
    run.prepare()?;
    let ids = data.corpus.ids();
    let report = run_benchmark(BenchmarkInputs {
        state: &checkpoint.state,
        lexicon: &data.lexicon,
        ids: &ids,
        image: data.image.view(),
        text: data.text.view(),
        truth: data.truth.view(),
        conditions: &data.conditions,
        test: &data.split.test,
        ks: &run.config.eval.ks,
    })?;
    report.write_json(run.path(METRICS_FILE))?;
    let path = run.path(RANKINGS_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let depth = *run.config.eval.ks.last().expect("ks validated non-empty");
    report.write_rankings_csv(std::io::BufWriter::new(file), depth)?;
    Ok(report)
}

/// Ad-hoc image query against every other report in the corpus.
pub fn cmd_retrieve(run: &Run, query_id: &str, condition: Option<&str>, k: usize) -> Result<RankingResult> {
    let checkpoint = run.checkpoint()?;
    let lexicon = run.lexicon()?;
    let corpus = run.corpus()?;
    let q = corpus
        .index_of(query_id)
        .ok_or_else(|| Error::UnknownReport(query_id.to_string()))?;
    let image = corpus.feature_matrix()?;
    let ids = corpus.ids();
    let state = &checkpoint.state;
    let mut result = match condition {
        Some(c) => conditional_rank(state, &lexicon, query_id, image.row(q), c, image.view(), &ids, Some(q))?,
        None => {
            let v = state.encode_images(image.view())?;
            rank(query_id, v.row(q), v.view(), &ids, Some(q))?
        }
    };
    result.truncate(k.max(1));
    Ok(result)
}

/// Run every stage in order.
pub fn cmd_all(run: &Run) -> Result<MetricReport> {
    if run.config.paths.corpus.is_none() {
        cmd_gen_synthetic(run)?;
    }
    cmd_decompose(run)?;
    cmd_score(run)?;
    cmd_train(run)?;
    cmd_eval(run)
}
