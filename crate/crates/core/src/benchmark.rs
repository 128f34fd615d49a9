//! Test-split evaluation: image→image, image→text and anatomy-conditioned
//! retrieval, scored with Recall@k and NDCG@k.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, recall_at_k, RecallMode};
use crate::model::{ConditionData, EncoderState};
use crate::relevance::Lexicon;
use crate::retrieval::{condition_embedding, rank, RankingResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Image2Image,
    Image2Text,
    Conditional,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Image2Image => "image2image",
            Task::Image2Text => "image2text",
            Task::Conditional => "conditional",
        }
    }
}

/// One aggregated line of `metrics.json`.
///
/// Conditional records with `condition: None` are the macro average over
/// evaluated anatomies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: Task,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub condition: Option<String>,
    pub num_queries: usize,
    pub num_vacuous: usize,
}

/// Metrics of a single query at a single cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetric {
    pub task: Task,
    pub condition: Option<String>,
    pub query_id: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    /// Requested anatomies with no test query that has a finding.
    pub skipped_conditions: Vec<String>,
    #[serde(skip)]
    pub per_query: Vec<QueryMetric>,
    #[serde(skip)]
    pub rankings: Vec<(Task, RankingResult)>,
}

impl MetricReport {
    pub fn record(&self, task: Task, k: usize, condition: Option<&str>) -> Option<&MetricRecord> {
        self.records
            .iter()
            .find(|r| r.task == task && r.k == k && r.condition.as_deref() == condition)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// `task, query_id, condition, rank, candidate_id, score`, top `max(ks)`
    /// candidates per query.
    pub fn write_rankings_csv<W: Write>(&self, w: W, depth: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["task", "query_id", "condition", "rank", "candidate_id", "score"])?;
        for (task, r) in &self.rankings {
            for (pos, (id, score)) in r.ranked_ids.iter().zip(&r.scores).take(depth).enumerate() {
                out.write_record([
                    task.as_str(),
                    &r.query_id,
                    r.condition.as_deref().unwrap_or(""),
                    &(pos + 1).to_string(),
                    id,
                    &format!("{score:.6}"),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("rankings.csv", e))?;
        Ok(())
    }
}

/// Everything needed to evaluate a trained state. Matrices and feature rows
/// are indexed by corpus row.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkInputs<'a> {
    pub state: &'a EncoderState,
    pub lexicon: &'a Lexicon,
    pub ids: &'a [String],
    pub image: ArrayView2<'a, f64>,
    pub text: ArrayView2<'a, f64>,
    pub truth: ArrayView2<'a, f64>,
    pub conditions: &'a [ConditionData],
    /// Corpus rows used as queries and as the candidate gallery.
    pub test: &'a [usize],
    pub ks: &'a [usize],
}

struct Scored {
    ranking: RankingResult,
    values: Vec<QueryMetric>,
}

fn score_query(
    task: Task,
    ranking: RankingResult,
    truth_row: &[f64],
    mode: RecallMode,
    ks: &[usize],
) -> Scored {
    let values = ks
        .iter()
        .map(|&k| {
            let rec = recall_at_k(&ranking, truth_row, k, mode);
            QueryMetric {
                task,
                condition: ranking.condition.clone(),
                query_id: ranking.query_id.clone(),
                k,
                recall: rec.value,
                ndcg: ndcg_at_k(&ranking, truth_row, k),
                vacuous: rec.vacuous,
            }
        })
        .collect();
    Scored { ranking, values }
}

fn aggregate(task: Task, condition: Option<&str>, ks: &[usize], values: &[QueryMetric]) -> Vec<MetricRecord> {
    ks.iter()
        .filter_map(|&k| {
            let at_k: Vec<&QueryMetric> = values.iter().filter(|m| m.k == k).collect();
            if at_k.is_empty() {
                return None;
            }
            let n = at_k.len() as f64;
            Some(MetricRecord {
                task,
                k,
                recall: at_k.iter().map(|m| m.recall).sum::<f64>() / n,
                ndcg: at_k.iter().map(|m| m.ndcg).sum::<f64>() / n,
                condition: condition.map(str::to_string),
                num_queries: at_k.len(),
                num_vacuous: at_k.iter().filter(|m| m.vacuous).count(),
            })
        })
        .collect()
}

/// Evaluate every test query on every task.
///
/// The gallery is the test split itself; a query never retrieves itself in
/// image→image or conditional tasks. Conditional queries are the test
/// reports that have a finding for that anatomy; anatomies without any are
/// listed in `skipped_conditions`.
pub fn run_benchmark(inputs: BenchmarkInputs<'_>) -> Result<MetricReport> {
    let BenchmarkInputs {
        state,
        lexicon,
        ids,
        image,
        text,
        truth,
        conditions,
        test,
        ks,
    } = inputs;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("ks must be non-empty and >= 1".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let gallery_ids: Vec<String> = test.iter().map(|&i| ids[i].clone()).collect();
    let vemb = state.encode_images(image.select(Axis(0), test).view())?;
    let temb = state.encode_texts(text.select(Axis(0), test).view())?;
    let row_of = |m: ArrayView2<f64>, q: usize| -> Vec<f64> { test.iter().map(|&j| m[[test[q], j]]).collect() };

    let mut records = Vec::new();
    let mut per_query = Vec::new();
    let mut rankings = Vec::new();
    let mut collect = |task: Task, condition: Option<&str>, scored: Vec<Scored>| {
        let values: Vec<QueryMetric> = scored.iter().flat_map(|s| s.values.clone()).collect();
        let recs = aggregate(task, condition, ks, &values);
        records.extend(recs.clone());
        per_query.extend(values);
        rankings.extend(scored.into_iter().map(|s| (task, s.ranking)));
        recs
    };

    if test.len() > 1 {
        let scored = (0..test.len())
            .into_par_iter()
            .map(|q| {
                let r = rank(&ids[test[q]], vemb.row(q), vemb.view(), &gallery_ids, Some(q))?;
                Ok(score_query(Task::Image2Image, r, &row_of(truth, q), RecallMode::Image2Image, ks))
            })
            .collect::<Result<Vec<_>>>()?;
        collect(Task::Image2Image, None, scored);
    } else {
        log::warn!("image2image needs at least 2 test reports; skipped");
    }

    let scored = (0..test.len())
        .into_par_iter()
        .map(|q| {
            let r = rank(&ids[test[q]], vemb.row(q), temb.view(), &gallery_ids, None)?;
            Ok(score_query(
                Task::Image2Text,
                r,
                &row_of(truth, q),
                RecallMode::Image2Text { paired: q },
                ks,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(Task::Image2Text, None, scored);

    let mut skipped = Vec::new();
    let mut per_condition: Vec<Vec<MetricRecord>> = Vec::new();
    for cond in conditions {
        let queries: Vec<usize> = (0..test.len()).filter(|&q| cond.has_finding[test[q]]).collect();
        if queries.is_empty() || test.len() < 2 {
            log::warn!("no test queries for anatomy {:?}", cond.name);
            skipped.push(cond.name.clone());
            continue;
        }
        let q_emb = condition_embedding(state, lexicon, &cond.name)?;
        let fused: Array2<f64> = state.fuse(vemb.view(), q_emb.view())?;
        let scored = queries
            .par_iter()
            .map(|&q| {
                let mut r = rank(&ids[test[q]], fused.row(q), fused.view(), &gallery_ids, Some(q))?;
                r.condition = Some(cond.name.clone());
                Ok(score_query(
                    Task::Conditional,
                    r,
                    &row_of(cond.truth.view(), q),
                    RecallMode::Image2Image,
                    ks,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        per_condition.push(collect(Task::Conditional, Some(&cond.name), scored));
    }
    if !per_condition.is_empty() {
        for (i, &k) in ks.iter().enumerate() {
            let n = per_condition.len() as f64;
            records.push(MetricRecord {
                task: Task::Conditional,
                k,
                recall: per_condition.iter().map(|r| r[i].recall).sum::<f64>() / n,
                ndcg: per_condition.iter().map(|r| r[i].ndcg).sum::<f64>() / n,
                condition: None,
                num_queries: per_condition.iter().map(|r| r[i].num_queries).sum(),
                num_vacuous: per_condition.iter().map(|r| r[i].num_vacuous).sum(),
            });
        }
    }
    Ok(MetricReport {
        records,
        skipped_conditions: skipped,
        per_query,
        rankings,
    })
}
