//! Recall@k, NDCG@k and rank correlation.

use serde::{Deserialize, Serialize};

use crate::retrieval::RankingResult;

/// Image-image relevance above this counts as a correct item.
pub const CORRECT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    /// Correct items are candidates with truth above [`CORRECT_THRESHOLD`].
    Image2Image,
    /// The single correct item is the paired candidate at this position.
    Image2Text { paired: usize },
}

/// Recall@k value plus whether the query had no correct item at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recall {
    pub value: f64,
    pub vacuous: bool,
}

/// Fraction of correct items found in the top `k` positions.
///
/// `truth_row` is indexed by candidate position. `k` is clamped to the
/// ranking length. A query with no correct item scores 1.0 and is flagged
/// `vacuous`.
pub fn recall_at_k(ranking: &RankingResult, truth_row: &[f64], k: usize, mode: RecallMode) -> Recall {
    assert!(k >= 1, "k must be >= 1");
    let top = &ranking.ranked[..k.min(ranking.len())];
    match mode {
        RecallMode::Image2Text { paired } => Recall {
            value: if top.contains(&paired) { 1.0 } else { 0.0 },
            vacuous: false,
        },
        RecallMode::Image2Image => {
            let correct = ranking
                .ranked
                .iter()
                .filter(|&&j| truth_row[j] > CORRECT_THRESHOLD)
                .count();
            if correct == 0 {
                return Recall {
                    value: 1.0,
                    vacuous: true,
                };
            }
            let hit = top.iter().filter(|&&j| truth_row[j] > CORRECT_THRESHOLD).count();
            Recall {
                value: hit as f64 / correct as f64,
                vacuous: false,
            }
        }
    }
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with the ranked candidates' truth values as gains.
///
/// Both the predicted and the ideal list are cut at `k`; the ideal list
/// sorts the truth of the ranked candidates in descending order. Returns 1.0
/// when the ideal gain is zero.
pub fn ndcg_at_k(ranking: &RankingResult, truth_row: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let k = k.min(ranking.len());
    let actual = dcg(ranking.ranked[..k].iter().map(|&j| truth_row[j]));
    let mut ideal: Vec<f64> = ranking.ranked.iter().map(|&j| truth_row[j]).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal[..k].iter().copied());
    if best == 0.0 {
        1.0
    } else {
        actual / best
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
///
/// Returns `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
