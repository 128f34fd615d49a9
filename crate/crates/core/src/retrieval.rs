//! Exhaustive dot-product ranking, plain and anatomy-conditioned.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::EncoderState;
use crate::relevance::Lexicon;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingResult {
    pub query_id: String,
    pub condition: Option<String>,
    /// Candidate positions, best first.
    pub ranked: Vec<usize>,
    pub ranked_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankingResult {
    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.ranked.truncate(k);
        self.ranked_ids.truncate(k);
        self.scores.truncate(k);
    }
}

/// Rank every candidate row by dot product with `query`.
///
/// Scores are non-increasing; equal scores keep ascending candidate order.
/// `exclude_self` drops that candidate position from the result.
pub fn rank(
    query_id: &str,
    query: ArrayView1<f64>,
    candidates: ArrayView2<f64>,
    ids: &[String],
    exclude_self: Option<usize>,
) -> Result<RankingResult> {
    if candidates.nrows() != ids.len() {
        return Err(Error::DimMismatch(format!(
            "{} candidate rows but {} ids",
            candidates.nrows(),
            ids.len()
        )));
    }
    if candidates.ncols() != query.len() {
        return Err(Error::DimMismatch(format!(
            "query has {} dims, candidates {}",
            query.len(),
            candidates.ncols()
        )));
    }
    let scores = candidates.dot(&query);
    let mut order: Vec<usize> = (0..ids.len()).filter(|&j| Some(j) != exclude_self).collect();
    if order.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    // stable sort keeps ascending index among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(RankingResult {
        query_id: query_id.to_string(),
        condition: None,
        ranked_ids: order.iter().map(|&j| ids[j].clone()).collect(),
        scores: order.iter().map(|&j| scores[j]).collect(),
        ranked: order,
    })
}

/// Rank image candidates for an image query under an anatomy condition.
///
/// Both the query and the candidates go through the fusion head with the
/// encoded anatomy name before ranking. `query_features` and
/// `candidate_features` are raw image features.
#[allow(clippy::too_many_arguments)]
pub fn conditional_rank(
    state: &EncoderState,
    lexicon: &Lexicon,
    query_id: &str,
    query_features: ArrayView1<f64>,
    condition: &str,
    candidate_features: ArrayView2<f64>,
    ids: &[String],
    exclude_self: Option<usize>,
) -> Result<RankingResult> {
    let q_emb = condition_embedding(state, lexicon, condition)?;
    let qv = state.encode_images(query_features.insert_axis(Axis(0)))?;
    let fq = state.fuse(qv.view(), q_emb.view())?;
    let cv = state.encode_images(candidate_features)?;
    let fc = state.fuse(cv.view(), q_emb.view())?;
    let mut out = rank(query_id, fq.row(0), fc.view(), ids, exclude_self)?;
    out.condition = Some(condition.to_string());
    Ok(out)
}

/// Text-encoded embedding of an anatomy name.
pub fn condition_embedding(
    state: &EncoderState,
    lexicon: &Lexicon,
    condition: &str,
) -> Result<ndarray::Array1<f64>> {
    if !lexicon.terminology().contains(condition) {
        return Err(Error::UnknownAnatomy(condition.to_string()));
    }
    let features = ndarray::Array1::from(lexicon.bag_of_entities(condition));
    state.encode_condition(features.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn single_candidate() {
        let r = rank("q", array![1.0, 0.0].view(), array![[0.0, 1.0]].view(), &ids(1), None).unwrap();
        assert_eq!(r.ranked_ids, vec!["c0"]);
    }

    #[test]
    fn matching_candidate_first() {
        let c = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let r = rank("q", array![1.0, 0.0, 0.0].view(), c.view(), &ids(3), None).unwrap();
        assert_eq!(r.ranked[0], 1);
        assert_eq!(r.scores[0], 1.0);
    }

    #[test]
    fn ties_keep_index_order_and_self_is_excluded() {
        let c = Array2::from_elem((4, 2), 0.5);
        let r = rank("q", array![1.0, 0.0].view(), c.view(), &ids(4), Some(1)).unwrap();
        assert_eq!(r.ranked, vec![0, 2, 3]);
    }

    #[test]
    fn empty_candidates() {
        let c = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            rank("q", array![1.0, 0.0].view(), c.view(), &[], None),
            Err(Error::EmptyCandidates)
        ));
        let c = Array2::<f64>::zeros((1, 2));
        assert!(matches!(
            rank("q", array![1.0, 0.0].view(), c.view(), &ids(1), Some(0)),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn unknown_condition() {
        let lex = crate::relevance::lexicon::tests::fixture();
        let state = EncoderState::init(3, lex.feature_dim(), 4, 0.07, Default::default(), 1).unwrap();
        let c = Array2::from_elem((2, 3), 1.0);
        let err = conditional_rank(&state, &lex, "q", array![1.0, 0.0, 0.0].view(), "flipper", c.view(), &ids(2), None);
        assert!(matches!(err, Err(Error::UnknownAnatomy(_))));
    }

    proptest! {
        #[test]
        fn matches_argsort_oracle(vals in proptest::collection::vec(-3i32..3, 20 * 3), q in proptest::collection::vec(-3i32..3, 3)) {
            // small integers give plenty of exact ties
            let c = Array2::from_shape_vec((20, 3), vals.iter().map(|&x| x as f64).collect()).unwrap();
            let q = ndarray::Array1::from(q.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let r = rank("q", q.view(), c.view(), &ids(20), None).unwrap();
            let dots: Vec<f64> = (0..20).map(|j| (0..3).map(|d| c[[j, d]] * q[d]).sum()).collect();
            let mut expected: Vec<usize> = (0..20).collect();
            for a in 0..20 {
                for b in 0..19 - a {
                    let (x, y) = (expected[b], expected[b + 1]);
                    if dots[y] > dots[x] {
                        expected.swap(b, b + 1);
                    }
                }
            }
            prop_assert_eq!(&r.ranked, &expected);
            prop_assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn permutation_equivariant(vals in proptest::collection::vec(-1.0f64..1.0, 8 * 2), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let c = Array2::from_shape_vec((8, 2), vals).unwrap();
            let names = ids(8);
            let mut perm: Vec<usize> = (0..8).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cp = c.select(Axis(0), &perm);
            let np: Vec<String> = perm.iter().map(|&p| names[p].clone()).collect();
            let q = array![0.6, -0.8];
            let a = rank("q", q.view(), c.view(), &names, None).unwrap();
            let b = rank("q", q.view(), cp.view(), &np, None).unwrap();
            // continuous draws: ties have probability zero
            prop_assert_eq!(a.ranked_ids, b.ranked_ids);
        }
    }
}
