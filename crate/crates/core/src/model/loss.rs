//! Masked infoNCE and mined triplet ranking loss, with analytic gradients.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;

/// Batches up to this size enumerate every valid triplet.
pub const EXHAUSTIVE_TRIPLET_MAX_N: usize = 16;

/// Masked infoNCE over a square score matrix.
///
/// Row `i`'s denominator keeps the diagonal and every `j` with
/// `t[i][j] < tau`; likely positives (`t >= tau`) are left out instead of
/// being pushed away. Returns the mean loss over rows and `dL/dS`.
pub fn masked_infonce(s: ArrayView2<f64>, t: ArrayView2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let n = s.nrows();
    assert_eq!(s.dim(), (n, n), "score matrix must be square");
    assert_eq!(t.dim(), (n, n), "truth matrix must match scores");
    let mut grad = Array2::zeros((n, n));
    if n == 0 {
        return (0.0, grad);
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let keep = |j: usize| j == i || t[[i, j]] < tau;
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| s[[i, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&j| keep(j))
            .map(|j| (s[[i, j]] - max).exp())
            .sum();
        let lse = max + denom.ln();
        total += lse - s[[i, i]];
        for j in (0..n).filter(|&j| keep(j)) {
            grad[[i, j]] = (s[[i, j]] - lse).exp() * inv_n;
        }
        grad[[i, i]] -= inv_n;
    }
    (total * inv_n, grad)
}

/// An ordered triplet: anchor, more-relevant item, less-relevant item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Triplets `(i, j, k)` with distinct indices and `t[i][j] >= t[i][k] + gap`.
///
/// Batches of at most [`EXHAUSTIVE_TRIPLET_MAX_N`] rows return every valid
/// triplet. Larger batches return a uniform sample of at most `cap`
/// triplets, in enumeration order.
pub fn mine_triplets<R: Rng + ?Sized>(
    t: ArrayView2<f64>,
    gap: f64,
    cap: usize,
    rng: &mut R,
) -> Vec<Triplet> {
    let n = t.nrows();
    let mut all = Vec::new();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for k in (0..n).filter(|&k| k != i && k != j) {
                if t[[i, j]] >= t[[i, k]] + gap {
                    all.push(Triplet {
                        anchor: i,
                        positive: j,
                        negative: k,
                    });
                }
            }
        }
    }
    if n <= EXHAUSTIVE_TRIPLET_MAX_N || all.len() <= cap {
        return all;
    }
    let mut picked = sample(rng, all.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|p| all[p]).collect()
}

/// Mean hinge `max(0, margin + s[i][k] - s[i][j])` over mined triplets.
///
/// Zero when no triplet is valid. The subgradient is zero at the hinge.
pub fn triplet_loss<R: Rng + ?Sized>(
    s: ArrayView2<f64>,
    t: ArrayView2<f64>,
    margin: f64,
    gap: f64,
    cap: usize,
    rng: &mut R,
) -> (f64, Array2<f64>) {
    let n = s.nrows();
    assert_eq!(s.dim(), (n, n), "score matrix must be square");
    assert_eq!(t.dim(), (n, n), "truth matrix must match scores");
    let triplets = mine_triplets(t, gap, cap, rng);
    let mut grad = Array2::zeros((n, n));
    if triplets.is_empty() {
        return (0.0, grad);
    }
    let w = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for tr in &triplets {
        let h = margin + s[[tr.anchor, tr.negative]] - s[[tr.anchor, tr.positive]];
        if h > 0.0 {
            total += h;
            grad[[tr.anchor, tr.negative]] += w;
            grad[[tr.anchor, tr.positive]] -= w;
        }
    }
    (total * w, grad)
}
