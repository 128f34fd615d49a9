use super::lexicon::Lexicon;

/// A pure, symmetric text-relevance function with values in `[0, 1]`.
///
/// `prepare` lets implementations parse each text once when a whole matrix
/// is scored.
pub trait Scorer: Sync {
    type Prepared: Send + Sync;

    fn prepare(&self, text: &str) -> Self::Prepared;

    fn compare(&self, a: &Self::Prepared, b: &Self::Prepared) -> f64;

    fn score(&self, a: &str, b: &str) -> f64 {
        self.compare(&self.prepare(a), &self.prepare(b))
    }
}

/// Entity-overlap F1 between two texts.
///
/// Both empty scores 1.0, exactly one empty scores 0.0, otherwise
/// `2 |A ∩ B| / (|A| + |B|)` where mentions match on canonical and polarity.
#[derive(Debug, Clone, Copy)]
pub struct EntityF1Scorer<'a> {
    lexicon: &'a Lexicon,
}

impl<'a> EntityF1Scorer<'a> {
    pub fn new(lexicon: &'a Lexicon) -> Self {
        EntityF1Scorer { lexicon }
    }
}

impl Scorer for EntityF1Scorer<'_> {
    type Prepared = Vec<u32>;

    fn prepare(&self, text: &str) -> Vec<u32> {
        self.lexicon.entity_codes(text)
    }

    fn compare(&self, a: &Vec<u32>, b: &Vec<u32>) -> f64 {
        match (a.is_empty(), b.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let shared = sorted_intersection_len(a, b);
                2.0 * shared as f64 / (a.len() + b.len()) as f64
            }
        }
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Entity-F1 relevance of two texts under `lexicon`.
pub fn score_pair(text_q: &str, text_r: &str, lexicon: &Lexicon) -> f64 {
    EntityF1Scorer::new(lexicon).score(text_q, text_r)
}
