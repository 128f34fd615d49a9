//! Pairwise report relevance and ground-truth similarity matrices.
//!
//! Relevance between two texts comes from a [`Scorer`]. The built-in
//! [`EntityF1Scorer`] extracts lexicon entities with sentence-level negation
//! and compares them as sets; externally computed scores can be brought in
//! through the `RIRM` binary format with [`import_scores`].

pub(crate) mod lexicon;
mod matrix;
mod scorer;

pub use lexicon::{
    AbnormalityRecord, EntityKind, EntityMention, Lexicon, LexiconEntry, LexiconFile, Polarity,
    NEGATION_CUES,
};
pub use matrix::{
    build_matrix, build_matrix_with_workers, import_scores, sidecar_path, MatrixSource, Sidecar,
    SimilarityMatrix, RIRM_MAGIC, RIRM_VERSION,
};
pub use scorer::{score_pair, EntityF1Scorer, Scorer};
