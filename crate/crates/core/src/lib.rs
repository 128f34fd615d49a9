//! Anatomy-conditioned retrieval workbench.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`corpus`] loads or synthesizes report corpora (JSON-lines on disk).
//! 2. [`terminology`] and [`decomposition`] split reports into sentences and
//!    link them to anatomical structures, merging substructures into parents.
//! 3. [`relevance`] scores report pairs with a pluggable scorer and materializes
//!    dense ground-truth similarity matrices (global and per anatomy).
//! 4. [`model`] trains affine dual encoders with a masked infoNCE + triplet
//!    objective, then a fusion head for anatomy-conditioned retrieval.
//! 5. [`retrieval`] and [`metrics`] rank candidates and score rankings with
//!    Recall@k and NDCG@k; [`benchmark`] aggregates them over a test split.
//!
//! [`config`] and [`pipeline`] tie the stages together behind a single run
//! configuration; the `radbench` binary is a thin wrapper around them.

pub mod benchmark;
pub mod config;
pub mod corpus;
pub mod decomposition;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod relevance;
pub mod retrieval;
pub mod terminology;
pub mod text;

pub use error::{Error, Result};
