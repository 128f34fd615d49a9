//! Affine dual encoders, contrastive/ranking losses and two-stage training.
//!
//! Stage 1 trains the visual and text encoders on
//! `λ1·MIL(S_i2t, T) + λ2·MIL(S_t2i, T) + λ3·TL(S_i2i, T)`, where MIL is the
//! masked infoNCE of [`masked_infonce`] and TL the mined triplet loss of
//! [`triplet_loss`]. Stage 2 trains the fusion head on `TL(F Fᵀ/temp, T_Q)`
//! per anatomy `Q`, with the encoders frozen by default.
//!
//! All gradients are analytic; `tests/gradients.rs` checks them against
//! central finite differences.

mod checkpoint;
mod encoder;
mod loss;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{sim_matrices, EncoderState, FusionKind, SimMatrices};
pub use loss::{masked_infonce, mine_triplets, triplet_loss, Triplet, EXHAUSTIVE_TRIPLET_MAX_N};
pub use train::{
    stage1_eval_loss, stage1_loss_and_grads, stage2_eval_loss, stage2_loss_and_grads,
    train_stage1, train_stage1_with, train_stage2, CombinedObjective, ConditionData,
    ObjectiveValue, ParamGrads, Stage1Data, Stage1Objective, Stage2Data, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Off-diagonal pairs with truth `>= tau_mask` leave the infoNCE denominator.
    pub tau_mask: f64,
    pub margin: f64,
    /// Minimum truth gap between positive and negative of a mined triplet.
    pub delta_gap: f64,
    /// Triplet sample size for batches above the exhaustive limit.
    pub triplet_cap: usize,
    pub lr: f64,
    pub steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub fusion: FusionKind,
    /// Also update the encoders during stage 2.
    pub stage2_train_encoders: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            tau_mask: 0.9,
            margin: 0.2,
            delta_gap: 0.05,
            triplet_cap: 512,
            lr: 0.05,
            steps: 500,
            stage2_steps: 300,
            batch_size: 16,
            embed_dim: 32,
            temperature: 0.07,
            fusion: FusionKind::Interaction,
            stage2_train_encoders: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let checks = [
            (nonneg(self.lambda1) && nonneg(self.lambda2) && nonneg(self.lambda3), "lambdas must be >= 0"),
            ((0.0..=1.0).contains(&self.tau_mask), "tau_mask must be in [0, 1]"),
            (pos(self.margin), "margin must be > 0"),
            (pos(self.delta_gap), "delta_gap must be > 0"),
            (pos(self.lr), "lr must be > 0"),
            (pos(self.temperature), "temperature must be > 0"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (self.triplet_cap >= 1, "triplet_cap must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }
}
