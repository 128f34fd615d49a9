use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{
    affine_normalize, fusion_input, fusion_input_backward, normalize_backward, sim_matrices,
    EncoderState, SimMatrices,
};
use super::loss::{masked_infonce, triplet_loss};
use super::TrainConfig;
use crate::error::{Error, Result};

/// Gradients for every parameter block of an [`EncoderState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w_visual: Array2<f64>,
    pub b_visual: Array1<f64>,
    pub w_text: Array2<f64>,
    pub b_text: Array1<f64>,
    pub w_fusion: Array2<f64>,
    pub b_fusion: Array1<f64>,
}

impl ParamGrads {
    pub fn zeros_like(s: &EncoderState) -> Self {
        ParamGrads {
            w_visual: Array2::zeros(s.w_visual.dim()),
            b_visual: Array1::zeros(s.b_visual.len()),
            w_text: Array2::zeros(s.w_text.dim()),
            b_text: Array1::zeros(s.b_text.len()),
            w_fusion: Array2::zeros(s.w_fusion.dim()),
            b_fusion: Array1::zeros(s.b_fusion.len()),
        }
    }
}

fn step_encoders(state: &mut EncoderState, g: &ParamGrads, lr: f64) {
    state.w_visual.scaled_add(-lr, &g.w_visual);
    state.b_visual.scaled_add(-lr, &g.b_visual);
    state.w_text.scaled_add(-lr, &g.w_text);
    state.b_text.scaled_add(-lr, &g.b_text);
}

fn step_fusion(state: &mut EncoderState, g: &ParamGrads, lr: f64) {
    state.w_fusion.scaled_add(-lr, &g.w_fusion);
    state.b_fusion.scaled_add(-lr, &g.b_fusion);
}

/// A batch objective over the three stage-1 similarity matrices.
pub trait Stage1Objective {
    fn evaluate(&self, sims: &SimMatrices, truth: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> ObjectiveValue;
}

/// Loss value and its gradient with respect to each similarity matrix.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub d_i2t: Array2<f64>,
    pub d_t2i: Array2<f64>,
    pub d_i2i: Array2<f64>,
}

/// `λ1·MIL(S_i2t, T) + λ2·MIL(S_t2i, T) + λ3·TL(S_i2i, T)`.
#[derive(Debug, Clone)]
pub struct CombinedObjective {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau_mask: f64,
    pub margin: f64,
    pub delta_gap: f64,
    pub triplet_cap: usize,
}

impl From<&TrainConfig> for CombinedObjective {
    fn from(c: &TrainConfig) -> Self {
        CombinedObjective {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3: c.lambda3,
            tau_mask: c.tau_mask,
            margin: c.margin,
            delta_gap: c.delta_gap,
            triplet_cap: c.triplet_cap,
        }
    }
}

impl Stage1Objective for CombinedObjective {
    fn evaluate(&self, sims: &SimMatrices, truth: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> ObjectiveValue {
        let (l1, g1) = masked_infonce(sims.i2t.view(), truth, self.tau_mask);
        // S_t2i rows are texts, so its mask is the transposed truth
        let (l2, g2) = masked_infonce(sims.t2i.view(), truth.t(), self.tau_mask);
        let (l3, g3) = if self.lambda3 != 0.0 {
            triplet_loss(
                sims.i2i.view(),
                truth,
                self.margin,
                self.delta_gap,
                self.triplet_cap,
                rng,
            )
        } else {
            (0.0, Array2::zeros(sims.i2i.dim()))
        };
        ObjectiveValue {
            loss: self.lambda1 * l1 + self.lambda2 * l2 + self.lambda3 * l3,
            d_i2t: g1 * self.lambda1,
            d_t2i: g2 * self.lambda2,
            d_i2i: g3 * self.lambda3,
        }
    }
}

/// Stage-1 loss on one batch and its gradient with respect to the encoders.
pub fn stage1_loss_and_grads<O: Stage1Objective + ?Sized>(
    state: &EncoderState,
    image: ArrayView2<f64>,
    text: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    objective: &O,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamGrads)> {
    let temp = state.temperature;
    let (vemb, v_norms) = affine_normalize(image, &state.w_visual, &state.b_visual)?;
    let (temb, t_norms) = affine_normalize(text, &state.w_text, &state.b_text)?;
    let sims = sim_matrices(vemb.view(), temb.view(), temp);
    let value = objective.evaluate(&sims, truth, rng);

    let d_vt = &value.d_i2t + &value.d_t2i.t();
    let d_ii = &value.d_i2i + &value.d_i2i.t();
    let d_vemb = (d_vt.dot(&temb) + d_ii.dot(&vemb)) / temp;
    let d_temb = d_vt.t().dot(&vemb) / temp;

    let dz_v = normalize_backward(vemb.view(), v_norms.view(), d_vemb.view());
    let dz_t = normalize_backward(temb.view(), t_norms.view(), d_temb.view());
    let mut grads = ParamGrads::zeros_like(state);
    grads.w_visual = image.t().dot(&dz_v);
    grads.b_visual = dz_v.sum_axis(Axis(0));
    grads.w_text = text.t().dot(&dz_t);
    grads.b_text = dz_t.sum_axis(Axis(0));
    Ok((value.loss, grads))
}

/// Stage-2 loss `TL(F Fᵀ / temp, T_Q)` on one batch and its gradient with
/// respect to every parameter (the caller decides what to update).
pub fn stage2_loss_and_grads(
    state: &EncoderState,
    image: ArrayView2<f64>,
    condition_features: ArrayView1<f64>,
    truth: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamGrads)> {
    let temp = state.temperature;
    let (vemb, v_norms) = affine_normalize(image, &state.w_visual, &state.b_visual)?;
    let q_in = condition_features.insert_axis(Axis(0));
    let (q_mat, q_norms) = affine_normalize(q_in, &state.w_text, &state.b_text)?;
    let q_emb = q_mat.row(0);
    let input = fusion_input(state.fusion, vemb.view(), q_emb);
    let (fused, f_norms) = affine_normalize(input.view(), &state.w_fusion, &state.b_fusion)?;
    let s = fused.dot(&fused.t()) / temp;
    let (loss, d_s) = triplet_loss(
        s.view(),
        truth,
        cfg.margin,
        cfg.delta_gap,
        cfg.triplet_cap,
        rng,
    );

    let d_fused = (&d_s + &d_s.t()).dot(&fused) / temp;
    let dz_f = normalize_backward(fused.view(), f_norms.view(), d_fused.view());
    let mut grads = ParamGrads::zeros_like(state);
    grads.w_fusion = input.t().dot(&dz_f);
    grads.b_fusion = dz_f.sum_axis(Axis(0));

    let d_input = dz_f.dot(&state.w_fusion.t());
    let (d_vemb, d_q) = fusion_input_backward(state.fusion, vemb.view(), q_emb, d_input.view());
    let dz_v = normalize_backward(vemb.view(), v_norms.view(), d_vemb.view());
    grads.w_visual = image.t().dot(&dz_v);
    grads.b_visual = dz_v.sum_axis(Axis(0));
    let d_q = d_q.insert_axis(Axis(0));
    let dz_q = normalize_backward(q_mat.view(), q_norms.view(), d_q.view());
    grads.w_text = q_in.t().dot(&dz_q);
    grads.b_text = dz_q.sum_axis(Axis(0));
    Ok((loss, grads))
}

/// Inputs for stage 1. `truth` is indexed by corpus row, like `image` and `text`.
#[derive(Debug, Clone, Copy)]
pub struct Stage1Data<'a> {
    pub image: ArrayView2<'a, f64>,
    pub text: ArrayView2<'a, f64>,
    pub truth: ArrayView2<'a, f64>,
    /// Corpus rows used for training.
    pub train: &'a [usize],
}

/// One anatomy's stage-2 inputs.
#[derive(Debug, Clone)]
pub struct ConditionData {
    pub name: String,
    /// Text features of the anatomy name.
    pub features: Array1<f64>,
    /// Conditional truth matrix indexed by corpus row.
    pub truth: Array2<f64>,
    /// Whether each corpus row has a regional finding for this anatomy.
    pub has_finding: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct Stage2Data<'a> {
    pub image: ArrayView2<'a, f64>,
    pub conditions: &'a [ConditionData],
    pub train: &'a [usize],
}

/// Final parameters and the per-step batch loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: EncoderState,
    pub trace: Vec<f64>,
}

/// Cycles through seeded permutations of a row pool, `size` rows at a time.
struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl BatchSampler {
    fn new(pool: &[usize], batch_size: usize) -> Result<Self> {
        if pool.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 training rows, got {}",
                pool.len()
            )));
        }
        Ok(BatchSampler {
            pool: pool.to_vec(),
            order: Vec::new(),
            pos: 0,
            size: batch_size.min(pool.len()),
        })
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.pos + self.size > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        batch
    }
}

fn rows(m: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

fn square(m: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| m[[idx[a], idx[b]]])
}

fn check_finite(step: usize, loss: f64, state: &EncoderState) -> Result<()> {
    if !loss.is_finite() || !state.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss });
    }
    Ok(())
}

/// Stage 1 with the default combined objective.
pub fn train_stage1(state: EncoderState, data: Stage1Data<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_stage1_with(state, data, cfg, &CombinedObjective::from(cfg))
}

/// Plain mini-batch gradient descent on any stage-1 objective.
pub fn train_stage1_with<O: Stage1Objective + ?Sized>(
    mut state: EncoderState,
    data: Stage1Data<'_>,
    cfg: &TrainConfig,
    objective: &O,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome { state, trace });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = BatchSampler::new(data.train, cfg.batch_size)?;
    for step in 0..cfg.steps {
        let batch = sampler.next(&mut rng);
        let v = rows(data.image, &batch);
        let x = rows(data.text, &batch);
        let t = square(data.truth, &batch);
        let (loss, grads) = stage1_loss_and_grads(&state, v.view(), x.view(), t.view(), objective, &mut rng)?;
        step_encoders(&mut state, &grads, cfg.lr);
        check_finite(step, loss, &state)?;
        log::debug!("stage1 step {step}: loss {loss:.6}");
        trace.push(loss);
    }
    Ok(TrainOutcome { state, trace })
}

/// Stage-1 objective on the whole training pool (one deterministic pass).
pub fn stage1_eval_loss(state: &EncoderState, data: Stage1Data<'_>, cfg: &TrainConfig) -> Result<f64> {
    let v = rows(data.image, data.train);
    let x = rows(data.text, data.train);
    let t = square(data.truth, data.train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objective = CombinedObjective::from(cfg);
    Ok(stage1_loss_and_grads(state, v.view(), x.view(), t.view(), &objective, &mut rng)?.0)
}

/// Conditions that can form at least one triplet on the training rows.
fn eligible_conditions<'a>(data: &Stage2Data<'a>) -> Vec<&'a ConditionData> {
    data.conditions
        .iter()
        .filter(|c| {
            let n = data.train.iter().filter(|&&i| c.has_finding[i]).count();
            if n < 3 {
                log::warn!(
                    "skipping anatomy {:?}: only {n} training reports have findings",
                    c.name
                );
                false
            } else {
                true
            }
        })
        .collect()
}

/// Stage 2: train the fusion head on per-anatomy triplet losses.
///
/// Steps cycle through the eligible anatomies in order. The encoders stay
/// frozen unless `cfg.stage2_train_encoders` is set.
pub fn train_stage2(mut state: EncoderState, data: Stage2Data<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.stage2_steps);
    if cfg.stage2_steps == 0 {
        return Ok(TrainOutcome { state, trace });
    }
    let conditions = eligible_conditions(&data);
    if conditions.is_empty() {
        log::warn!("no anatomy has enough findings for stage 2; fusion head left untouched");
        return Ok(TrainOutcome { state, trace });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut sampler = BatchSampler::new(data.train, cfg.batch_size)?;
    for step in 0..cfg.stage2_steps {
        let cond = conditions[step % conditions.len()];
        let batch = sampler.next(&mut rng);
        let v = rows(data.image, &batch);
        let t = square(cond.truth.view(), &batch);
        let (loss, grads) = stage2_loss_and_grads(&state, v.view(), cond.features.view(), t.view(), cfg, &mut rng)?;
        step_fusion(&mut state, &grads, cfg.lr);
        if cfg.stage2_train_encoders {
            step_encoders(&mut state, &grads, cfg.lr);
        }
        check_finite(step, loss, &state)?;
        log::debug!("stage2 step {step} ({}): loss {loss:.6}", cond.name);
        trace.push(loss);
    }
    Ok(TrainOutcome { state, trace })
}

/// Mean stage-2 loss over eligible anatomies on the whole training pool.
pub fn stage2_eval_loss(state: &EncoderState, data: Stage2Data<'_>, cfg: &TrainConfig) -> Result<f64> {
    let conditions = eligible_conditions(&data);
    if conditions.is_empty() {
        return Ok(0.0);
    }
    let v = rows(data.image, data.train);
    let mut total = 0.0;
    for c in &conditions {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let t = square(c.truth.view(), data.train);
        total += stage2_loss_and_grads(state, v.view(), c.features.view(), t.view(), cfg, &mut rng)?.0;
    }
    Ok(total / conditions.len() as f64)
}
