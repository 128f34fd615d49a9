//! Finite-difference gradient checks shared by the gradient suite and the
//! acceptance harness. Each case returns `None` when the random instance
//! lands within 1e-3 of a hinge kink, where central differences are
//! meaningless.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use radbench::model::{
    masked_infonce, stage1_loss_and_grads, stage2_loss_and_grads, triplet_loss, CombinedObjective,
    EncoderState, FusionKind, ParamGrads, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-8;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

fn truth(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut t = uniform(rng, n, n, 0.0, 1.0);
    for i in 0..n {
        t[[i, i]] = 1.0;
        for j in 0..i {
            t[[i, j]] = t[[j, i]];
        }
    }
    t
}

pub type Check = Result<(), String>;

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> Check {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = RTOL * a.abs().max(n.abs()) + ATOL;
        if (a - n).abs() > tol {
            return Err(format!("{name}[{i}]: analytic {a:e} vs numeric {n:e}"));
        }
    }
    Ok(())
}

fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(x);
            x[i] = orig - H;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Smallest |hinge| over all valid triplets; finite differences are only
/// meaningful away from the kink.
fn min_hinge(s: &Array2<f64>, t: &Array2<f64>, margin: f64, gap: f64) -> f64 {
    let n = s.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i != j && j != k && i != k && t[[i, j]] >= t[[i, k]] + gap {
                    best = best.min((margin + s[[i, k]] - s[[i, j]]).abs());
                }
            }
        }
    }
    best
}


/// Every parameter block of a state as a mutable flat slice.
fn blocks(s: &mut EncoderState) -> Vec<&mut [f64]> {
    vec![
        s.w_visual.as_slice_mut().unwrap(),
        s.b_visual.as_slice_mut().unwrap(),
        s.w_text.as_slice_mut().unwrap(),
        s.b_text.as_slice_mut().unwrap(),
        s.w_fusion.as_slice_mut().unwrap(),
        s.b_fusion.as_slice_mut().unwrap(),
    ]
}

fn grad_blocks(g: &ParamGrads) -> Vec<Vec<f64>> {
    vec![
        g.w_visual.iter().copied().collect(),
        g.b_visual.to_vec(),
        g.w_text.iter().copied().collect(),
        g.b_text.to_vec(),
        g.w_fusion.iter().copied().collect(),
        g.b_fusion.to_vec(),
    ]
}

/// Numeric gradient of `loss` with respect to one block of `state`.
fn numeric_block(state: &EncoderState, block: usize, loss: &dyn Fn(&EncoderState) -> f64) -> Vec<f64> {
    let mut probe = state.clone();
    let len = blocks(&mut probe)[block].len();
    (0..len)
        .map(|i| {
            let orig = blocks(&mut probe)[block][i];
            blocks(&mut probe)[block][i] = orig + H;
            let up = loss(&probe);
            blocks(&mut probe)[block][i] = orig - H;
            let down = loss(&probe);
            blocks(&mut probe)[block][i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng, di: usize, dt: usize, d: usize, fusion: FusionKind) -> EncoderState {
    let mut s = EncoderState::init(di, dt, d, 0.07, fusion, rng.random()).unwrap();
    let width = fusion.input_width(d);
    s.b_visual = Array1::from_shape_fn(d, |_| rng.random_range(-0.3..0.3));
    s.b_text = Array1::from_shape_fn(d, |_| rng.random_range(-0.3..0.3));
    s.w_fusion = uniform(rng, width, d, -0.5, 0.5);
    s.b_fusion = Array1::from_shape_fn(d, |_| rng.random_range(-0.3..0.3));
    s
}

pub fn infonce_case(seed: u64) -> Option<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let t = truth(&mut rng, n);
    let tau = rng.random_range(0.5..1.0);
    let mut s = uniform(&mut rng, n, n, -5.0, 5.0);
    let (_, g) = masked_infonce(s.view(), t.view(), tau);
    let num = numeric_grad(s.as_slice_mut().unwrap(), |x| {
        let m = Array2::from_shape_vec((n, n), x.to_vec()).unwrap();
        masked_infonce(m.view(), t.view(), tau).0
    });
    Some(check(&format!("infonce seed {seed}"), g.as_slice().unwrap(), &num))
}

pub fn triplet_case(seed: u64) -> Option<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    let t = truth(&mut rng, n);
    let mut s = uniform(&mut rng, n, n, -1.0, 1.0);
    if min_hinge(&s, &t, 0.2, 0.05) < 1e-3 {
        return None;
    }
    let (_, g) = triplet_loss(s.view(), t.view(), 0.2, 0.05, 512, &mut ChaCha8Rng::seed_from_u64(0));
    let num = numeric_grad(s.as_slice_mut().unwrap(), |x| {
        let m = Array2::from_shape_vec((n, n), x.to_vec()).unwrap();
        triplet_loss(m.view(), t.view(), 0.2, 0.05, 512, &mut ChaCha8Rng::seed_from_u64(0)).0
    });
    Some(check(&format!("triplet seed {seed}"), g.as_slice().unwrap(), &num))
}

/// Composed stage-1 objective through both encoders.
pub fn stage1_case(seed: u64) -> Option<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    let (di, dt, d) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(2..=16));
    let state = random_state(&mut rng, di, dt, d, FusionKind::Interaction);
    let image = uniform(&mut rng, n, di, -1.0, 1.0);
    let text = uniform(&mut rng, n, dt, -1.0, 1.0);
    let t = truth(&mut rng, n);
    let cfg = TrainConfig {
        tau_mask: rng.random_range(0.5..1.0),
        lambda1: rng.random_range(0.1..2.0),
        lambda2: rng.random_range(0.1..2.0),
        lambda3: rng.random_range(0.1..2.0),
        ..TrainConfig::default()
    };
    let objective = CombinedObjective::from(&cfg);
    let vemb = state.encode_images(image.view()).unwrap();
    let s_ii = vemb.dot(&vemb.t()) / state.temperature;
    if min_hinge(&s_ii, &t, cfg.margin, cfg.delta_gap) < 1e-3 {
        return None;
    }
    let loss = |s: &EncoderState| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        stage1_loss_and_grads(s, image.view(), text.view(), t.view(), &objective, &mut r)
            .unwrap()
            .0
    };
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (_, g) = stage1_loss_and_grads(&state, image.view(), text.view(), t.view(), &objective, &mut r).unwrap();
    let analytic = grad_blocks(&g);
    for (b, name) in ["w_visual", "b_visual", "w_text", "b_text"].iter().enumerate() {
        let num = numeric_block(&state, b, &loss);
        if let Err(e) = check(&format!("stage1 {name} seed {seed}"), &analytic[b], &num) {
            return Some(Err(e));
        }
    }
    if analytic[4].iter().chain(&analytic[5]).any(|&x| x != 0.0) {
        return Some(Err(format!("stage1 seed {seed}: fusion gradient is not zero")));
    }
    Some(Ok(()))
}

/// Stage-2 triplet objective through the fusion head and both encoders.
pub fn stage2_case(seed: u64) -> Option<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fusion = if seed % 2 == 0 { FusionKind::Interaction } else { FusionKind::Concat };
    let n = rng.random_range(3..=8);
    let (di, dt, d) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(2..=16));
    let state = random_state(&mut rng, di, dt, d, fusion);
    let image = uniform(&mut rng, n, di, -1.0, 1.0);
    let q = Array1::from_shape_fn(dt, |_| rng.random_range(-1.0..1.0));
    let t = truth(&mut rng, n);
    let cfg = TrainConfig::default();
    let vemb = state.encode_images(image.view()).unwrap();
    let qemb = state.encode_condition(q.view()).unwrap();
    let f = state.fuse(vemb.view(), qemb.view()).unwrap();
    let s = f.dot(&f.t()) / state.temperature;
    if min_hinge(&s, &t, cfg.margin, cfg.delta_gap) < 1e-3 {
        return None;
    }
    let loss = |st: &EncoderState| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        stage2_loss_and_grads(st, image.view(), q.view(), t.view(), &cfg, &mut r)
            .unwrap()
            .0
    };
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (_, g) = stage2_loss_and_grads(&state, image.view(), q.view(), t.view(), &cfg, &mut r).unwrap();
    let analytic = grad_blocks(&g);
    for (b, name) in ["w_visual", "b_visual", "w_text", "b_text", "w_fusion", "b_fusion"]
        .iter()
        .enumerate()
    {
        let num = numeric_block(&state, b, &loss);
        if let Err(e) = check(&format!("stage2 {name} seed {seed}"), &analytic[b], &num) {
            return Some(Err(e));
        }
    }
    Some(Ok(()))
}

/// Run `case` on consecutive seeds until `want` instances were checked.
/// Returns the number checked and the first failure.
pub fn run_cases(case: fn(u64) -> Option<Check>, first_seed: u64, want: usize) -> (usize, Check) {
    let mut checked = 0;
    for seed in first_seed..first_seed + 50 * want as u64 {
        if checked == want {
            break;
        }
        match case(seed) {
            None => continue,
            Some(Err(e)) => return (checked, Err(e)),
            Some(Ok(())) => checked += 1,
        }
    }
    (checked, Ok(()))
}
