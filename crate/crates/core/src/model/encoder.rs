use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the fusion head combines an image embedding `v` with a condition embedding `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Affine map of `[v ; q]`.
    Concat,
    /// Affine map of `[v ; q ; v ⊙ q]`, which gives every condition its own
    /// linear view of `v`.
    #[default]
    Interaction,
}

impl FusionKind {
    pub fn input_width(self, d: usize) -> usize {
        match self {
            FusionKind::Concat => 2 * d,
            FusionKind::Interaction => 3 * d,
        }
    }
}

/// Parameters of the visual, text and fusion maps.
///
/// Each map is `x ↦ normalize(x W + b)` with `W` stored input-major
/// (`in_dim x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub w_visual: Array2<f64>,
    pub b_visual: Array1<f64>,
    pub w_text: Array2<f64>,
    pub b_text: Array1<f64>,
    pub w_fusion: Array2<f64>,
    pub b_fusion: Array1<f64>,
    pub temperature: f64,
    pub fusion: FusionKind,
}

impl EncoderState {
    /// Seeded initialization.
    ///
    /// Encoder weights are Gaussian with std `1/sqrt(fan_in)` and zero bias.
    /// The fusion head starts close to passing `v` through unchanged
    /// (identity block plus small noise), so an untrained head reproduces
    /// unconditional retrieval.
    pub fn init(
        image_dim: usize,
        text_dim: usize,
        embed_dim: usize,
        temperature: f64,
        fusion: FusionKind,
        seed: u64,
    ) -> Result<Self> {
        if embed_dim == 0 || image_dim == 0 || text_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be >= 1".into()));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).unwrap();
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let w_visual = gaussian(image_dim, embed_dim, 1.0 / (image_dim as f64).sqrt());
        let w_text = gaussian(text_dim, embed_dim, 1.0 / (text_dim as f64).sqrt());
        let width = fusion.input_width(embed_dim);
        let mut w_fusion = gaussian(width, embed_dim, 0.1 / (width as f64).sqrt());
        for i in 0..embed_dim {
            w_fusion[[i, i]] += 1.0;
        }
        Ok(EncoderState {
            w_visual,
            b_visual: Array1::zeros(embed_dim),
            w_text,
            b_text: Array1::zeros(embed_dim),
            w_fusion,
            b_fusion: Array1::zeros(embed_dim),
            temperature,
            fusion,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w_visual.ncols()
    }

    pub fn image_dim(&self) -> usize {
        self.w_visual.nrows()
    }

    pub fn text_dim(&self) -> usize {
        self.w_text.nrows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_visual, &self.w_text, &self.w_fusion]
            .iter()
            .all(|w| w.iter().all(|x| x.is_finite()))
            && [&self.b_visual, &self.b_text, &self.b_fusion]
                .iter()
                .all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn encode_images(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols(v, self.image_dim(), "image features")?;
        Ok(affine_normalize(v, &self.w_visual, &self.b_visual)?.0)
    }

    pub fn encode_texts(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols(x, self.text_dim(), "text features")?;
        Ok(affine_normalize(x, &self.w_text, &self.b_text)?.0)
    }

    /// Unit-norm image and text embeddings for paired rows.
    pub fn encode(
        &self,
        v: ArrayView2<f64>,
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((self.encode_images(v)?, self.encode_texts(x)?))
    }

    /// Encode one condition's text features into a unit-norm query vector.
    pub fn encode_condition(&self, q_features: ArrayView1<f64>) -> Result<Array1<f64>> {
        let row = q_features.insert_axis(Axis(0));
        Ok(self.encode_texts(row)?.row(0).to_owned())
    }

    /// Fused, unit-norm condition-aware embeddings for every row of `vemb`.
    pub fn fuse(&self, vemb: ArrayView2<f64>, q_emb: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_cols(vemb, self.embed_dim(), "image embeddings")?;
        if q_emb.len() != self.embed_dim() {
            return Err(Error::DimMismatch(format!(
                "condition embedding has {} dims, expected {}",
                q_emb.len(),
                self.embed_dim()
            )));
        }
        let input = fusion_input(self.fusion, vemb, q_emb);
        Ok(affine_normalize(input.view(), &self.w_fusion, &self.b_fusion)?.0)
    }
}

fn check_cols(m: ArrayView2<f64>, expected: usize, what: &str) -> Result<()> {
    if m.ncols() != expected {
        return Err(Error::DimMismatch(format!(
            "{what} have {} columns, expected {expected}",
            m.ncols()
        )));
    }
    Ok(())
}

/// Row-wise fusion input: `[v ; q]` or `[v ; q ; v ⊙ q]`.
pub(crate) fn fusion_input(
    kind: FusionKind,
    vemb: ArrayView2<f64>,
    q_emb: ArrayView1<f64>,
) -> Array2<f64> {
    let n = vemb.nrows();
    let q_rows = q_emb.broadcast((n, q_emb.len())).unwrap();
    match kind {
        FusionKind::Concat => concatenate![Axis(1), vemb, q_rows],
        FusionKind::Interaction => {
            let prod = &vemb * &q_rows;
            concatenate![Axis(1), vemb, q_rows, prod]
        }
    }
}

/// Back-propagate a fusion-input gradient to `v` rows and `q`.
pub(crate) fn fusion_input_backward(
    kind: FusionKind,
    vemb: ArrayView2<f64>,
    q_emb: ArrayView1<f64>,
    d_input: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let d = vemb.ncols();
    let mut dv = d_input.slice(s![.., 0..d]).to_owned();
    let mut dq = d_input.slice(s![.., d..2 * d]).sum_axis(Axis(0));
    if kind == FusionKind::Interaction {
        let dp = d_input.slice(s![.., 2 * d..3 * d]);
        dv += &(&dp * &q_emb);
        dq += &(&dp * &vemb).sum_axis(Axis(0));
    }
    (dv, dq)
}

/// `normalize(x W + b)` per row, also returning the pre-normalization norms.
pub(crate) fn affine_normalize(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut z = x.dot(w);
    z += b;
    let mut norms = Array1::zeros(z.nrows());
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 1e-12) {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        row /= n;
        norms[i] = n;
    }
    Ok((z, norms))
}

/// Gradient through row-wise L2 normalization: `dz = (dy - y (y·dy)) / |z|`.
pub(crate) fn normalize_backward(
    y: ArrayView2<f64>,
    norms: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let mut dz = dy.to_owned();
    for (i, mut row) in dz.rows_mut().into_iter().enumerate() {
        let yi = y.row(i);
        let proj = yi.dot(&row);
        row.scaled_add(-proj, &yi);
        row /= norms[i];
    }
    dz
}

/// Temperature-scaled batch similarity matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrices {
    /// `v tᵀ / temperature`
    pub i2t: Array2<f64>,
    /// transpose of `i2t`
    pub t2i: Array2<f64>,
    /// `v vᵀ / temperature`
    pub i2i: Array2<f64>,
}

pub fn sim_matrices(vemb: ArrayView2<f64>, temb: ArrayView2<f64>, temperature: f64) -> SimMatrices {
    let i2t = vemb.dot(&temb.t()) / temperature;
    let t2i = i2t.t().to_owned();
    let i2i = vemb.dot(&vemb.t()) / temperature;
    SimMatrices { i2t, t2i, i2i }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn state(d_img: usize, d_txt: usize, d: usize) -> EncoderState {
        EncoderState::init(d_img, d_txt, d, 0.07, FusionKind::Interaction, 3).unwrap()
    }

    #[test]
    fn identity_weights_keep_unit_rows() {
        let mut st = state(3, 3, 3);
        st.w_visual = Array2::eye(3);
        let v = array![[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]];
        let out = st.encode_images(v.view()).unwrap();
        assert!(close(&out, &v, 1e-15));
    }

    #[test]
    fn rows_are_unit_norm() {
        let st = state(5, 4, 6);
        let v = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 5 + j) as f64).sin());
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i + 3 * j) as f64).cos());
        let (ve, te) = st.encode(v.view(), x.view()).unwrap();
        for row in ve.rows().into_iter().chain(te.rows()) {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_matches_straight_line_recomputation() {
        let st = state(4, 3, 5);
        let v = Array2::from_shape_fn((3, 4), |(i, j)| 0.3 * i as f64 - 0.7 * j as f64 + 0.1);
        let out = st.encode_images(v.view()).unwrap();
        for i in 0..3 {
            let mut z = vec![0.0; 5];
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = st.b_visual[k];
                for j in 0..4 {
                    *zk += v[[i, j]] * st.w_visual[[j, k]];
                }
            }
            let n = z.iter().map(|a| a * a).sum::<f64>().sqrt();
            for k in 0..5 {
                assert!((out[[i, k]] - z[k] / n).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let st = state(3, 3, 2);
        let v = Array2::zeros((2, 3));
        assert!(matches!(
            st.encode_images(v.view()),
            Err(Error::DegenerateEmbedding { row: 0 })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let st = state(3, 3, 2);
        assert!(matches!(
            st.encode_images(Array2::ones((1, 4)).view()),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn self_similarity_diagonal() {
        let v = array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]];
        let s = sim_matrices(v.view(), v.view(), 0.5);
        for i in 0..3 {
            assert!((s.i2t[[i, i]] - 2.0).abs() < 1e-15);
            for j in 0..3 {
                assert_eq!(s.i2t[[i, j]], s.i2t[[j, i]]);
                assert_eq!(s.t2i[[i, j]], s.i2t[[j, i]]);
            }
        }
    }

    #[test]
    fn orthonormal_rows_have_zero_off_diagonal() {
        let v = Array2::<f64>::eye(3);
        let s = sim_matrices(v.view(), v.view(), 0.07);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(s.i2i[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn sim_matrices_match_double_loop() {
        let v = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let t = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 2 + j * 5) as f64).cos());
        let s = sim_matrices(v.view(), t.view(), 0.1);
        for i in 0..3 {
            for j in 0..3 {
                let (mut it, mut ii) = (0.0, 0.0);
                for k in 0..4 {
                    it += v[[i, k]] * t[[j, k]];
                    ii += v[[i, k]] * v[[j, k]];
                }
                assert!((s.i2t[[i, j]] - it / 0.1).abs() < 1e-12);
                assert!((s.t2i[[j, i]] - it / 0.1).abs() < 1e-12);
                assert!((s.i2i[[i, j]] - ii / 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fused_rows_unit_and_condition_dependent() {
        let st = state(4, 4, 4);
        let v = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) as f64).sin() + 0.1);
        let vemb = st.encode_images(v.view()).unwrap();
        let q1 = st.encode_condition(array![1.0, 0.0, 0.0, 0.0].view()).unwrap();
        let q2 = st.encode_condition(array![0.0, 0.0, 1.0, 0.0].view()).unwrap();
        let f1 = st.fuse(vemb.view(), q1.view()).unwrap();
        let f2 = st.fuse(vemb.view(), q2.view()).unwrap();
        for row in f1.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        assert!(!close(&f1, &f2, 1e-6));
    }

    #[test]
    fn fuse_matches_straight_line_recomputation() {
        let st = state(3, 3, 2);
        let vemb = array![[0.6, 0.8], [1.0, 0.0]];
        let q = array![0.0, 1.0];
        let f = st.fuse(vemb.view(), q.view()).unwrap();
        for i in 0..2 {
            let input = [
                vemb[[i, 0]],
                vemb[[i, 1]],
                q[0],
                q[1],
                vemb[[i, 0]] * q[0],
                vemb[[i, 1]] * q[1],
            ];
            let z: Vec<f64> = (0..2)
                .map(|k| st.b_fusion[k] + (0..6).map(|j| input[j] * st.w_fusion[[j, k]]).sum::<f64>())
                .collect();
            let n = (z[0] * z[0] + z[1] * z[1]).sqrt();
            assert!((f[[i, 0]] - z[0] / n).abs() < 1e-14);
            assert!((f[[i, 1]] - z[1] / n).abs() < 1e-14);
        }
    }
}
