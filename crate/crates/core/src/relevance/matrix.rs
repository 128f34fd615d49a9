use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scorer::Scorer;
use crate::corpus::Corpus;
use crate::decomposition::DecomposedCorpus;
use crate::error::{Error, Result};
use crate::terminology::Terminology;

pub const RIRM_MAGIC: &[u8; 4] = b"RIRM";
pub const RIRM_VERSION: u32 = 1;

/// Dense ground-truth relevance matrix with its id sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    condition: Option<String>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    values: Vec<f32>,
}

impl SimilarityMatrix {
    /// Validate and wrap row-major `values`.
    ///
    /// Every value must be finite and in `[0, 1]`; when rows and columns share
    /// ids the matrix must also be symmetric with an exact unit diagonal.
    pub fn new(
        condition: Option<String>,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let (n, m) = (row_ids.len(), col_ids.len());
        if values.len() != n * m {
            return Err(Error::DimMismatch(format!(
                "{} values for a {n}x{m} matrix",
                values.len()
            )));
        }
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    row: idx / m.max(1),
                    col: idx % m.max(1),
                    value: v,
                });
            }
        }
        if row_ids == col_ids {
            for i in 0..n {
                if values[i * n + i] != 1.0 {
                    return Err(Error::NotSymmetric { row: i, col: i });
                }
                for j in (i + 1)..n {
                    if values[i * n + j] != values[j * n + i] {
                        return Err(Error::NotSymmetric { row: i, col: j });
                    }
                }
            }
        }
        Ok(SimilarityMatrix {
            condition,
            row_ids,
            col_ids,
            values,
        })
    }

    pub fn condition(&self) -> Option<&str> {
        self.condition.as_deref()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn nrows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.ncols() + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let m = self.ncols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.nrows();
        n == self.ncols() && (0..n).all(|i| (0..n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.nrows(), self.ncols()), |(i, j)| {
            f64::from(self.get(i, j))
        })
    }

    /// Square sub-matrix over `indices` (rows and columns), as f64.
    pub fn submatrix(&self, indices: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((indices.len(), indices.len()), |(a, b)| {
            f64::from(self.get(indices[a], indices[b]))
        })
    }

    /// Write the binary `RIRM` file at `path` and its JSON sidecar next to it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_rirm_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            rows: self.row_ids.clone(),
            cols: self.col_ids.clone(),
            condition: self.condition.clone(),
        };
        let side = sidecar_path(path);
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn to_rirm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(RIRM_MAGIC);
        out.extend_from_slice(&RIRM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.ncols() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse RIRM bytes against caller-supplied id lists.
    pub fn from_rirm_bytes(
        bytes: &[u8],
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        condition: Option<String>,
    ) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated(format!("{} byte header", bytes.len())));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != RIRM_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != RIRM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (n, m) = (word(8) as usize, word(12) as usize);
        if n != row_ids.len() || m != col_ids.len() {
            return Err(Error::DimMismatch(format!(
                "header says {n}x{m}, ids give {}x{}",
                row_ids.len(),
                col_ids.len()
            )));
        }
        let body = &bytes[16..];
        if body.len() != 4 * n * m {
            return Err(Error::Truncated(format!(
                "expected {} value bytes, found {}",
                4 * n * m,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(condition, row_ids, col_ids, values)
    }

    /// Read a matrix together with its sidecar.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let json = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_slice(&json)?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_rirm_bytes(&bytes, sidecar.rows, sidecar.cols, sidecar.condition)
    }
}

/// JSON sidecar stored next to every `.rirm` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub condition: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Load externally computed scores (e.g. from a learned report metric).
pub fn import_scores(
    path: impl AsRef<Path>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
) -> Result<SimilarityMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SimilarityMatrix::from_rirm_bytes(&bytes, row_ids, col_ids, None)
}

/// What a matrix is built from.
#[derive(Debug, Clone, Copy)]
pub enum MatrixSource<'a> {
    /// Full report texts.
    Global(&'a Corpus),
    /// Regional findings for one anatomy; reports without a finding score as empty text.
    Conditional {
        findings: &'a DecomposedCorpus,
        terminology: &'a Terminology,
        anatomy: &'a str,
    },
}

/// Build a square relevance matrix using the global rayon pool.
pub fn build_matrix<S: Scorer>(source: MatrixSource<'_>, scorer: &S) -> Result<SimilarityMatrix> {
    let (ids, texts, condition) = source_texts(source)?;
    let values = score_texts(&texts, scorer);
    SimilarityMatrix::new(condition, ids.clone(), ids, values)
}

/// Same as [`build_matrix`] on a dedicated pool of `workers` threads.
pub fn build_matrix_with_workers<S: Scorer>(
    source: MatrixSource<'_>,
    scorer: &S,
    workers: usize,
) -> Result<SimilarityMatrix> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| build_matrix(source, scorer))
}

fn source_texts(source: MatrixSource<'_>) -> Result<(Vec<String>, Vec<String>, Option<String>)> {
    match source {
        MatrixSource::Global(corpus) => Ok((
            corpus.ids(),
            corpus.reports().iter().map(|r| r.text.clone()).collect(),
            None,
        )),
        MatrixSource::Conditional {
            findings,
            terminology,
            anatomy,
        } => {
            if !terminology.contains(anatomy) {
                return Err(Error::UnknownAnatomy(anatomy.to_string()));
            }
            Ok((
                findings.report_ids().to_vec(),
                findings.texts_for(anatomy),
                Some(anatomy.to_string()),
            ))
        }
    }
}

/// Row-major symmetric score matrix with unit diagonal.
///
/// Rows of the upper triangle are scored in parallel and reassembled by
/// index, so the result does not depend on scheduling.
fn score_texts<S: Scorer>(texts: &[String], scorer: &S) -> Vec<f32> {
    let n = texts.len();
    let prepared: Vec<S::Prepared> = texts.par_iter().map(|t| scorer.prepare(t)).collect();
    let upper: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| scorer.compare(&prepared[i], &prepared[j]) as f32)
                .collect()
        })
        .collect();
    let mut values = vec![0.0f32; n * n];
    for (i, row) in upper.iter().enumerate() {
        values[i * n + i] = 1.0;
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    values
}
