//! Semantic, positional and fused cost matrices between segment sequences.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::ot::{array_to_rows, rows_to_array, CostMatrix};

/// An ordered list of `M` embedded segments, stored row-wise as an `M x D` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SegmentSequence(Array2<f64>);

impl SegmentSequence {
    pub fn new(segments: Array2<f64>) -> Result<Self> {
        let (m, d) = segments.dim();
        if m == 0 || d == 0 {
            return Err(Error::InvalidSequence(format!("need M >= 1 and D >= 1, got {m}x{d}")));
        }
        if segments.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSequence("non-finite entry".into()));
        }
        Ok(Self(segments))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows_to_array(rows).map_err(Error::InvalidSequence)?)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    /// Sequences are never empty; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn segment(&self, index: usize) -> ArrayView1<'_, f64> {
        self.0.row(index)
    }

    pub fn segments(&self) -> &Array2<f64> {
        &self.0
    }

    /// Per-dimension mean. Each column is summed in sorted order so the
    /// result is bit-identical under any reordering of the segments.
    pub fn mean(&self) -> Array1<f64> {
        let n = self.len() as f64;
        self.0.map_axis(Axis(0), |col| {
            let mut v = col.to_vec();
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / n
        })
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.slice(ndarray::s![..;-1, ..]).to_owned())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SegmentSequence {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<SegmentSequence> for Vec<Vec<f64>> {
    fn from(s: SegmentSequence) -> Self {
        array_to_rows(&s.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalVariant {
    /// `exp(-(1/sigma^2) / ((p/M1 - q/M2)^2 + 1))`.
    Bounded,
    /// Distance between encodings `P[m, d] = m / M`.
    UniformPe,
    /// Distance between transformer-style sin/cos encodings.
    SinusoidPe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalConfig {
    pub sigma: f64,
    pub variant: PositionalVariant,
    /// Encoding width for the PE variants; `None` uses the embedding dimension.
    pub pe_dimension: Option<usize>,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        Self { sigma: 1.2, variant: PositionalVariant::Bounded, pe_dimension: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight on the positional cost.
    pub alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { alpha: 0.4 }
    }
}

/// `C[p, q] = |a[p] - b[q]|_2`.
pub fn semantic_cost(a: &SegmentSequence, b: &SegmentSequence) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(shape_mismatch("semantic_cost (embedding dim)", a.dim(), b.dim()));
    }
    let c = Array2::from_shape_fn((a.len(), b.len()), |(p, q)| euclidean(a.segment(p), b.segment(q)));
    CostMatrix::new(c)
}

pub(crate) fn euclidean(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Positional cost between index sets `1..=m1` and `1..=m2`.
///
/// Indices are 1-based inside every formula and normalized by their own
/// sequence length, so the relative position always lies in `(0, 1]`.
/// `embedding_dim` sizes the encodings when `cfg.pe_dimension` is unset.
pub fn positional_cost(m1: usize, m2: usize, cfg: &PositionalConfig, embedding_dim: usize) -> Result<CostMatrix> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::InvalidSequence(format!("positional cost needs lengths >= 1, got {m1}x{m2}")));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", cfg.sigma)));
    }
    let width = cfg.pe_dimension.unwrap_or(embedding_dim).max(1);
    let c = match cfg.variant {
        PositionalVariant::Bounded => {
            let inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
            Array2::from_shape_fn((m1, m2), |(p, q)| {
                let gap = (p + 1) as f64 / m1 as f64 - (q + 1) as f64 / m2 as f64;
                (-inv_sigma2 / (gap * gap + 1.0)).exp()
            })
        }
        PositionalVariant::UniformPe => {
            let a = Array2::from_shape_fn((m1, width), |(p, _)| (p + 1) as f64 / m1 as f64);
            let b = Array2::from_shape_fn((m2, width), |(q, _)| (q + 1) as f64 / m2 as f64);
            encoding_distances(&a, &b)
        }
        PositionalVariant::SinusoidPe => encoding_distances(&sinusoid_encoding(m1, width), &sinusoid_encoding(m2, width)),
    };
    CostMatrix::new(c)
}

/// `P[m, d] = sin(m / 10000^(d/D))` for even `d`, `cos(m / 10000^((d-1)/D))` for odd `d`, with `m` 1-based.
pub fn sinusoid_encoding(m: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, width), |(row, d)| {
        let pos = (row + 1) as f64;
        if d % 2 == 0 {
            (pos / 10000f64.powf(d as f64 / width as f64)).sin()
        } else {
            (pos / 10000f64.powf((d - 1) as f64 / width as f64)).cos()
        }
    })
}

fn encoding_distances(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(p, q)| euclidean(a.row(p), b.row(q)))
}

/// `C = C_se + alpha * C_po`.
pub fn fused_cost(semantic: &CostMatrix, positional: &CostMatrix, cfg: &FusionConfig) -> Result<CostMatrix> {
    if semantic.shape() != positional.shape() {
        return Err(shape_mismatch("fused_cost", semantic.shape(), positional.shape()));
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be nonnegative, got {}", cfg.alpha)));
    }
    CostMatrix::new(semantic.entries() + &(positional.entries() * cfg.alpha))
}
