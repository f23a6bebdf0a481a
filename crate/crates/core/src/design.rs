//! Synthetic cluster-constant designs and the standardized stacked design `[X B]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ClusterIndex;
use crate::error::{Result, ShelError};
use crate::scalar::Scalar;

/// Cluster-constant matrix `B` built from screened covariates.
#[derive(Debug, Clone)]
pub struct SyntheticDesign<T: Scalar> {
    pub b: DMatrix<T>,
    /// Zero-based covariate index each column of `b` was built from.
    pub source_column: Vec<usize>,
    /// Screening p-value of each source covariate.
    pub pvalues: Vec<f64>,
    pub alpha: f64,
}

impl<T: Scalar> SyntheticDesign<T> {
    pub fn empty(n: usize, alpha: f64) -> Self {
        SyntheticDesign {
            b: DMatrix::zeros(n, 0),
            source_column: Vec::new(),
            pvalues: Vec::new(),
            alpha,
        }
    }

    pub fn p0(&self) -> usize {
        self.b.ncols()
    }

    /// Cluster means of the source columns of `x`, replicated over each cluster's rows.
    pub fn from_columns(
        x: &DMatrix<T>,
        clusters: &ClusterIndex,
        source_column: Vec<usize>,
        pvalues: Vec<f64>,
        alpha: f64,
    ) -> Self {
        let n = x.nrows();
        let mut b = DMatrix::zeros(n, source_column.len());
        for (k, &l) in source_column.iter().enumerate() {
            let col = x.column(l);
            for rows in clusters.iter() {
                let mut s = T::zero();
                for &r in rows {
                    s += col[r];
                }
                let mean = s / T::from_usize(rows.len()).unwrap();
                for &r in rows {
                    b[(r, k)] = mean;
                }
            }
        }
        SyntheticDesign {
            b,
            source_column,
            pvalues,
            alpha,
        }
    }

    /// Rows restricted to `rows`; columns stay cluster-constant.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        SyntheticDesign {
            b: self.b.select_rows(rows.iter()),
            source_column: self.source_column.clone(),
            pvalues: self.pvalues.clone(),
            alpha: self.alpha,
        }
    }
}

/// Block a column of the stacked design belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Beta,
    Gamma,
    Offset,
}

/// `W = [X B C]` with columns centered and scaled to `‖W_l‖²/N = 1`.
///
/// `C` holds optional unpenalized columns (weight 0). Constant columns are dropped;
/// `kept` maps each column of `z` back to its position in the full stacked frame.
#[derive(Debug, Clone)]
pub struct StackedDesign<T: Scalar> {
    z: DMatrix<T>,
    weights: Vec<T>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    means: Vec<T>,
    scales: Vec<T>,
    p: usize,
    p0: usize,
    n_offset: usize,
    ratio: T,
}

impl<T: Scalar> StackedDesign<T> {
    /// Stacks `X` and `B` with penalty weight 1 on `X` columns and `ratio` on `B` columns.
    pub fn new(x: &DMatrix<T>, b: &DMatrix<T>, ratio: T) -> Result<Self> {
        Self::with_offsets(x, b, &DMatrix::zeros(x.nrows(), 0), ratio)
    }

    /// As [`StackedDesign::new`] with additional unpenalized columns appended.
    pub fn with_offsets(
        x: &DMatrix<T>,
        b: &DMatrix<T>,
        offsets: &DMatrix<T>,
        ratio: T,
    ) -> Result<Self> {
        let n = x.nrows();
        if b.nrows() != n || offsets.nrows() != n {
            return Err(ShelError::Dimension(format!(
                "X has {} rows, B has {}, offsets {}",
                n,
                b.nrows(),
                offsets.nrows()
            )));
        }
        if n == 0 {
            return Err(ShelError::EmptyDataset);
        }
        if !(ratio > T::zero()) || !ratio.is_finite() {
            return Err(ShelError::Config(format!(
                "penalty ratio must be positive, got {}",
                ratio.f64()
            )));
        }
        let (p, p0, n_off) = (x.ncols(), b.ncols(), offsets.ncols());
        let total = p + p0 + n_off;
        let nt = T::from_usize(n).unwrap();
        let mut means = Vec::with_capacity(total);
        let mut scales = Vec::with_capacity(total);
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut weights = Vec::new();
        let mut data: Vec<T> = Vec::with_capacity(n * total);
        for k in 0..total {
            let (col, w) = if k < p {
                (x.column(k), T::one())
            } else if k < p + p0 {
                (b.column(k - p), ratio)
            } else {
                (offsets.column(k - p - p0), T::zero())
            };
            let mean = col.sum() / nt;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b) / nt;
            let sd = var.sqrt();
            means.push(mean);
            let tiny = T::lit(1e-10) * (T::one() + mean.abs());
            if sd <= tiny {
                log::warn!("dropping constant column {k} of stacked design");
                scales.push(T::zero());
                dropped.push(k);
                continue;
            }
            scales.push(sd);
            kept.push(k);
            weights.push(w);
            data.extend(col.iter().map(|&v| (v - mean) / sd));
        }
        let z = DMatrix::from_vec(n, kept.len(), data);
        Ok(StackedDesign {
            z,
            weights,
            kept,
            dropped,
            means,
            scales,
            p,
            p0,
            n_offset: n_off,
            ratio,
        })
    }

    /// Standardized columns that were kept.
    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Column scale in the full stacked frame (0 for dropped columns).
    pub fn column_scales(&self) -> &[T] {
        &self.scales
    }

    pub fn column_means(&self) -> &[T] {
        &self.means
    }

    pub fn n_obs(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn p0(&self) -> usize {
        self.p0
    }

    pub fn n_offset(&self) -> usize {
        self.n_offset
    }

    pub fn ratio(&self) -> T {
        self.ratio
    }

    /// Width of the full stacked frame `p + p0 + offsets`.
    pub fn frame_len(&self) -> usize {
        self.p + self.p0 + self.n_offset
    }

    pub fn block(&self, frame_index: usize) -> Block {
        if frame_index < self.p {
            Block::Beta
        } else if frame_index < self.p + self.p0 {
            Block::Gamma
        } else {
            Block::Offset
        }
    }

    /// Maps scaled coefficients (one per kept column) and the scaled-space intercept
    /// onto the original column scale. Returns (frame coefficients, intercept).
    pub fn unscale(&self, theta: &[T], intercept: T) -> (Vec<T>, T) {
        let mut out = vec![T::zero(); self.frame_len()];
        let mut b0 = intercept;
        for (j, &k) in self.kept.iter().enumerate() {
            let c = theta[j] / self.scales[k];
            out[k] = c;
            b0 -= c * self.means[k];
        }
        (out, b0)
    }

    /// Predictions in scaled space: `intercept + Z theta`.
    pub fn predict_scaled(&self, theta: &[T], intercept: T) -> DVector<T> {
        let th = DVector::from_column_slice(theta);
        let mut eta = &self.z * th;
        eta.add_scalar_mut(intercept);
        eta
    }
}

/// `λ₂/λ₁ = √(log p₀ / log p)`, or 1 when either dimension is at most 1.
pub fn coupling_ratio(p: usize, p0: usize) -> f64 {
    if p <= 1 || p0 <= 1 {
        1.0
    } else {
        ((p0 as f64).ln() / (p as f64).ln()).sqrt()
    }
}

/// Predictions on the original scale for frame coefficients from [`StackedDesign::unscale`].
pub fn predict_original<T: Scalar>(
    x: &DMatrix<T>,
    b: &DMatrix<T>,
    offsets: &DMatrix<T>,
    coef: &[T],
    intercept: T,
) -> DVector<T> {
    let n = x.nrows();
    let mut out = DVector::from_element(n, intercept);
    let blocks = [x, b, offsets];
    let mut k = 0;
    for m in blocks {
        for j in 0..m.ncols() {
            let c = coef[k];
            if c != T::zero() {
                out.axpy(c, &m.column(j), T::one());
            }
            k += 1;
        }
    }
    out
}
