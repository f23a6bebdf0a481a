//! Exact post-selection inference for the linear SHEL fit, conditioning on the
//! selected active set and its signs.
//!
//! The penalized problem is rewritten as a plain lasso on `Z = Z_std · diag(1/w)`,
//! where `Z_std` is the centered, unit-scaled stacked design and `w` the penalty
//! weights. Because every column of `Z` is centered, the unpenalized intercept
//! drops out of the selection event and of every contrast `η`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normal::truncated_normal_cdf;
use crate::data::{ClusterIndex, Family};
use crate::design::{Block, StackedDesign};
use crate::error::{Result, ShelError};
use crate::mixed::anova_components;
use crate::solver::PenalizedFit;

/// Polyhedron `{y : A y ≤ b}` of responses that reproduce a fit's active set and signs.
///
/// The first `n_inactive_rows` rows are the inactive-coordinate constraints (upper
/// then lower bounds); the remaining rows keep each active sign.
#[derive(Debug, Clone)]
pub struct SelectionEvent {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Active indices in the stacked `(β, γ)` frame.
    pub active_set: Vec<usize>,
    pub signs: Vec<i8>,
    pub blocks: Vec<Block>,
    pub lambda1: f64,
    pub n_inactive_rows: usize,
    /// Largest entry of `A y − b` at the observed response.
    pub violation: f64,
    /// Lasso design `Z` on the kept columns.
    z: DMatrix<f64>,
    /// Positions of the active columns within `z`.
    active_cols: Vec<usize>,
    gram_m: Option<Cholesky<f64, Dyn>>,
    /// Factor mapping a contrast on `Z` back to the original covariate scale.
    to_original: Vec<f64>,
}

impl SelectionEvent {
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    /// Largest entry of `A y − b`.
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        if self.b.is_empty() {
            return f64::NEG_INFINITY;
        }
        (&self.a * y - &self.b).max()
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(y) <= tol
    }

    /// Contrast `η_l = Z_M (Z_Mᵀ Z_M)⁻¹ e_l` for the `pos`-th active coefficient.
    pub fn contrast(&self, pos: usize) -> DVector<f64> {
        let chol = self.gram_m.as_ref().expect("contrast requested on an empty active set");
        let mut e = DVector::zeros(self.active_cols.len());
        e[pos] = 1.0;
        let g = chol.solve(&e);
        self.z.select_columns(&self.active_cols) * g
    }
}

/// Builds the selection polyhedron of a Gaussian fit on `design` at its `λ₁`.
///
/// `tol` bounds how far the observed response may sit outside the polyhedron
/// before the fit is declared inconsistent with its own event.
pub fn build_polyhedron(
    design: &StackedDesign<f64>,
    y: &DVector<f64>,
    fit: &PenalizedFit<f64>,
    tol: f64,
) -> Result<SelectionEvent> {
    if fit.family != Family::Gaussian {
        return Err(ShelError::Config("selective inference needs a Gaussian fit".into()));
    }
    if design.n_offset() > 0 {
        return Err(ShelError::Config(
            "selective inference does not support unpenalized offset columns".into(),
        ));
    }
    let n = design.n_obs();
    if y.len() != n {
        return Err(ShelError::Dimension(format!("y has {} rows, design {}", y.len(), n)));
    }
    let lambda = fit.lambda1;
    if !(lambda > 0.0) {
        return Err(ShelError::Config("selection event needs a positive penalty".into()));
    }
    let nf = n as f64;
    let weights = design.weights();
    let mut z = design.z().clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col /= weights[j];
    }

    let mut active_cols = Vec::new();
    let mut inactive_cols = Vec::new();
    let mut signs = Vec::new();
    let mut active_set = Vec::new();
    let mut to_original = Vec::new();
    let mut blocks = Vec::new();
    let scales = design.column_scales();
    for (j, &k) in design.kept().iter().enumerate() {
        let th = fit.theta_scaled[j];
        if th != 0.0 {
            active_cols.push(j);
            active_set.push(k);
            blocks.push(design.block(k));
            signs.push(if th > 0.0 { 1i8 } else { -1 });
            to_original.push(1.0 / (weights[j] * scales[k]));
        } else {
            inactive_cols.push(j);
        }
    }

    let zm = z.select_columns(&active_cols);
    let zc = z.select_columns(&inactive_cols);
    let k_act = active_cols.len();
    let k_in = inactive_cols.len();
    let s = DVector::from_iterator(k_act, signs.iter().map(|&v| v as f64));

    let (gram_m, resid_dir, proj_s) = if k_act > 0 {
        let chol = (zm.transpose() * &zm)
            .cholesky()
            .ok_or_else(|| ShelError::Singular("active design of the selection event".into()))?;
        // (I − P_M) Z_Mc and Z_M (Z_MᵀZ_M)⁻¹ s
        let coef = chol.solve(&(zm.transpose() * &zc));
        let resid = &zc - &zm * coef;
        let proj = &zm * chol.solve(&s);
        (Some(chol), resid, proj)
    } else {
        (None, zc.clone(), DVector::zeros(n))
    };

    let rows = 2 * k_in + k_act;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    // Σ̂_M⁻¹ s = N (Z_MᵀZ_M)⁻¹ s, so (1/N) Z_McᵀZ_M Σ̂_M⁻¹ s = Z_Mcᵀ Z_M (Z_MᵀZ_M)⁻¹ s
    let shift = zc.transpose() * &proj_s;
    for i in 0..k_in {
        let row = resid_dir.column(i).transpose() / (lambda * nf);
        a.row_mut(i).copy_from(&row);
        a.row_mut(k_in + i).copy_from(&(-row));
        b[i] = 1.0 - shift[i];
        b[k_in + i] = 1.0 + shift[i];
    }
    if let Some(chol) = &gram_m {
        // −(1/N) diag(s) Σ̂_M⁻¹ Z_Mᵀ = −diag(s) (Z_MᵀZ_M)⁻¹ Z_Mᵀ
        let ls = chol.solve(&zm.transpose());
        let sig_inv_s = chol.solve(&s) * nf;
        for r in 0..k_act {
            let row = ls.row(r) * (-s[r]);
            a.row_mut(2 * k_in + r).copy_from(&row);
            b[2 * k_in + r] = -lambda * s[r] * sig_inv_s[r];
        }
    }

    let mut event = SelectionEvent {
        a,
        b,
        active_set,
        signs,
        blocks,
        lambda1: lambda,
        n_inactive_rows: 2 * k_in,
        violation: 0.0,
        z,
        active_cols,
        gram_m,
        to_original,
    };
    let violation = event.max_violation(y);
    event.violation = violation;
    if violation > tol {
        return Err(ShelError::InconsistentEvent { violation });
    }
    Ok(event)
}

/// Truncation interval of `ηᵀy` given the polyhedron, with `c = Ση / ηᵀΣη`.
///
/// `sigma_eta` is `Ση`. Rows with `(Ac)_k = 0` do not constrain `ηᵀy`.
pub fn truncation_limits(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    eta: &DVector<f64>,
    sigma_eta: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(f64, f64)> {
    let var = eta.dot(sigma_eta);
    if !(var > 0.0) {
        return Err(ShelError::numerical("truncation limits", "contrast has zero variance"));
    }
    if a.nrows() == 0 {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    let c = sigma_eta / var;
    let f = y - &c * eta.dot(y);
    let ac = a * &c;
    let af = a * &f;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for k in 0..ac.len() {
        let v = (b[k] - af[k]) / ac[k];
        if ac[k] < 0.0 {
            lower = lower.max(v);
        } else if ac[k] > 0.0 {
            upper = upper.min(v);
        }
    }
    if lower >= upper {
        return Err(ShelError::EmptyTruncation { lower, upper });
    }
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `σ² I`
    Iid,
    /// `σ² I + τ² D Dᵀ` with `D` the cluster indicator matrix.
    Clustered,
}

impl CovarianceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceKind::Iid => "iid",
            CovarianceKind::Clustered => "clustered",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceModel {
    pub kind: CovarianceKind,
    pub sigma2: f64,
    pub tau2: f64,
    /// Variances were estimated from residuals rather than supplied.
    pub plug_in: bool,
    /// A clustered model was requested but could not be estimated.
    pub fallback: bool,
}

impl CovarianceModel {
    pub fn iid(sigma2: f64) -> Result<Self> {
        Self::clustered(sigma2, 0.0).map(|c| CovarianceModel {
            kind: CovarianceKind::Iid,
            ..c
        })
    }

    pub fn clustered(sigma2: f64, tau2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) || !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(ShelError::Config(format!(
                "covariance needs sigma2 > 0 and tau2 >= 0, got {sigma2} and {tau2}"
            )));
        }
        Ok(CovarianceModel {
            kind: CovarianceKind::Clustered,
            sigma2,
            tau2,
            plug_in: false,
            fallback: false,
        })
    }

    /// `Σ v`.
    pub fn apply(&self, v: &DVector<f64>, clusters: &ClusterIndex) -> DVector<f64> {
        let mut out = v * self.sigma2;
        if self.kind == CovarianceKind::Clustered && self.tau2 > 0.0 {
            for rows in clusters.iter() {
                let sum: f64 = rows.iter().map(|&r| v[r]).sum();
                for &r in rows {
                    out[r] += self.tau2 * sum;
                }
            }
        }
        out
    }
}

/// Moment estimates of the residual variance components.
///
/// `σ²` is the within-cluster mean square for both kinds. Without within-cluster
/// degrees of freedom the total residual variance is used for `σ²`, and a
/// clustered request falls back to the iid model with `fallback` set.
pub fn estimate_covariance(
    residuals: &[f64],
    clusters: &ClusterIndex,
    kind: CovarianceKind,
) -> Result<CovarianceModel> {
    let (sigma2, tau2, fallback) = match anova_components(residuals, clusters) {
        Ok(c) => (c.sigma2, c.tau2, false),
        Err(ShelError::NoWithinDf) => {
            let n = residuals.len() as f64;
            let mean = residuals.iter().sum::<f64>() / n;
            let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var, 0.0, kind == CovarianceKind::Clustered)
        }
        Err(e) => return Err(e),
    };
    if !(sigma2 > 0.0) {
        return Err(ShelError::numerical("covariance estimation", "residual variance is zero"));
    }
    let mut model = match (kind, fallback) {
        (CovarianceKind::Clustered, false) => CovarianceModel::clustered(sigma2, tau2)?,
        _ => CovarianceModel::iid(sigma2)?,
    };
    model.plug_in = true;
    model.fallback = fallback;
    Ok(model)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectiveCI {
    /// Index in the stacked `(β, γ)` frame.
    pub index: usize,
    pub block: Block,
    /// `η_lᵀ y`, the least-squares coefficient on the selected model in `Z` units.
    pub estimate: f64,
    pub sd: f64,
    pub lower_trunc: f64,
    pub upper_trunc: f64,
    /// Pivot at the null value zero.
    pub pivot: f64,
    pub pvalue: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// An interval end could not be bracketed and was set to infinity.
    pub ci_unbounded: bool,
    /// The observed statistic fell outside its truncation interval and was clamped.
    pub clamped: bool,
    /// Multiplier taking `estimate` and the interval to the original covariate scale.
    pub to_original: f64,
}

fn pivot_at(x: f64, mu: f64, var: f64, lo: f64, hi: f64) -> f64 {
    truncated_normal_cdf(x, mu, var, lo, hi).value
}

/// Solves `T(x; μ) = target` for `μ`, using that the pivot decreases in `μ`.
fn invert_pivot(x: f64, var: f64, lo: f64, hi: f64, target: f64, bound: f64) -> Option<f64> {
    let (mut a, mut b) = (-bound, bound);
    if pivot_at(x, a, var, lo, hi) < target || pivot_at(x, b, var, lo, hi) > target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= 1e-12 * bound.max(1.0) {
            break;
        }
        if pivot_at(x, mid, var, lo, hi) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// Truncated-Gaussian test and interval for the `pos`-th active coefficient.
pub fn selective_test(
    event: &SelectionEvent,
    y: &DVector<f64>,
    cov: &CovarianceModel,
    clusters: &ClusterIndex,
    pos: usize,
    level: f64,
) -> Result<SelectiveCI> {
    if pos >= event.active_set.len() {
        return Err(ShelError::Config(format!(
            "coefficient position {pos} outside the active set of size {}",
            event.active_set.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ShelError::Config("confidence level must lie in (0, 1)".into()));
    }
    let eta = event.contrast(pos);
    let sigma_eta = cov.apply(&eta, clusters);
    let var = eta.dot(&sigma_eta);
    let (lower, upper) = truncation_limits(&event.a, &event.b, &eta, &sigma_eta, y)?;
    let x = eta.dot(y);
    let t = truncated_normal_cdf(x, 0.0, var, lower, upper);
    let pivot = t.value;
    let pvalue = (2.0 * pivot.min(1.0 - pivot)).clamp(0.0, 1.0);

    let sd = var.sqrt();
    let bound = x.abs() + 20.0 * sd;
    let half = 0.5 * (1.0 - level);
    let lo = invert_pivot(x, var, lower, upper, 1.0 - half, bound);
    let hi = invert_pivot(x, var, lower, upper, half, bound);
    Ok(SelectiveCI {
        index: event.active_set[pos],
        block: event.blocks[pos],
        estimate: x,
        sd,
        lower_trunc: lower,
        upper_trunc: upper,
        pivot,
        pvalue,
        ci_lo: lo.unwrap_or(f64::NEG_INFINITY),
        ci_hi: hi.unwrap_or(f64::INFINITY),
        ci_unbounded: lo.is_none() || hi.is_none(),
        clamped: t.clamped,
        to_original: event.to_original[pos],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectiveReport {
    pub lambda1: f64,
    pub level: f64,
    pub covariance: CovarianceModel,
    pub rows: Vec<SelectiveCI>,
}

/// Tests every active coefficient of the event.
pub fn selective_inference(
    event: &SelectionEvent,
    y: &DVector<f64>,
    cov: &CovarianceModel,
    clusters: &ClusterIndex,
    level: f64,
) -> Result<SelectiveReport> {
    let rows = (0..event.active_set.len())
        .into_par_iter()
        .map(|pos| selective_test(event, y, cov, clusters, pos, level))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectiveReport {
        lambda1: event.lambda1,
        level,
        covariance: cov.clone(),
        rows,
    })
}

impl SelectiveReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "block",
            "estimate",
            "L",
            "U",
            "pivot",
            "pvalue",
            "ci_lo",
            "ci_hi",
            "estimate_original",
            "ci_lo_original",
            "ci_hi_original",
            "covariance",
            "plug_in",
            "ci_unbounded",
        ])?;
        for r in &self.rows {
            let block = match r.block {
                Block::Beta => "beta",
                Block::Gamma => "gamma",
                Block::Offset => "offset",
            };
            let (lo_o, hi_o) = {
                let a = r.ci_lo * r.to_original;
                let b = r.ci_hi * r.to_original;
                (a.min(b), a.max(b))
            };
            w.write_record([
                (r.index + 1).to_string(),
                block.to_string(),
                format!("{:e}", r.estimate),
                format!("{:e}", r.lower_trunc),
                format!("{:e}", r.upper_trunc),
                format!("{:e}", r.pivot),
                format!("{:e}", r.pvalue),
                format!("{:e}", r.ci_lo),
                format!("{:e}", r.ci_hi),
                format!("{:e}", r.estimate * r.to_original),
                format!("{:e}", lo_o),
                format!("{:e}", hi_o),
                self.covariance.kind.as_str().to_string(),
                self.covariance.plug_in.to_string(),
                r.ci_unbounded.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
