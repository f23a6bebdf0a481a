//! One-step debiased SHEL/GSHEL coefficients with cluster-level variance.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normal::upper_tail;
use crate::data::{ClusteredDataset, Family};
use crate::design::{coupling_ratio, predict_original, StackedDesign, SyntheticDesign};
use crate::error::{Result, ShelError};
use crate::estimators::{cross_validate, CvConfig, LambdaRule};
use crate::solver::{expit, fit, PenalizedFit, SolverConfig};

/// Smallest nodewise residual variance accepted before the target is treated as
/// collinear with the other columns.
pub const MIN_NODEWISE_VARIANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodewisePenalty {
    /// Cluster-level cross-validation with the given rule.
    Cv(LambdaRule),
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NodewiseConfig {
    pub penalty: NodewisePenalty,
    pub cv: CvConfig,
    /// Solver tolerance for the cross-validation paths only; the final nodewise
    /// fit uses the caller's solver settings.
    pub cv_tol: f64,
    pub level: f64,
}

impl Default for NodewiseConfig {
    fn default() -> Self {
        NodewiseConfig {
            penalty: NodewisePenalty::Cv(LambdaRule::Min),
            cv: CvConfig {
                folds: 5,
                n_lambda: 50,
                ..CvConfig::default()
            },
            cv_tol: 1e-5,
            level: 0.95,
        }
    }
}

/// Nodewise regression of one covariate on the others and `B`, in the
/// variance-weighted geometry `X̃ = V^{1/2} X`.
#[derive(Debug, Clone)]
pub struct NodewiseFit {
    pub target: usize,
    /// Coefficients of the other covariates, with zero at `target` (length p).
    pub zeta: Vec<f64>,
    /// Coefficients of the weighted synthetic columns.
    pub gamma: Vec<f64>,
    /// Mean squared nodewise residual after removing every fitted part,
    /// synthetic columns included.
    pub sigma2: f64,
    pub lambda: f64,
    /// `σ̂⁻² (1, −ζ̂, −γ̂)` in the `(β, γ)` frame. The synthetic slots are what
    /// keep the score orthogonal to the cluster-level directions.
    pub a_hat: Vec<f64>,
}

/// Working variance of each observation at the fit: 1 for a Gaussian response,
/// `μ̂(1 − μ̂)` for a binary one.
pub fn working_variance(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    fit: &PenalizedFit<f64>,
) -> Vec<f64> {
    match data.family() {
        Family::Gaussian => vec![1.0; data.n_obs()],
        Family::Binomial => fitted_mean(data, synthetic, fit)
            .iter()
            .map(|&m| m * (1.0 - m))
            .collect(),
    }
}

fn fitted_mean(data: &ClusteredDataset<f64>, synthetic: &SyntheticDesign<f64>, fit: &PenalizedFit<f64>) -> DVector<f64> {
    let mut coef = fit.beta.clone();
    coef.extend_from_slice(&fit.gamma);
    let none = DMatrix::zeros(data.n_obs(), 0);
    let eta = predict_original(data.x(), &synthetic.b, &none, &coef, fit.intercept);
    match data.family() {
        Family::Gaussian => eta,
        Family::Binomial => eta.map(expit),
    }
}

pub fn nodewise_fit(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    v: &[f64],
    target: usize,
    config: &NodewiseConfig,
    solver: &SolverConfig<f64>,
) -> Result<NodewiseFit> {
    let (n, p) = (data.n_obs(), data.n_covariates());
    if target >= p {
        return Err(ShelError::Config(format!("target {target} outside 0..{p}")));
    }
    if v.len() != n || v.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(ShelError::Config("working variance must be finite, nonnegative and one per row".into()));
    }
    let root: Vec<f64> = v.iter().map(|w| w.sqrt()).collect();
    let x = data.x();
    let response = DVector::from_fn(n, |i, _| root[i] * x[(i, target)]);
    let others: Vec<usize> = (0..p).filter(|&j| j != target).collect();
    let xt = DMatrix::from_fn(n, p - 1, |i, j| root[i] * x[(i, others[j])]);
    let mut bt = synthetic.clone();
    for (i, mut row) in bt.b.row_iter_mut().enumerate() {
        row *= root[i];
    }
    // direction of the main fit's intercept in the weighted geometry
    let offsets = DMatrix::from_column_slice(n, 1, &root);
    let node = ClusteredDataset::new(response.clone(), xt.clone(), data.labels().to_vec(), Family::Gaussian)?;

    let lambda = match config.penalty {
        NodewisePenalty::Fixed(l) => l,
        NodewisePenalty::Cv(rule) => {
            let loose = SolverConfig {
                tol: solver.tol.max(config.cv_tol),
                ..solver.clone()
            };
            cross_validate(&node, &bt, Some(&offsets), &config.cv, &loose)?.lambda(rule)
        }
    };
    let ratio = coupling_ratio(p - 1, bt.p0());
    let design = StackedDesign::with_offsets(&xt, &bt.b, &offsets, ratio)?;
    let f = fit(&design, &response, Family::Gaussian, lambda, solver)?;

    let mut resid = &response - &xt * DVector::from_column_slice(&f.beta);
    resid.add_scalar_mut(-f.intercept);
    if let Some(&kappa) = f.offset_coef.first() {
        resid.axpy(-kappa, &offsets.column(0), 1.0);
    }
    if bt.p0() > 0 {
        resid -= &bt.b * DVector::from_column_slice(&f.gamma);
    }
    let sigma2 = resid.norm_squared() / n as f64;
    if !(sigma2 >= MIN_NODEWISE_VARIANCE) {
        return Err(ShelError::Collinear(sigma2));
    }
    let mut zeta = vec![0.0; p];
    for (k, &j) in others.iter().enumerate() {
        zeta[j] = f.beta[k];
    }
    let mut a_hat = vec![0.0; p + synthetic.p0()];
    for j in 0..p {
        a_hat[j] = if j == target { 1.0 } else { -zeta[j] } / sigma2;
    }
    for (k, g) in f.gamma.iter().enumerate() {
        a_hat[p + k] = -g / sigma2;
    }
    Ok(NodewiseFit {
        target,
        zeta,
        gamma: f.gamma,
        sigma2,
        lambda,
        a_hat,
    })
}

/// Per-observation influence `φ̂_ij = â_lᵀ W_ij (y_ij − μ̂_ij)` and the debiased
/// coefficient `β̂_l + N⁻¹ Σ φ̂_ij`.
pub fn debias(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    fit: &PenalizedFit<f64>,
    node: &NodewiseFit,
) -> Result<(f64, Vec<f64>)> {
    let n = data.n_obs();
    let p = data.n_covariates();
    if node.a_hat.len() != p + synthetic.p0() || fit.beta.len() != p || fit.gamma.len() != synthetic.p0() {
        return Err(ShelError::Dimension("fit, nodewise vector and design disagree".into()));
    }
    let mu = fitted_mean(data, synthetic, fit);
    let a_beta = DVector::from_column_slice(&node.a_hat[..p]);
    let a_gamma = DVector::from_column_slice(&node.a_hat[p..]);
    let proj = data.x() * a_beta + &synthetic.b * a_gamma;
    let phi: Vec<f64> = (0..n).map(|i| proj[i] * (data.y()[i] - mu[i])).collect();
    let correction = phi.iter().sum::<f64>() / n as f64;
    Ok((fit.beta[node.target] + correction, phi))
}

/// Cluster totals `Φ̂_i` of the influence values and `V̂ = m⁻¹ Σ Φ̂_i²`.
pub fn cluster_variance(data: &ClusteredDataset<f64>, phi: &[f64]) -> (f64, Vec<f64>) {
    let totals: Vec<f64> = data
        .clusters()
        .iter()
        .map(|rows| rows.iter().map(|&r| phi[r]).sum())
        .collect();
    let v = totals.iter().map(|t| t * t).sum::<f64>() / totals.len() as f64;
    (v, totals)
}

#[derive(Debug, Clone, Serialize)]
pub struct DebiasRow {
    pub index: usize,
    pub estimate: f64,
    pub debiased: f64,
    pub variance: f64,
    pub se: f64,
    pub z: f64,
    pub pvalue: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `V̂ = 0`: the interval collapses and the p-value is set by the sign.
    pub degenerate: bool,
    pub a_l1: f64,
    /// `‖Ĥ â − e_l‖∞` with `Ĥ` the weighted Gram matrix of the centered design.
    pub kkt_gap: f64,
    pub nodewise_lambda: f64,
    pub error: Option<String>,
}

impl DebiasRow {
    fn failed(index: usize, estimate: f64, err: &ShelError) -> Self {
        DebiasRow {
            index,
            estimate,
            debiased: f64::NAN,
            variance: f64::NAN,
            se: f64::NAN,
            z: f64::NAN,
            pvalue: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            degenerate: false,
            a_l1: f64::NAN,
            kkt_gap: f64::NAN,
            nodewise_lambda: f64::NAN,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DebiasReport {
    pub level: f64,
    pub n_clusters: usize,
    pub rows: Vec<DebiasRow>,
}

/// Weighted Gram product `Ĥ â` restricted to the `(β, γ)` frame, with columns
/// centered at their weighted means to account for the unpenalized intercept.
fn gram_gap(data: &ClusteredDataset<f64>, synthetic: &SyntheticDesign<f64>, v: &[f64], node: &NodewiseFit) -> f64 {
    let n = data.n_obs();
    let p = data.n_covariates();
    let wsum: f64 = v.iter().sum();
    let w = DMatrix::from_fn(n, p + synthetic.p0(), |i, j| {
        if j < p {
            data.x()[(i, j)]
        } else {
            synthetic.b[(i, j - p)]
        }
    });
    let means: Vec<f64> = (0..w.ncols())
        .map(|j| if wsum > 0.0 { w.column(j).iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / wsum } else { 0.0 })
        .collect();
    let a = DVector::from_column_slice(&node.a_hat);
    let mean_shift: f64 = means.iter().zip(&node.a_hat).map(|(m, a)| m * a).sum();
    let mut d = &w * a;
    d.add_scalar_mut(-mean_shift);
    for i in 0..n {
        d[i] *= v[i];
    }
    let mut worst: f64 = 0.0;
    for j in 0..w.ncols() {
        let h = (w.column(j).dot(&d) - means[j] * d.sum()) / n as f64;
        let target = if j == node.target { 1.0 } else { 0.0 };
        worst = worst.max((h - target).abs());
    }
    worst
}

fn test_one(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    fit: &PenalizedFit<f64>,
    v: &[f64],
    target: usize,
    config: &NodewiseConfig,
    solver: &SolverConfig<f64>,
) -> Result<DebiasRow> {
    let node = nodewise_fit(data, synthetic, v, target, config, solver)?;
    let (debiased, phi) = debias(data, synthetic, fit, &node)?;
    let (variance, _) = cluster_variance(data, &phi);
    let m = data.n_clusters() as f64;
    let n = data.n_obs() as f64;
    // Var(N⁻¹ Σ_i Φ_i) = m V / N²
    let se = (m * variance).sqrt() / n;
    let q = crate::inference::normal_quantile(0.5 + 0.5 * config.level);
    let degenerate = !(se > 0.0);
    let (z, pvalue) = if degenerate {
        let z = if debiased == 0.0 { 0.0 } else { debiased.signum() * f64::INFINITY };
        (z, if debiased == 0.0 { 1.0 } else { 0.0 })
    } else {
        let z = debiased / se;
        (z, (2.0 * upper_tail(z.abs())).min(1.0))
    };
    Ok(DebiasRow {
        index: target,
        estimate: fit.beta[target],
        debiased,
        variance,
        se,
        z,
        pvalue,
        ci_lo: debiased - q * se,
        ci_hi: debiased + q * se,
        degenerate,
        a_l1: node.a_hat.iter().map(|a| a.abs()).sum(),
        kkt_gap: gram_gap(data, synthetic, v, &node),
        nodewise_lambda: node.lambda,
        error: None,
    })
}

/// Debiased tests for each target covariate of a SHEL or GSHEL fit.
///
/// Targets are processed independently; a failing target yields a row carrying
/// the error instead of aborting the others.
pub fn debiased_test_suite(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    fit: &PenalizedFit<f64>,
    targets: &[usize],
    config: &NodewiseConfig,
    solver: &SolverConfig<f64>,
) -> Result<DebiasReport> {
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(ShelError::Config("confidence level must lie in (0, 1)".into()));
    }
    let p = data.n_covariates();
    if let Some(&t) = targets.iter().find(|&&t| t >= p) {
        return Err(ShelError::Config(format!("target {t} outside 0..{p}")));
    }
    if fit.family != data.family() {
        return Err(ShelError::Config("fit family differs from the data family".into()));
    }
    let v = working_variance(data, synthetic, fit);
    let rows = targets
        .par_iter()
        .map(|&t| {
            test_one(data, synthetic, fit, &v, t, config, solver)
                .unwrap_or_else(|e| DebiasRow::failed(t, fit.beta[t], &e))
        })
        .collect();
    Ok(DebiasReport {
        level: config.level,
        n_clusters: data.n_clusters(),
        rows,
    })
}

impl DebiasReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "estimate",
            "debiased",
            "variance",
            "se",
            "z",
            "pvalue",
            "ci_lo",
            "ci_hi",
            "a_l1",
            "kkt_gap",
            "nodewise_lambda",
            "degenerate",
            "error",
        ])?;
        for r in &self.rows {
            let num = |v: f64| format!("{v:e}");
            w.write_record([
                (r.index + 1).to_string(),
                num(r.estimate),
                num(r.debiased),
                num(r.variance),
                num(r.se),
                num(r.z),
                num(r.pvalue),
                num(r.ci_lo),
                num(r.ci_hi),
                num(r.a_l1),
                num(r.kkt_gap),
                num(r.nodewise_lambda),
                r.degenerate.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
