use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, ShelError};

/// Largest number of candidate columns searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Best sparse linear predictor of the cluster intercepts from cluster-level
/// covariate means.
#[derive(Debug, Clone, Serialize)]
pub struct TargetShift {
    /// Coefficients over all `p₀` columns, zero off the support.
    pub gamma_star: Vec<f64>,
    pub support: Vec<usize>,
    /// Mean squared approximation error `‖α − B_c γ*‖² / m`.
    pub delta_m: f64,
    /// Set when the support came from greedy selection rather than full search.
    pub approximate: bool,
}

fn least_squares(bc: &DMatrix<f64>, alpha: &DVector<f64>, support: &[usize]) -> Result<(DVector<f64>, f64)> {
    if support.is_empty() {
        return Ok((DVector::zeros(0), alpha.norm_squared()));
    }
    let sub = bc.select_columns(support);
    let coef = sub
        .clone()
        .svd(true, true)
        .solve(alpha, 1e-12)
        .map_err(|e| ShelError::numerical("target shift least squares", e))?;
    let rss = (alpha - &sub * &coef).norm_squared();
    Ok((coef, rss))
}

fn assemble(p0: usize, m: usize, support: Vec<usize>, coef: &DVector<f64>, rss: f64, approximate: bool) -> TargetShift {
    let mut gamma_star = vec![0.0; p0];
    for (k, &j) in support.iter().enumerate() {
        gamma_star[j] = coef[k];
    }
    TargetShift {
        gamma_star,
        support,
        delta_m: rss / m as f64,
        approximate,
    }
}

fn check(alpha: &[f64], bc: &DMatrix<f64>) -> Result<DVector<f64>> {
    if alpha.len() != bc.nrows() {
        return Err(ShelError::Dimension(format!(
            "alpha has {} entries but B_c has {} rows",
            alpha.len(),
            bc.nrows()
        )));
    }
    if alpha.is_empty() {
        return Err(ShelError::EmptyDataset);
    }
    Ok(DVector::from_column_slice(alpha))
}

/// Exhaustive search over every support of size `min(m2, p₀)`, fitting least
/// squares without intercept on each and keeping the smallest residual.
pub fn target_shift_oracle(alpha: &[f64], bc: &DMatrix<f64>, m2: usize) -> Result<TargetShift> {
    let a = check(alpha, bc)?;
    let p0 = bc.ncols();
    if p0 > EXHAUSTIVE_LIMIT {
        return Err(ShelError::TooManyColumns {
            p0,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let size = m2.min(p0);
    let mut best: Option<(Vec<usize>, DVector<f64>, f64)> = None;
    for support in (0..p0).combinations(size) {
        let (coef, rss) = least_squares(bc, &a, &support)?;
        if best.as_ref().is_none_or(|b| rss < b.2) {
            best = Some((support, coef, rss));
        }
    }
    let (support, coef, rss) = best.expect("at least one support");
    Ok(assemble(p0, a.len(), support, &coef, rss, false))
}

/// Orthogonal matching pursuit: adds the column most correlated with the
/// current residual until `m2` columns are in, refitting after each step.
pub fn target_shift_greedy(alpha: &[f64], bc: &DMatrix<f64>, m2: usize) -> Result<TargetShift> {
    let a = check(alpha, bc)?;
    let p0 = bc.ncols();
    let norms: Vec<f64> = bc.column_iter().map(|c| c.norm()).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut rss = a.norm_squared();
    let mut residual = a.clone();
    while support.len() < m2.min(p0) {
        let next = (0..p0)
            .filter(|j| !support.contains(j) && norms[*j] > 0.0)
            .map(|j| (j, (bc.column(j).dot(&residual) / norms[j]).abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let Some((j, score)) = next else { break };
        if score == 0.0 {
            break;
        }
        support.push(j);
        let (c, r) = least_squares(bc, &a, &support)?;
        residual = &a - bc.select_columns(&support) * &c;
        coef = c;
        rss = r;
    }
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by_key(|&k| support[k]);
    let sorted: Vec<usize> = order.iter().map(|&k| support[k]).collect();
    let coef = DVector::from_iterator(order.len(), order.iter().map(|&k| coef[k]));
    Ok(assemble(p0, a.len(), sorted, &coef, rss, true))
}
