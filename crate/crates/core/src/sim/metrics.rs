use crate::data::ClusterIndex;
use crate::mixed::anova_components;

use super::dgp::Truth;

/// False and true positives of an estimated coefficient vector.
pub fn score_selection(beta_hat: &[f64], truth: &Truth) -> (usize, usize) {
    let mut fp = 0;
    let mut tp = 0;
    for (b, t) in beta_hat.iter().zip(&truth.beta) {
        if *b != 0.0 {
            if *t != 0.0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (fp, tp)
}

/// In-sample sensitivity and specificity of the rule `μ̂ > 0.5`. Either is NaN
/// when its class is absent.
pub fn classification(y: &[f64], mu_hat: &[f64]) -> (f64, f64) {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&yi, &m) in y.iter().zip(mu_hat) {
        let predicted = m > 0.5;
        if yi == 1.0 {
            pos += 1;
            tp += predicted as usize;
        } else {
            neg += 1;
            tn += (!predicted) as usize;
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    (rate(tp, pos), rate(tn, neg))
}

/// Root mean squared residual, `‖β̂ − β⁰‖₁`, and the intraclass correlation of
/// the residuals (0 when they carry no variance at all).
pub fn score_estimation(
    y: &[f64],
    fitted: &[f64],
    beta_hat: &[f64],
    truth: &Truth,
    clusters: &ClusterIndex,
) -> (f64, f64, f64) {
    let resid: Vec<f64> = y.iter().zip(fitted).map(|(a, b)| a - b).collect();
    let rmse = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
    let l1 = beta_hat.iter().zip(&truth.beta).map(|(a, b)| (a - b).abs()).sum();
    let icc = anova_components(&resid, clusters).map(|c| c.icc()).unwrap_or(f64::NAN);
    (rmse, l1, icc)
}

/// One tested coefficient.
#[derive(Debug, Clone, Copy)]
pub struct TestOutcome {
    pub index: usize,
    pub pvalue: f64,
    pub ci_length: f64,
}

/// Rejection rate among tested null coefficients, among tested true ones, and
/// the median interval length over all tested coefficients. Rates are NaN when
/// their group is empty.
pub fn score_inference(tests: &[TestOutcome], truth: &Truth, alpha: f64) -> (f64, f64, f64) {
    let (mut null_n, mut null_rej, mut true_n, mut true_rej) = (0usize, 0usize, 0usize, 0usize);
    for t in tests {
        let reject = t.pvalue < alpha;
        if truth.beta[t.index] == 0.0 {
            null_n += 1;
            null_rej += reject as usize;
        } else {
            true_n += 1;
            true_rej += reject as usize;
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let lengths: Vec<f64> = tests.iter().map(|t| t.ci_length).collect();
    (rate(null_rej, null_n), rate(true_rej, true_n), median(&lengths))
}

/// Median of the non-NaN values (infinite values count), NaN if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
