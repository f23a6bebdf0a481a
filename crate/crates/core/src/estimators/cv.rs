use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusteredDataset, Family};
use crate::design::{coupling_ratio, predict_original, StackedDesign, SyntheticDesign};
use crate::error::{Result, ShelError};
use crate::solver::path::log_grid;
use crate::solver::{fit_path, lambda_max, log1pexp, PenalizedFit, SolverConfig};

/// How a penalty is picked from the cross-validation curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Minimizer of the mean fold error.
    Min,
    /// Largest penalty within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub n_lambda: usize,
    pub ratio_min: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            n_lambda: 100,
            ratio_min: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    /// Descending penalty grid.
    pub lambdas: Vec<f64>,
    /// Mean held-out error per penalty.
    pub cv_mean: Vec<f64>,
    /// Standard error of the mean across folds.
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub index_min: usize,
    pub index_1se: usize,
    /// Fold of each cluster (zero-based, in cluster order).
    pub fold_of_cluster: Vec<usize>,
    /// True when the first fold assignment left a training set with one class.
    pub refolded: bool,
}

impl CvResult {
    pub fn lambda(&self, rule: LambdaRule) -> f64 {
        match rule {
            LambdaRule::Min => self.lambda_min,
            LambdaRule::OneSe => self.lambda_1se,
        }
    }
}

/// Shuffles clusters with a seeded generator and deals them into `k` folds, so
/// fold sizes differ by at most one cluster.
pub fn fold_assignment(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold = vec![0; m];
    for (pos, &c) in order.iter().enumerate() {
        fold[c] = pos % k;
    }
    fold
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn splits(data: &ClusteredDataset<f64>, fold_of_cluster: &[usize], k: usize) -> Vec<Split> {
    let of_row = data.clusters().of_row();
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.n_obs()).partition(|&r| fold_of_cluster[of_row[r]] == f);
            Split { train, test }
        })
        .collect()
}

fn training_has_both_classes(y: &DVector<f64>, s: &Split) -> bool {
    let ones = s.train.iter().filter(|&&r| y[r] == 1.0).count();
    ones > 0 && ones < s.train.len()
}

fn held_out_error(family: Family, y: &[f64], pred: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    match family {
        Family::Gaussian => y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n,
        Family::Binomial => {
            // deviance −2 log-likelihood in terms of the linear predictor
            y.iter()
                .zip(pred.iter())
                .map(|(&yi, &eta)| 2.0 * (log1pexp(eta) - yi * eta))
                .sum::<f64>()
                / n
        }
    }
}

/// K-fold cross-validation over whole clusters.
///
/// `offsets` are extra unpenalized columns carried through every fit. The penalty
/// grid starts at the largest `λ_max` over the full data and every training set,
/// so the first grid point gives the null model on every fold.
pub fn cross_validate(
    data: &ClusteredDataset<f64>,
    synthetic: &SyntheticDesign<f64>,
    offsets: Option<&DMatrix<f64>>,
    cv: &CvConfig,
    solver: &SolverConfig<f64>,
) -> Result<CvResult> {
    let m = data.n_clusters();
    let k = cv.folds;
    if k < 2 || k > m {
        return Err(ShelError::Config(format!("need 2 <= folds <= clusters ({m}), got {k}")));
    }
    let family = data.family();
    let y = data.y();
    let empty = DMatrix::zeros(data.n_obs(), 0);
    let off = offsets.unwrap_or(&empty);
    let ratio = coupling_ratio(data.n_covariates(), synthetic.p0());

    let mut fold_of_cluster = fold_assignment(m, k, cv.seed);
    let mut parts = splits(data, &fold_of_cluster, k);
    let mut refolded = false;
    if family == Family::Binomial && !parts.iter().all(|s| training_has_both_classes(y, s)) {
        refolded = true;
        fold_of_cluster = fold_assignment(m, k, cv.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        parts = splits(data, &fold_of_cluster, k);
        if !parts.iter().all(|s| training_has_both_classes(y, s)) {
            return Err(ShelError::Data(
                "a cross-validation training set has a single response class after refolding".into(),
            ));
        }
    }

    let full = StackedDesign::with_offsets(data.x(), &synthetic.b, off, ratio)?;
    let fold_designs: Vec<(StackedDesign<f64>, DVector<f64>)> = parts
        .par_iter()
        .map(|s| {
            let x = data.x().select_rows(s.train.iter());
            let b = synthetic.b.select_rows(s.train.iter());
            let o = off.select_rows(s.train.iter());
            let yt = DVector::from_iterator(s.train.len(), s.train.iter().map(|&r| y[r]));
            Ok((StackedDesign::with_offsets(&x, &b, &o, ratio)?, yt))
        })
        .collect::<Result<_>>()?;

    let mut top = lambda_max(&full, y, family, solver)?;
    for (d, yt) in &fold_designs {
        top = top.max(lambda_max(d, yt, family, solver)?);
    }
    let top = if top > 0.0 { top } else { f64::EPSILON };
    let lambdas = log_grid(top, cv.ratio_min, cv.n_lambda);

    let fold_errors: Vec<Vec<f64>> = parts
        .par_iter()
        .zip(fold_designs.par_iter())
        .map(|(s, (d, yt))| {
            let fits = fit_path(d, yt, family, &lambdas, solver)?;
            let xt = data.x().select_rows(s.test.iter());
            let bt = synthetic.b.select_rows(s.test.iter());
            let ot = off.select_rows(s.test.iter());
            let yv: Vec<f64> = s.test.iter().map(|&r| y[r]).collect();
            Ok(fits
                .iter()
                .map(|f: &PenalizedFit<f64>| {
                    let coef: Vec<f64> = f.beta.iter().chain(&f.gamma).chain(&f.offset_coef).copied().collect();
                    let pred = predict_original(&xt, &bt, &ot, &coef, f.intercept);
                    held_out_error(family, &yv, &pred)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let nl = lambdas.len();
    let kf = k as f64;
    let mut cv_mean = vec![0.0; nl];
    let mut cv_se = vec![0.0; nl];
    for j in 0..nl {
        let mean = fold_errors.iter().map(|e| e[j]).sum::<f64>() / kf;
        let var = fold_errors.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        cv_mean[j] = mean;
        cv_se[j] = (var / kf).sqrt();
    }
    let mut index_min = 0;
    for j in 1..nl {
        if cv_mean[j] < cv_mean[index_min] {
            index_min = j;
        }
    }
    let bound = cv_mean[index_min] + cv_se[index_min];
    let index_1se = (0..=index_min).find(|&j| cv_mean[j] <= bound).unwrap_or(index_min);
    Ok(CvResult {
        lambda_min: lambdas[index_min],
        lambda_1se: lambdas[index_1se],
        lambdas,
        cv_mean,
        cv_se,
        index_min,
        index_1se,
        fold_of_cluster,
        refolded,
    })
}
