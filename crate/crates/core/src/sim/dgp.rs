use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClusteredDataset, Family};
use crate::error::{Result, ShelError};
use crate::solver::expit;

/// Size of the diagonal blocks of the covariate precision matrix.
pub const BLOCK: usize = 5;
/// Diagonal and off-diagonal entries of each precision block.
pub const PRECISION_DIAG: f64 = 1.0;
pub const PRECISION_OFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// Cluster means and intercepts drawn independently.
    Independent,
    /// Both driven by a shared latent cluster variable.
    Endogenous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptDist {
    /// Standard normal.
    Gaussian,
    /// Equal mixture of N(−1, 0.5) and N(1, 0.5), the second argument a variance.
    GaussianMixture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    /// Number of clusters.
    pub m: usize,
    /// Observations per cluster.
    pub n: usize,
    pub p: usize,
    /// Number of covariates whose means vary across clusters.
    pub p0_true: usize,
    pub dependence: Dependence,
    pub intercept_dist: InterceptDist,
    /// Multiplier applied to the drawn intercepts (the latent variable under
    /// endogeneity is left unscaled).
    pub intercept_scale: f64,
    pub family: Family,
    /// Zero-based indices of the nonzero coefficients.
    pub beta_support: Vec<usize>,
    pub beta_values: Vec<f64>,
    /// Standard deviation of the Gaussian noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            m: 100,
            n: 4,
            p: 200,
            p0_true: 50,
            dependence: Dependence::Endogenous,
            intercept_dist: InterceptDist::Gaussian,
            intercept_scale: 1.0,
            family: Family::Gaussian,
            beta_support: vec![0, 5, 10, 11, 15, 16],
            beta_values: vec![0.5, 0.5, 1.0, 1.0, 1.5, 1.5],
            noise_sd: 1.0,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n == 0 || self.p == 0 {
            return Err(ShelError::Config("need m >= 2, n >= 1 and p >= 1".into()));
        }
        if self.p0_true > self.p {
            return Err(ShelError::Config(format!("p0_true {} exceeds p {}", self.p0_true, self.p)));
        }
        if self.beta_support.len() != self.beta_values.len() {
            return Err(ShelError::Config("beta_support and beta_values lengths differ".into()));
        }
        if let Some(&j) = self.beta_support.iter().find(|&&j| j >= self.p) {
            return Err(ShelError::Config(format!("beta support index {j} outside 0..{}", self.p)));
        }
        if !(self.noise_sd >= 0.0) || !(self.intercept_scale >= 0.0) {
            return Err(ShelError::Config("noise_sd and intercept_scale must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn beta(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.p];
        for (&j, &v) in self.beta_support.iter().zip(&self.beta_values) {
            b[j] = v;
        }
        b
    }
}

/// Quantities behind a generated dataset.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    /// Sorted zero-based indices of the heterogeneous covariates.
    pub p0_set: Vec<usize>,
    pub beta: Vec<f64>,
    /// Intercept of each cluster.
    pub alpha: Vec<f64>,
    /// Cluster means, `m × p0_set.len()`, column `k` for covariate `p0_set[k]`.
    #[serde(skip)]
    pub mu: DMatrix<f64>,
}

impl Truth {
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }
}

/// Inverse of the `k × k` precision block, in closed form: for `aI + bJ` the
/// inverse is `(I − b/(a + k b) J)/a`.
pub fn covariance_block(k: usize) -> DMatrix<f64> {
    let a = PRECISION_DIAG - PRECISION_OFF;
    let b = PRECISION_OFF;
    let c = b / (a + k as f64 * b);
    DMatrix::from_fn(k, k, |i, j| (if i == j { 1.0 } else { 0.0 } - c) / a)
}

fn draw_intercept(dist: InterceptDist, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    match dist {
        InterceptDist::Gaussian => z,
        InterceptDist::GaussianMixture => {
            let centre = if rng.random::<bool>() { 1.0 } else { -1.0 };
            centre + 0.5f64.sqrt() * z
        }
    }
}

/// Draws one dataset. Rows are ordered cluster by cluster; the cluster label of
/// row `r` is `r / n`.
pub fn generate(config: &DgpConfig) -> Result<(ClusteredDataset<f64>, Truth)> {
    config.validate()?;
    let (m, n, p) = (config.m, config.n, config.p);
    let rows = m * n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut p0_set = sample(&mut rng, p, config.p0_true).into_vec();
    p0_set.sort_unstable();
    let k0 = p0_set.len();

    let mut mu = DMatrix::zeros(m, k0);
    let mut alpha = vec![0.0; m];
    match config.dependence {
        Dependence::Independent => {
            for a in alpha.iter_mut() {
                *a = config.intercept_scale * draw_intercept(config.intercept_dist, &mut rng);
            }
            for v in mu.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        Dependence::Endogenous => {
            let h: Vec<f64> = (0..k0).map(|_| rng.random::<f64>()).collect();
            let u: Vec<f64> = (0..m).map(|_| draw_intercept(config.intercept_dist, &mut rng)).collect();
            for i in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                alpha[i] = config.intercept_scale * (0.8 * u[i] + 0.2 * z);
            }
            for k in 0..k0 {
                for i in 0..m {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu[(i, k)] = h[k] * u[i] + z / n as f64;
                }
            }
        }
    }

    let mut x = DMatrix::zeros(rows, p);
    let mut start = 0;
    while start < p {
        let k = BLOCK.min(p - start);
        let chol = covariance_block(k)
            .cholesky()
            .expect("covariance block is positive definite");
        let l = chol.l();
        let mut z = DVector::zeros(k);
        for r in 0..rows {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let draw = &l * &z;
            for j in 0..k {
                x[(r, start + j)] = draw[j];
            }
        }
        start += k;
    }
    for (k, &j) in p0_set.iter().enumerate() {
        for r in 0..rows {
            x[(r, j)] += mu[(r / n, k)];
        }
    }

    let beta = config.beta();
    let mut eta = &x * DVector::from_column_slice(&beta);
    for r in 0..rows {
        eta[r] += alpha[r / n];
    }
    let y = match config.family {
        Family::Gaussian => DVector::from_fn(rows, |r, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            eta[r] + config.noise_sd * e
        }),
        Family::Binomial => DVector::from_fn(rows, |r, _| {
            if rng.random::<f64>() < expit(eta[r]) {
                1.0
            } else {
                0.0
            }
        }),
    };
    let labels = (0..rows).map(|r| (r / n) as i64).collect();
    let data = ClusteredDataset::new(y, x, labels, config.family)?;
    Ok((
        data,
        Truth {
            p0_set,
            beta,
            alpha,
            mu,
        },
    ))
}
