//! Weighted-ℓ₁ penalized solvers on a [`StackedDesign`].
//!
//! Both solvers minimize `loss(θ) + λ₁ Σ w_k |θ_k|` over the standardized columns
//! of the design with an unpenalized intercept. Columns with weight 0 are left
//! unpenalized.

mod binomial;
mod gaussian;
pub(crate) mod path;

pub use binomial::fit_binomial;
pub use gaussian::{fit_gaussian, GaussianProblem};
pub use path::{fit_path, lambda_max, lambda_path};

use nalgebra::DVector;

use crate::data::Family;
use crate::design::{Block, StackedDesign};
use crate::error::{Result, ShelError};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct SolverConfig<T: Scalar> {
    /// Convergence threshold on the max absolute coefficient change in scaled space.
    pub tol: T,
    pub max_iters: usize,
    pub max_irls: usize,
    /// Checks that the objective never increases between coordinate sweeps.
    pub check_descent: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        let eps = T::default_epsilon().f64();
        SolverConfig {
            tol: T::lit(f64::max(1e-8, 100.0 * eps)),
            max_iters: 10_000,
            max_irls: 50,
            check_descent: false,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(ShelError::Config("solver tol must be positive".into()));
        }
        if self.max_iters == 0 || self.max_irls == 0 {
            return Err(ShelError::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// `sign(z) · max(|z| − t, 0)`; returns 0 on the boundary `|z| = t`.
#[inline]
pub fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn penalty_threshold<T: Scalar>(lambda: T, w: T) -> T {
    if w == T::zero() {
        T::zero()
    } else {
        lambda * w
    }
}

/// Result of a penalized fit, on both the original and the standardized scale.
#[derive(Debug, Clone)]
pub struct PenalizedFit<T: Scalar> {
    pub family: Family,
    /// Covariate coefficients on the original scale (length p).
    pub beta: Vec<T>,
    /// Synthetic-column coefficients on the original scale (length p0).
    pub gamma: Vec<T>,
    /// Coefficients of unpenalized offset columns, if any.
    pub offset_coef: Vec<T>,
    pub intercept: T,
    pub lambda1: T,
    pub lambda2: T,
    /// Sorted indices `k` into the stacked `(β, γ)` frame with `θ_k ≠ 0`.
    pub active_set: Vec<usize>,
    pub signs: Vec<i8>,
    pub n_iters: usize,
    pub converged: bool,
    /// Coefficients for the kept standardized columns.
    pub theta_scaled: Vec<T>,
    pub intercept_scaled: T,
}

impl<T: Scalar> PenalizedFit<T> {
    pub(crate) fn assemble(
        design: &StackedDesign<T>,
        family: Family,
        lambda1: T,
        theta: Vec<T>,
        intercept_scaled: T,
        n_iters: usize,
        converged: bool,
    ) -> Self {
        let (frame, intercept) = design.unscale(&theta, intercept_scaled);
        let p = design.p();
        let p0 = design.p0();
        let mut active_set = Vec::new();
        let mut signs = Vec::new();
        for (j, &k) in design.kept().iter().enumerate() {
            if design.block(k) != Block::Offset && theta[j] != T::zero() {
                active_set.push(k);
                signs.push(if theta[j] > T::zero() { 1 } else { -1 });
            }
        }
        // kept is increasing, so active_set is sorted
        PenalizedFit {
            family,
            beta: frame[..p].to_vec(),
            gamma: frame[p..p + p0].to_vec(),
            offset_coef: frame[p + p0..].to_vec(),
            intercept,
            lambda1,
            lambda2: lambda1 * design.ratio(),
            active_set,
            signs,
            n_iters,
            converged,
            theta_scaled: theta,
            intercept_scaled,
        }
    }

    /// Indices `l < p` of selected covariates.
    pub fn selected_beta(&self) -> Vec<usize> {
        let p = self.beta.len();
        self.active_set.iter().copied().filter(|&k| k < p).collect()
    }

    /// Linear predictor on the standardized design.
    pub fn linear_predictor(&self, design: &StackedDesign<T>) -> DVector<T> {
        design.predict_scaled(&self.theta_scaled, self.intercept_scaled)
    }

    /// Fitted means: the linear predictor (Gaussian) or its inverse logit (binomial).
    pub fn fitted(&self, design: &StackedDesign<T>) -> DVector<T> {
        let eta = self.linear_predictor(design);
        match self.family {
            Family::Gaussian => eta,
            Family::Binomial => eta.map(expit),
        }
    }
}

#[inline]
pub fn expit<T: Scalar>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^η)` without overflow.
#[inline]
pub fn log1pexp<T: Scalar>(eta: T) -> T {
    if eta > T::zero() {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Fits the family-appropriate penalized model at a single `λ₁`.
pub fn fit<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    family: Family,
    lambda1: T,
    config: &SolverConfig<T>,
) -> Result<PenalizedFit<T>> {
    match family {
        Family::Gaussian => fit_gaussian(design, y, lambda1, config),
        Family::Binomial => fit_binomial(design, y, lambda1, config, None),
    }
}

/// Largest violation of the weighted-lasso stationarity conditions at `fit`.
///
/// With `g_k = N⁻¹ Z_kᵀ(y − μ̂)`, active coordinates need `g_k = λ w_k s_k` and
/// inactive ones `|g_k| ≤ λ w_k`.
pub fn kkt_violation<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    fit: &PenalizedFit<T>,
) -> f64 {
    let mu = fit.fitted(design);
    let resid = y - mu;
    let n = design.n_obs() as f64;
    let mut worst = resid.sum().f64().abs() / n;
    for (j, &w) in design.weights().iter().enumerate() {
        let g = design.z().column(j).dot(&resid).f64() / n;
        let t = penalty_threshold(fit.lambda1, w).f64();
        let th = fit.theta_scaled[j];
        let v = if th != T::zero() {
            let s = if th > T::zero() { 1.0 } else { -1.0 };
            (g - t * s).abs()
        } else {
            (g.abs() - t).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}
