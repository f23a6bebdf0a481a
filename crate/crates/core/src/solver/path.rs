use nalgebra::DVector;

use super::gaussian::GaussianProblem;
use super::{expit, fit_binomial, PenalizedFit, SolverConfig};
use crate::data::Family;
use crate::design::StackedDesign;
use crate::error::{Result, ShelError};
use crate::scalar::Scalar;

/// Smallest `λ₁` at which every penalized coefficient is zero:
/// `max_k |Z_kᵀ r₀| / (N w_k)` over penalized columns, with `r₀` the residual
/// (Gaussian) or score residual `y − μ₀` (binomial) of the null model holding the
/// intercept and unpenalized columns.
pub fn lambda_max<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    family: Family,
    config: &SolverConfig<T>,
) -> Result<T> {
    let w = design.weights();
    let grad: Vec<T> = match family {
        Family::Gaussian => GaussianProblem::new(design, y)?.null_gradient(config)?,
        Family::Binomial => {
            let null = fit_binomial(design, y, T::lit(f64::INFINITY), config, None)?;
            let mu = null.linear_predictor(design).map(expit);
            let r = y - mu;
            let n = T::from_usize(design.n_obs()).unwrap();
            (0..w.len())
                .map(|j| design.z().column(j).dot(&r) / n)
                .collect()
        }
    };
    let mut lmax = T::zero();
    for (g, &wk) in grad.iter().zip(w) {
        if wk > T::zero() {
            lmax = lmax.max(g.abs() / wk);
        }
    }
    // rounding guard so that the fit at λ_max is exactly zero
    Ok(lmax * (T::one() + T::lit(1e-10)))
}

/// Descending log-spaced grid from `λ_max` down to `ratio_min · λ_max`.
pub fn lambda_path<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    family: Family,
    n_lambda: usize,
    ratio_min: f64,
    config: &SolverConfig<T>,
) -> Result<Vec<T>> {
    if n_lambda < 2 {
        return Err(ShelError::Config("n_lambda must be at least 2".into()));
    }
    if !(ratio_min > 0.0 && ratio_min < 1.0) {
        return Err(ShelError::Config("ratio_min must lie in (0, 1)".into()));
    }
    let lmax = lambda_max(design, y, family, config)?.f64();
    let lmax = if lmax > 0.0 { lmax } else { f64::EPSILON };
    Ok(log_grid(lmax, ratio_min, n_lambda)
        .into_iter()
        .map(T::lit)
        .collect())
}

pub(crate) fn log_grid(lmax: f64, ratio_min: f64, n: usize) -> Vec<f64> {
    let step = ratio_min.ln() / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == 0 {
                lmax
            } else if i == n - 1 {
                lmax * ratio_min
            } else {
                lmax * (step * i as f64).exp()
            }
        })
        .collect()
}

/// Fits every `λ₁` of a descending grid with warm starts.
pub fn fit_path<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    family: Family,
    lambdas: &[T],
    config: &SolverConfig<T>,
) -> Result<Vec<PenalizedFit<T>>> {
    config.validate()?;
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(ShelError::Config("lambda grid must be strictly descending".into()));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    match family {
        Family::Gaussian => {
            let mut prob = GaussianProblem::new(design, y)?;
            let mut warm: Option<Vec<T>> = None;
            for &lam in lambdas {
                let sol = prob.solve(lam, warm.as_deref(), config)?;
                warm = Some(sol.theta.clone());
                out.push(prob.into_fit(lam, sol));
            }
        }
        Family::Binomial => {
            for &lam in lambdas {
                let warm = out
                    .last()
                    .map(|f: &PenalizedFit<T>| (f.theta_scaled.as_slice(), f.intercept_scaled));
                let fit = fit_binomial(design, y, lam, config, warm)?;
                out.push(fit);
            }
        }
    }
    Ok(out)
}
