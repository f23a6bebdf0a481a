use nalgebra::{DMatrix, DVector};

use super::{penalty_threshold, soft_threshold, PenalizedFit, SolverConfig};
use crate::data::Family;
use crate::design::StackedDesign;
use crate::error::{Result, ShelError};
use crate::scalar::{dot, Scalar};

/// Squared-error weighted lasso on a fixed design, with lazily cached Gram columns
/// shared across calls (warm-started path fits reuse them).
pub struct GaussianProblem<'a, T: Scalar> {
    design: &'a StackedDesign<T>,
    y_mean: T,
    yy: T,
    /// `N⁻¹ Zᵀ y_c`
    zy: Vec<T>,
    /// `N⁻¹ ‖Z_j‖²`
    diag: Vec<T>,
    gram: Vec<Option<Vec<T>>>,
    n: T,
}

pub(crate) struct Solution<T: Scalar> {
    pub theta: Vec<T>,
    pub iters: usize,
    pub converged: bool,
}

impl<'a, T: Scalar> GaussianProblem<'a, T> {
    pub fn new(design: &'a StackedDesign<T>, y: &DVector<T>) -> Result<Self> {
        let n = design.n_obs();
        if y.len() != n {
            return Err(ShelError::Dimension(format!(
                "response has {} rows, design {}",
                y.len(),
                n
            )));
        }
        let nt = T::from_usize(n).unwrap();
        let y_mean = y.sum() / nt;
        let yc: Vec<T> = y.iter().map(|&v| v - y_mean).collect();
        let z = design.z();
        let k = z.ncols();
        let zy = (0..k).map(|j| dot(col(z, j), &yc) / nt).collect();
        let diag = (0..k).map(|j| dot(col(z, j), col(z, j)) / nt).collect();
        Ok(GaussianProblem {
            design,
            y_mean,
            yy: dot(&yc, &yc) / nt,
            zy,
            diag,
            gram: vec![None; k],
            n: nt,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.zy.len()
    }

    fn gram_column(&mut self, j: usize) -> &[T] {
        if self.gram[j].is_none() {
            let z = self.design.z();
            let zj = col(z, j);
            let g: Vec<T> = (0..z.ncols()).map(|i| dot(col(z, i), zj) / self.n).collect();
            self.gram[j] = Some(g);
        }
        self.gram[j].as_deref().unwrap()
    }

    /// `(2N)⁻¹‖y_c − Zθ‖² + λ Σ w|θ|`, using `grad = N⁻¹Zᵀ(y_c − Zθ)`.
    fn objective(&self, theta: &[T], grad: &[T], lambda: T) -> T {
        let w = self.design.weights();
        let mut fit = self.yy;
        let mut pen = T::zero();
        for j in 0..theta.len() {
            fit -= theta[j] * (self.zy[j] + grad[j]);
            if theta[j] != T::zero() {
                pen += penalty_threshold(lambda, w[j]) * theta[j].abs();
            }
        }
        fit / T::lit(2.0) + pen
    }

    pub(crate) fn solve(
        &mut self,
        lambda: T,
        warm: Option<&[T]>,
        cfg: &SolverConfig<T>,
    ) -> Result<Solution<T>> {
        let k = self.n_coef();
        let mut theta = match warm {
            Some(w) if w.len() == k => w.to_vec(),
            _ => vec![T::zero(); k],
        };
        let mut grad = self.zy.clone();
        for j in 0..k {
            if theta[j] != T::zero() {
                let t = theta[j];
                let g = self.gram_column(j).to_vec();
                for (gi, gij) in grad.iter_mut().zip(&g) {
                    *gi -= *gij * t;
                }
            }
        }
        let thresholds: Vec<T> = self
            .design
            .weights()
            .iter()
            .map(|&w| penalty_threshold(lambda, w))
            .collect();
        let all: Vec<usize> = (0..k).collect();
        let mut last_obj = if cfg.check_descent {
            Some(self.objective(&theta, &grad, lambda))
        } else {
            None
        };
        let mut iters = 0;
        let mut converged = false;
        'outer: while iters < cfg.max_iters {
            let max_change = self.sweep(&all, &mut theta, &mut grad, &thresholds);
            iters += 1;
            self.check(&mut last_obj, &theta, &grad, lambda)?;
            if max_change < cfg.tol {
                converged = true;
                break;
            }
            loop {
                let active: Vec<usize> = (0..k).filter(|&j| theta[j] != T::zero()).collect();
                let change = self.sweep(&active, &mut theta, &mut grad, &thresholds);
                iters += 1;
                self.check(&mut last_obj, &theta, &grad, lambda)?;
                if change < cfg.tol {
                    break;
                }
                if iters >= cfg.max_iters {
                    break 'outer;
                }
            }
        }
        if converged {
            self.polish(&mut theta, &thresholds);
        } else {
            log::warn!("coordinate descent hit max_iters = {} at lambda = {}", cfg.max_iters, lambda.f64());
        }
        Ok(Solution {
            theta,
            iters,
            converged,
        })
    }

    fn check(&self, last: &mut Option<T>, theta: &[T], grad: &[T], lambda: T) -> Result<()> {
        if let Some(prev) = *last {
            let obj = self.objective(theta, grad, lambda);
            let slack = T::lit(1e-12) * (T::one() + prev.abs());
            if obj > prev + slack {
                return Err(ShelError::numerical(
                    "gaussian coordinate descent",
                    format!("objective increased from {} to {}", prev.f64(), obj.f64()),
                ));
            }
            *last = Some(obj);
        }
        Ok(())
    }

    fn sweep(&mut self, coords: &[usize], theta: &mut [T], grad: &mut [T], thr: &[T]) -> T {
        let mut max_change = T::zero();
        for &j in coords {
            let d = self.diag[j];
            let old = theta[j];
            let u = grad[j] + d * old;
            let new = soft_threshold(u, thr[j]) / d;
            let delta = new - old;
            if delta != T::zero() {
                theta[j] = new;
                let g = self.gram_column(j);
                for (gi, gij) in grad.iter_mut().zip(g) {
                    *gi -= *gij * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Replaces the iterate by the exact solution on its active set and signs when
    /// that solution is consistent with the stationarity conditions. Returns whether
    /// the replacement happened.
    fn polish(&mut self, theta: &mut [T], thr: &[T]) -> bool {
        let k = theta.len();
        let support: Vec<usize> = (0..k)
            .filter(|&j| theta[j] != T::zero() || thr[j] == T::zero())
            .collect();
        if support.is_empty() {
            return false;
        }
        let s = support.len();
        let cols: Vec<Vec<T>> = support.iter().map(|&j| self.gram_column(j).to_vec()).collect();
        let g = DMatrix::from_fn(s, s, |a, b| cols[b][support[a]]);
        let rhs = DVector::from_fn(s, |a, _| {
            let j = support[a];
            let sign = if theta[j] > T::zero() {
                T::one()
            } else if theta[j] < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            self.zy[j] - thr[j] * sign
        });
        let Some(chol) = g.cholesky() else { return false };
        let sol = chol.solve(&rhs);
        for (a, &j) in support.iter().enumerate() {
            if thr[j] > T::zero() && (sol[a] * theta[j] <= T::zero()) {
                return false;
            }
        }
        let slack = T::lit(1e-9);
        for j in 0..k {
            if support.contains(&j) {
                continue;
            }
            let mut gj = self.zy[j];
            for (a, c) in cols.iter().enumerate() {
                gj -= c[j] * sol[a];
            }
            if gj.abs() > thr[j] * (T::one() + slack) {
                return false;
            }
        }
        for (a, &j) in support.iter().enumerate() {
            theta[j] = sol[a];
        }
        true
    }

    pub(crate) fn into_fit(&self, lambda: T, sol: Solution<T>) -> PenalizedFit<T> {
        PenalizedFit::assemble(
            self.design,
            Family::Gaussian,
            lambda,
            sol.theta,
            self.y_mean,
            sol.iters,
            sol.converged,
        )
    }

    pub(crate) fn null_gradient(&mut self, cfg: &SolverConfig<T>) -> Result<Vec<T>> {
        // Fit only the unpenalized columns; penalized ones stay at zero.
        let sol = self.solve(T::lit(f64::INFINITY), None, cfg)?;
        let k = self.n_coef();
        let mut grad = self.zy.clone();
        for j in 0..k {
            if sol.theta[j] != T::zero() {
                let t = sol.theta[j];
                let g = self.gram_column(j);
                for (gi, gij) in grad.iter_mut().zip(g) {
                    *gi -= *gij * t;
                }
            }
        }
        Ok(grad)
    }
}

#[inline]
fn col<T: Scalar>(z: &DMatrix<T>, j: usize) -> &[T] {
    let n = z.nrows();
    &z.as_slice()[j * n..(j + 1) * n]
}

/// Weighted lasso for squared-error loss, `(2N)⁻¹‖y − Zθ‖² + λ₁ Σ w_k|θ_k|`,
/// with an unpenalized intercept absorbed by centering.
pub fn fit_gaussian<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    lambda1: T,
    config: &SolverConfig<T>,
) -> Result<PenalizedFit<T>> {
    config.validate()?;
    if !(lambda1 >= T::zero()) {
        return Err(ShelError::Config("lambda1 must be non-negative".into()));
    }
    let mut prob = GaussianProblem::new(design, y)?;
    let sol = prob.solve(lambda1, None, config)?;
    Ok(prob.into_fit(lambda1, sol))
}
