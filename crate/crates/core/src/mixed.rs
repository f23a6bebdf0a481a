//! Random-intercept models: variance-component moments, Gaussian LMM by profile
//! maximum likelihood, and the logistic random-intercept GLMM by adaptive
//! Gauss–Hermite quadrature.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::ClusterIndex;
use crate::error::{Result, ShelError};
use crate::inference::norm_cdf;
use crate::solver::log1pexp;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight `e^{-x²}`,
/// from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// One-way ANOVA decomposition of a vector by cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    /// Within-cluster mean square.
    pub sigma2: f64,
    /// Method-of-moments between-cluster variance, truncated at zero.
    pub tau2: f64,
    pub ms_between: f64,
    pub df_between: usize,
    pub df_within: usize,
    /// Effective cluster size `(N − Σ n_i²/N)/(m − 1)`.
    pub n_tilde: f64,
}

impl VarianceComponents {
    /// `τ²/(τ² + σ²)`, with `0/0` read as 0.
    pub fn icc(&self) -> f64 {
        let tot = self.tau2 + self.sigma2;
        if tot > 0.0 {
            self.tau2 / tot
        } else {
            0.0
        }
    }
}

pub fn anova_components(v: &[f64], clusters: &ClusterIndex) -> Result<VarianceComponents> {
    let n = v.len();
    let m = clusters.len();
    if m < 2 {
        return Err(ShelError::Data("at least two clusters are required".into()));
    }
    if n <= m {
        return Err(ShelError::NoWithinDf);
    }
    let grand = v.iter().sum::<f64>() / n as f64;
    let mut ssw = 0.0;
    let mut ssb = 0.0;
    let mut sum_sq_sizes = 0.0;
    for rows in clusters.iter() {
        let ni = rows.len() as f64;
        let mean = rows.iter().map(|&r| v[r]).sum::<f64>() / ni;
        ssw += rows.iter().map(|&r| (v[r] - mean).powi(2)).sum::<f64>();
        ssb += ni * (mean - grand).powi(2);
        sum_sq_sizes += ni * ni;
    }
    let df_between = m - 1;
    let df_within = n - m;
    let sigma2 = ssw / df_within as f64;
    let ms_between = ssb / df_between as f64;
    let n_tilde = (n as f64 - sum_sq_sizes / n as f64) / df_between as f64;
    let tau2 = ((ms_between - sigma2) / n_tilde).max(0.0);
    Ok(VarianceComponents {
        sigma2,
        tau2,
        ms_between,
        df_between,
        df_within,
        n_tilde,
    })
}

/// Coefficients with Wald standard errors from an unpenalized mixed-model refit.
/// Index 0 is the intercept.
#[derive(Debug, Clone)]
pub struct MixedFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub converged: bool,
}

impl MixedFit {
    /// Two-sided Wald p-value for coefficient `k` (0 is the intercept).
    pub fn wald_pvalue(&self, k: usize) -> f64 {
        let z = self.coef[k] / self.se[k];
        if !z.is_finite() {
            return if self.coef[k] == 0.0 { 1.0 } else { 0.0 };
        }
        2.0 * norm_cdf(-z.abs())
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    out.columns_mut(1, x.ncols()).copy_from(x);
    out
}

/// Quasi-demeaning by `θ_i = 1 − 1/√(1 + n_i ρ)`, the whitening transform of the
/// random-intercept covariance `I + ρ 11ᵀ`.
fn quasi_demean(v: &DMatrix<f64>, clusters: &ClusterIndex, rho: f64) -> DMatrix<f64> {
    let mut out = v.clone();
    for rows in clusters.iter() {
        let ni = rows.len() as f64;
        let theta = 1.0 - 1.0 / (1.0 + ni * rho).sqrt();
        for c in 0..v.ncols() {
            let mean = rows.iter().map(|&r| v[(r, c)]).sum::<f64>() / ni;
            for &r in rows {
                out[(r, c)] -= theta * mean;
            }
        }
    }
    out
}

struct LmmProfile {
    loglik: f64,
    coef: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    rss: f64,
}

fn lmm_profile(y: &DMatrix<f64>, x1: &DMatrix<f64>, clusters: &ClusterIndex, rho: f64) -> Result<LmmProfile> {
    let n = y.nrows() as f64;
    let ys = quasi_demean(y, clusters, rho);
    let xs = quasi_demean(x1, clusters, rho);
    let xtx = xs.transpose() * &xs;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| ShelError::Singular("mixed-model refit design".into()))?;
    let xty = xs.transpose() * ys.column(0);
    let coef = chol.solve(&xty);
    let resid = ys.column(0) - &xs * &coef;
    let rss = resid.norm_squared();
    let logdet: f64 = clusters
        .iter()
        .map(|rows| (1.0 + rows.len() as f64 * rho).ln())
        .sum();
    let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0) - 0.5 * logdet;
    Ok(LmmProfile {
        loglik,
        coef,
        xtx_inv: chol.inverse(),
        rss,
    })
}

/// Gaussian random-intercept model `y = β₀ + Xβ + u_i + ε` by maximum likelihood,
/// profiling out `β` and `σ²` and searching `ρ = τ²/σ²` by golden section on
/// `log ρ`. Standard errors are conditional on `ρ̂`.
pub fn fit_lmm(y: &[f64], x: &DMatrix<f64>, clusters: &ClusterIndex) -> Result<MixedFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(ShelError::Dimension("refit design rows".into()));
    }
    let x1 = with_intercept(x);
    if x1.ncols() >= n {
        return Err(ShelError::Singular("refit has no residual degrees of freedom".into()));
    }
    let ym = DMatrix::from_column_slice(n, 1, y);
    let f = |lr: f64| lmm_profile(&ym, &x1, clusters, lr.exp()).map(|p| p.loglik);

    let (mut lo, mut hi) = (-12.0f64, 8.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..80 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d)?;
        }
        if hi - lo < 1e-8 {
            break;
        }
    }
    let interior = 0.5 * (lo + hi);
    let at_interior = lmm_profile(&ym, &x1, clusters, interior.exp())?;
    let at_zero = lmm_profile(&ym, &x1, clusters, 0.0)?;
    let (best, rho) = if at_zero.loglik >= at_interior.loglik {
        (at_zero, 0.0)
    } else {
        (at_interior, interior.exp())
    };
    let sigma2 = best.rss / n as f64;
    let se = (0..x1.ncols())
        .map(|k| (sigma2 * best.xtx_inv[(k, k)]).sqrt())
        .collect();
    Ok(MixedFit {
        coef: best.coef.iter().copied().collect(),
        se,
        sigma2,
        tau2: rho * sigma2,
        loglik: best.loglik,
        converged: true,
    })
}

/// Unpenalized logistic regression with intercept by Newton–Raphson.
/// Returns (coefficients with intercept first, log-likelihood).
pub fn fit_logistic(y: &[f64], x: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let x1 = with_intercept(x);
    let n = y.len();
    let q = x1.ncols();
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar <= 0.0 || ybar >= 1.0 {
        return Err(ShelError::Data("logistic fit needs both classes".into()));
    }
    let mut beta = DVector::zeros(q);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let ll = |b: &DVector<f64>| -> f64 {
        let eta = &x1 * b;
        (0..n).map(|i| y[i] * eta[i] - log1pexp(eta[i])).sum()
    };
    let mut cur = ll(&beta);
    for _ in 0..100 {
        let eta = &x1 * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| crate::solver::expit(e)).collect();
        let mut h = DMatrix::zeros(q, q);
        let mut g = DVector::zeros(q);
        for i in 0..n {
            let w = mu[i] * (1.0 - mu[i]);
            let row = x1.row(i);
            g += row.transpose() * (y[i] - mu[i]);
            h += row.transpose() * row * w;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| ShelError::Singular("logistic information matrix".into()))?
            .solve(&g);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let v = ll(&cand);
            if v >= cur - 1e-12 {
                beta = cand;
                let done = (v - cur).abs() < 1e-12 * (1.0 + cur.abs());
                cur = v;
                improved = !done;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let eta = &x1 * &beta;
    if eta.amax() > 30.0 && cur.abs() < 1e-6 * n as f64 {
        return Err(ShelError::Separation("unpenalized logistic fit".into()));
    }
    Ok((beta.iter().copied().collect(), cur))
}

const GH_NODES: usize = 15;

/// Logistic random-intercept model `logit P(y = 1 | u_i) = x_ijᵀβ + u_i`,
/// `u_i ~ N(0, τ²)`, with the marginal likelihood integrated by adaptive
/// Gauss–Hermite quadrature (15 nodes) centred at each cluster's posterior mode.
struct Glmm<'a> {
    y: &'a [f64],
    x1: DMatrix<f64>,
    clusters: &'a ClusterIndex,
    nodes: Vec<f64>,
    lw: Vec<f64>,
}

impl<'a> Glmm<'a> {
    fn new(y: &'a [f64], x: &DMatrix<f64>, clusters: &'a ClusterIndex) -> Self {
        let (nodes, weights) = gauss_hermite(GH_NODES);
        let lw = nodes.iter().zip(&weights).map(|(x, w)| w.ln() + x * x).collect();
        Glmm {
            y,
            x1: with_intercept(x),
            clusters,
            nodes,
            lw,
        }
    }

    /// Negative log-likelihood and its gradient in `(β, log τ)`. The gradient uses
    /// the Fisher identity with posterior expectations taken over the quadrature
    /// nodes.
    fn eval(&self, par: &[f64]) -> (f64, Vec<f64>) {
        let q = self.x1.ncols();
        let beta = DVector::from_column_slice(&par[..q]);
        let tau = par[q].exp();
        let tau2 = tau * tau;
        let eta = &self.x1 * &beta;
        let mut nll = 0.0;
        let mut grad = vec![0.0; q + 1];
        let mut terms = vec![0.0; self.nodes.len()];
        for rows in self.clusters.iter() {
            let h = |u: f64| -> f64 {
                let mut s = -0.5 * u * u / tau2;
                for &r in rows {
                    let e = eta[r] + u;
                    s += self.y[r] * e - log1pexp(e);
                }
                s
            };
            // posterior mode of u by damped Newton on a strictly concave function
            let mut u = 0.0;
            let mut curv = 0.0;
            for _ in 0..100 {
                let mut d1 = -u / tau2;
                let mut d2 = -1.0 / tau2;
                for &r in rows {
                    let mu = crate::solver::expit(eta[r] + u);
                    d1 += self.y[r] - mu;
                    d2 -= mu * (1.0 - mu);
                }
                curv = d2;
                let mut step = -d1 / d2;
                let cap = 4.0 / (-d2).sqrt() + 1.0;
                if step.abs() > cap {
                    step = step.signum() * cap;
                }
                u += step;
                if step.abs() < 1e-10 * (1.0 + u.abs()) {
                    break;
                }
            }
            let s = 1.0 / (-curv).sqrt();
            let mut mx = f64::NEG_INFINITY;
            for (k, &xk) in self.nodes.iter().enumerate() {
                let uk = u + std::f64::consts::SQRT_2 * s * xk;
                terms[k] = self.lw[k] + h(uk);
                mx = mx.max(terms[k]);
            }
            let sum: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
            let log_li = (std::f64::consts::SQRT_2 * s).ln()
                - 0.5 * (2.0 * std::f64::consts::PI * tau2).ln()
                + mx
                + sum.ln();
            nll -= log_li;
            for (k, &xk) in self.nodes.iter().enumerate() {
                let pk = (terms[k] - mx).exp() / sum;
                if pk < 1e-300 {
                    continue;
                }
                let uk = u + std::f64::consts::SQRT_2 * s * xk;
                let mut score_u = 0.0;
                for &r in rows {
                    let res = self.y[r] - crate::solver::expit(eta[r] + uk);
                    score_u += res;
                    for c in 0..q {
                        grad[c] -= pk * res * self.x1[(r, c)];
                    }
                }
                grad[q] -= pk * uk * score_u;
            }
        }
        (nll, grad)
    }
}

/// Minimizes `f` by BFGS with Armijo backtracking. Returns (argmin, value, converged).
fn bfgs<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, x0: Vec<f64>, lower_last: f64) -> (Vec<f64>, f64, bool) {
    let d = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut converged = false;
    for _ in 0..300 {
        if g.iter().fold(0.0f64, |a, v| a.max(v.abs())) < 1e-6 {
            converged = true;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            hinv = DMatrix::identity(d, d);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let mut cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            if cand[d - 1] < lower_last {
                cand[d - 1] = lower_last;
            }
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                next = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = next else {
            converged = true;
            break;
        };
        let s = DVector::from_iterator(d, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(d, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        let small_change = (fx - fn_).abs() < 1e-12 * (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let a = &i - &s * yv.transpose() * rho;
            let b = &i - &yv * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        if small_change && g.iter().fold(0.0f64, |a, v| a.max(v.abs())) < 1e-4 {
            converged = true;
            break;
        }
    }
    (x, fx, converged)
}

const LOG_TAU_FLOOR: f64 = -10.0;

/// Logistic random-intercept fit with Wald standard errors from a
/// finite-difference Hessian of the marginal log-likelihood.
pub fn fit_glmm_logistic(y: &[f64], x: &DMatrix<f64>, clusters: &ClusterIndex) -> Result<MixedFit> {
    let (coef0, _) = fit_logistic(y, x)?;
    let glmm = Glmm::new(y, x, clusters);
    let q = coef0.len();
    let mut start = coef0;
    start.push(0.0);
    let (par, nll, converged) = bfgs(|p| glmm.eval(p), start, LOG_TAU_FLOOR);
    if !nll.is_finite() {
        return Err(ShelError::numerical("GLMM refit", "non-finite likelihood"));
    }
    // Hessian by central differences of the analytic gradient
    let d = q + 1;
    let mut hess = DMatrix::zeros(d, d);
    for k in 0..d {
        let hstep = 1e-4 * (1.0 + par[k].abs());
        let mut up = par.clone();
        let mut dn = par.clone();
        up[k] += hstep;
        dn[k] -= hstep;
        let gu = glmm.eval(&up).1;
        let gd = glmm.eval(&dn).1;
        for r in 0..d {
            hess[(r, k)] = (gu[r] - gd[r]) / (2.0 * hstep);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    // at the variance floor the τ direction is degenerate; invert the β block only
    let block = if par[q] <= LOG_TAU_FLOOR + 1e-8 {
        hess.view((0, 0), (q, q)).into_owned()
    } else {
        hess.clone()
    };
    let cov = block
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| block.try_inverse())
        .ok_or_else(|| ShelError::Singular("GLMM information matrix".into()))?;
    let se = (0..q).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let tau = par[q].exp();
    Ok(MixedFit {
        coef: par[..q].to_vec(),
        se,
        sigma2: std::f64::consts::PI.powi(2) / 3.0,
        tau2: tau * tau,
        loglik: -nll,
        converged,
    })
}

/// Result of testing a zero between-cluster variance in a logistic
/// random-intercept model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryTest {
    pub statistic: f64,
    pub pvalue: f64,
    /// True when the quadrature fit failed and a score test was used instead.
    pub score_fallback: bool,
}

/// Likelihood-ratio test of `τ² = 0` for an intercept-only logistic
/// random-intercept model, referred to the `½χ²₀ + ½χ²₁` boundary mixture.
pub fn logistic_variance_test(y: &[f64], clusters: &ClusterIndex) -> Result<BoundaryTest> {
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar <= 0.0 || ybar >= 1.0 {
        return Err(ShelError::Data("binary covariate has a single level".into()));
    }
    let ll0 = n as f64 * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln());
    let x = DMatrix::zeros(n, 0);
    let glmm = Glmm::new(y, &x, clusters);
    let start = vec![(ybar / (1.0 - ybar)).ln(), 0.0];
    let (_, nll, converged) = bfgs(|p| glmm.eval(p), start, LOG_TAU_FLOOR);
    if nll.is_finite() && converged {
        let stat = (2.0 * (-nll - ll0)).max(0.0);
        let pvalue = if stat > 0.0 { norm_cdf(-stat.sqrt()) } else { 1.0 };
        return Ok(BoundaryTest {
            statistic: stat,
            pvalue,
            score_fallback: false,
        });
    }
    log::warn!("quadrature fit did not converge; using the score test for the variance component");
    Ok(score_variance_test(y, clusters, ybar))
}

/// Score test of `τ² = 0` at the intercept-only fit, standardized with the
/// Bernoulli fourth cumulant. One-sided normal reference.
fn score_variance_test(y: &[f64], clusters: &ClusterIndex, ybar: f64) -> BoundaryTest {
    let v = ybar * (1.0 - ybar);
    let mut u = 0.0;
    let mut var = 0.0;
    for rows in clusters.iter() {
        let s: f64 = rows.iter().map(|&r| y[r] - ybar).sum();
        let ni = rows.len() as f64;
        u += 0.5 * (s * s - ni * v);
        var += 0.25 * (ni * v * (1.0 - 6.0 * v) + 2.0 * (ni * v).powi(2));
    }
    let z = if var > 0.0 { u / var.sqrt() } else { 0.0 };
    BoundaryTest {
        statistic: z,
        pvalue: norm_cdf(-z),
        score_fallback: true,
    }
}
