use nalgebra::DVector;

use super::{expit, log1pexp, penalty_threshold, soft_threshold, PenalizedFit, SolverConfig};
use crate::data::Family;
use crate::design::StackedDesign;
use crate::error::{Result, ShelError};
use crate::scalar::Scalar;

const MIN_WEIGHT: f64 = 1e-5;

struct State<T: Scalar> {
    b0: T,
    theta: Vec<T>,
    eta: Vec<T>,
}

fn objective<T: Scalar>(y: &[T], eta: &[T], theta: &[T], thr: &[T]) -> T {
    let n = T::from_usize(y.len()).unwrap();
    let mut loss = T::zero();
    for (&yi, &e) in y.iter().zip(eta) {
        loss += log1pexp(e) - yi * e;
    }
    let mut pen = T::zero();
    for (t, th) in thr.iter().zip(theta) {
        if *th != T::zero() {
            pen += *t * th.abs();
        }
    }
    loss / n + pen
}

fn linear_predictor<T: Scalar>(design: &StackedDesign<T>, b0: T, theta: &[T]) -> Vec<T> {
    design.predict_scaled(theta, b0).iter().copied().collect()
}

/// Penalized logistic regression by proximal Newton: each outer step solves the
/// weighted-least-squares quadratic model with coordinate descent, followed by a
/// backtracking step on the penalized objective.
pub fn fit_binomial<T: Scalar>(
    design: &StackedDesign<T>,
    y: &DVector<T>,
    lambda1: T,
    config: &SolverConfig<T>,
    warm: Option<(&[T], T)>,
) -> Result<PenalizedFit<T>> {
    config.validate()?;
    if !(lambda1 >= T::zero()) {
        return Err(ShelError::Config("lambda1 must be non-negative".into()));
    }
    let n = design.n_obs();
    if y.len() != n {
        return Err(ShelError::Dimension(format!(
            "response has {} rows, design {}",
            y.len(),
            n
        )));
    }
    let nt = T::from_usize(n).unwrap();
    let ybar = y.sum() / nt;
    if ybar <= T::zero() || ybar >= T::one() {
        return Err(ShelError::Data("binomial response needs both classes".into()));
    }
    let z = design.z();
    let k = z.ncols();
    let ys: Vec<T> = y.iter().copied().collect();
    let thr: Vec<T> = design
        .weights()
        .iter()
        .map(|&w| penalty_threshold(lambda1, w))
        .collect();
    let cols: Vec<&[T]> = (0..k).map(|j| &z.as_slice()[j * n..(j + 1) * n]).collect();

    let (b0, theta) = match warm {
        Some((th, b)) if th.len() == k => (b, th.to_vec()),
        _ => ((ybar / (T::one() - ybar)).ln(), vec![T::zero(); k]),
    };
    let eta = linear_predictor(design, b0, &theta);
    let mut st = State { b0, theta, eta };
    let mut obj = objective(&ys, &st.eta, &st.theta, &thr);
    let inner_tol = config.tol * T::lit(0.1);
    let mut iters = 0;
    let mut converged = false;

    for _outer in 0..config.max_irls {
        let mu: Vec<T> = st.eta.iter().map(|&e| expit(e)).collect();
        let v: Vec<T> = mu
            .iter()
            .map(|&m| (m * (T::one() - m)).max(T::lit(MIN_WEIGHT)))
            .collect();
        // res = working response minus current linear predictor
        let mut res: Vec<T> = (0..n).map(|i| (ys[i] - mu[i]) / v[i]).collect();
        let vsum: T = v.iter().copied().fold(T::zero(), |a, b| a + b);
        let xv: Vec<T> = cols
            .iter()
            .map(|c| {
                let mut s = T::zero();
                for i in 0..n {
                    s += v[i] * c[i] * c[i];
                }
                s / nt
            })
            .collect();
        let mut b0 = st.b0;
        let mut theta = st.theta.clone();
        let all: Vec<usize> = (0..k).collect();

        let sweep = |coords: &[usize], b0: &mut T, theta: &mut [T], res: &mut [T]| -> T {
            let mut maxd = T::zero();
            let mut num = T::zero();
            for i in 0..n {
                num += v[i] * res[i];
            }
            let d0 = num / vsum;
            if d0 != T::zero() {
                *b0 += d0;
                for r in res.iter_mut() {
                    *r -= d0;
                }
                maxd = maxd.max(d0.abs());
            }
            for &j in coords {
                let c = cols[j];
                if xv[j] <= T::zero() {
                    continue;
                }
                let mut g = T::zero();
                for i in 0..n {
                    g += v[i] * c[i] * res[i];
                }
                let old = theta[j];
                let u = g / nt + xv[j] * old;
                let new = soft_threshold(u, thr[j]) / xv[j];
                let delta = new - old;
                if delta != T::zero() {
                    theta[j] = new;
                    for i in 0..n {
                        res[i] -= delta * c[i];
                    }
                    maxd = maxd.max(delta.abs());
                }
            }
            maxd
        };

        'inner: while iters < config.max_iters {
            let d = sweep(&all, &mut b0, &mut theta, &mut res);
            iters += 1;
            if d < inner_tol {
                break;
            }
            loop {
                let active: Vec<usize> = (0..k)
                    .filter(|&j| theta[j] != T::zero() || thr[j] == T::zero())
                    .collect();
                let d = sweep(&active, &mut b0, &mut theta, &mut res);
                iters += 1;
                if d < inner_tol {
                    break;
                }
                if iters >= config.max_iters {
                    break 'inner;
                }
            }
        }

        // backtracking on the penalized objective
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let tb0 = st.b0 + step * (b0 - st.b0);
            let tth: Vec<T> = st
                .theta
                .iter()
                .zip(&theta)
                .map(|(&o, &nw)| o + step * (nw - o))
                .collect();
            let teta = linear_predictor(design, tb0, &tth);
            let tobj = objective(&ys, &teta, &tth, &thr);
            if tobj <= obj + T::lit(1e-13) * (T::one() + obj.abs()) {
                accepted = Some((tb0, tth, teta, tobj));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((nb0, nth, neta, nobj)) = accepted else {
            converged = true;
            break;
        };
        let mut change = (nb0 - st.b0).abs();
        for (a, b) in nth.iter().zip(&st.theta) {
            change = change.max((*a - *b).abs());
        }
        st = State {
            b0: nb0,
            theta: nth,
            eta: neta,
        };
        obj = nobj;
        if change < config.tol {
            converged = true;
            break;
        }
        if iters >= config.max_iters {
            break;
        }
    }

    let all_unpenalized_free = thr.iter().all(|&t| t == T::zero());
    if all_unpenalized_free || lambda1 == T::zero() {
        let dev: T = ys
            .iter()
            .zip(&st.eta)
            .map(|(&yi, &e)| log1pexp(e) - yi * e)
            .fold(T::zero(), |a, b| a + b)
            / nt;
        let eta_max = st.eta.iter().fold(T::zero(), |a, e| a.max(e.abs()));
        if dev < T::lit(1e-6) && eta_max > T::lit(15.0) {
            return Err(ShelError::Separation(
                "penalized logistic fit (unbounded unpenalized direction)".into(),
            ));
        }
    }
    if !converged {
        log::warn!("proximal Newton did not converge at lambda = {}", lambda1.f64());
    }
    Ok(PenalizedFit::assemble(
        design,
        Family::Binomial,
        lambda1,
        st.theta,
        st.b0,
        iters,
        converged,
    ))
}
