//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature to a relative tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> f64 {
    let mut stack = vec![(a, b)];
    let (whole, _) = gk15(&f, a, b);
    let mut total = 0.0;
    let mut guard = 0;
    while let Some((lo, hi)) = stack.pop() {
        let (v, e) = gk15(&f, lo, hi);
        guard += 1;
        if e <= rel * whole.abs().max(v.abs()) * 1e-2 || hi - lo < 1e-14 * (1.0 + lo.abs()) || guard > 200_000 {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid));
            stack.push((mid, hi));
        }
    }
    total
}

/// `∫_lo^hi exp(-s(s + 2c)/2) ds` for `c ≥ 0`: the Gaussian density on
/// `[c + lo, c + hi]` rescaled by `φ(c)`. An infinite `hi` maps onto `[0, 1)` by
/// `s = lo + t/(1 − t)`.
fn scaled_tail_segment(c: f64, lo: f64, hi: f64) -> f64 {
    let g = |s: f64| (-0.5 * s * (s + 2.0 * c)).exp();
    if hi.is_finite() {
        integrate(g, lo, hi, 1e-14)
    } else {
        integrate(
            |t: f64| {
                if t >= 1.0 {
                    0.0
                } else {
                    g(lo + t / (1.0 - t)) / ((1.0 - t) * (1.0 - t))
                }
            },
            0.0,
            1.0,
            1e-14,
        )
    }
}

fn scaled_tail_mass(c: f64, w: f64) -> f64 {
    scaled_tail_segment(c, 0.0, w)
}

fn density_mass(lo: f64, hi: f64) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp();
    let piece = |a: f64, b: f64| -> f64 {
        if a.is_finite() && b.is_finite() {
            integrate(phi, a, b, 1e-14)
        } else if a.is_infinite() && b.is_infinite() {
            2.0 * scaled_tail_mass(0.0, f64::INFINITY)
        } else if a.is_infinite() {
            // (−∞, b] with b ≤ 0 after splitting
            scaled_tail_mass(-b, f64::INFINITY) * (-0.5 * b * b).exp()
        } else {
            scaled_tail_mass(a, f64::INFINITY) * (-0.5 * a * a).exp()
        }
    };
    if lo < 0.0 && hi > 0.0 && (lo.is_infinite() || hi.is_infinite()) {
        piece(lo, 0.0) + piece(0.0, hi)
    } else {
        piece(lo, hi)
    }
}

/// Truncated-normal CDF by direct quadrature of the density, with all
/// integrals rescaled by the density at the truncation end nearest the mean.
pub fn trunc_cdf_oracle(x: f64, mu: f64, sigma2: f64, a: f64, b: f64) -> f64 {
    let sd = sigma2.sqrt();
    let za = if a.is_infinite() { a } else { (a - mu) / sd };
    let zb = if b.is_infinite() { b } else { (b - mu) / sd };
    if za >= 0.0 {
        let wx = (x - a) / sd;
        let wb = if b.is_infinite() { b } else { (b - a) / sd };
        scaled_tail_mass(za, wx) / scaled_tail_mass(za, wb)
    } else if zb <= 0.0 {
        // s = zb − t, measured downward from the upper end
        let c = -zb;
        let wb = if a.is_infinite() { f64::INFINITY } else { (b - a) / sd };
        let from_x = (b - x) / sd;
        scaled_tail_segment(c, from_x, wb) / scaled_tail_mass(c, wb)
    } else {
        // integrate over the offset from a so that narrow intervals far from the
        // mean keep their width exactly
        let num = if a.is_infinite() {
            density_mass(za, (x - mu) / sd)
        } else {
            integrate(|s: f64| (-0.5 * (za + s) * (za + s)).exp(), 0.0, (x - a) / sd, 1e-14)
        };
        num / density_mass(za, zb)
    }
}

/// Random standard-normal matrix.
pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Exact weighted lasso with intercept by enumerating every (support, sign)
/// pattern: `min (2N)⁻¹‖y − b₀ − Zθ‖² + λ Σ w_k |θ_k|`, with `Z` column-centred.
/// Returns the pattern solution satisfying all optimality conditions with the
/// smallest objective.
pub fn lasso_enumeration(z: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], lambda: f64) -> Vec<f64> {
    let n = z.nrows() as f64;
    let k = z.ncols();
    let yc = y.add_scalar(-y.mean());
    let gram = z.transpose() * z / n;
    let zy = z.transpose() * &yc / n;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(k as u32);
    for code in 0..total {
        let mut c = code;
        let mut sign = vec![0i8; k];
        for s in sign.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        // unpenalized columns must be free
        let support: Vec<usize> = (0..k).filter(|&j| sign[j] != 0 || w[j] == 0.0).collect();
        if (0..k).any(|j| w[j] == 0.0 && sign[j] != 0) {
            continue;
        }
        let q = support.len();
        let mut theta = vec![0.0; k];
        if q > 0 {
            let g = DMatrix::from_fn(q, q, |a, b| gram[(support[a], support[b])]);
            let rhs = DVector::from_fn(q, |a, _| {
                let j = support[a];
                zy[j] - lambda * w[j] * sign[j] as f64
            });
            let Some(ch) = g.cholesky() else { continue };
            let sol = ch.solve(&rhs);
            let mut ok = true;
            for (a, &j) in support.iter().enumerate() {
                if w[j] > 0.0 && (sol[a] * sign[j] as f64) <= 0.0 {
                    ok = false;
                }
                theta[j] = sol[a];
            }
            if !ok {
                continue;
            }
        }
        let th = DVector::from_column_slice(&theta);
        let grad = &zy - &gram * &th;
        let feasible = (0..k).all(|j| sign[j] != 0 || w[j] == 0.0 || grad[j].abs() <= lambda * w[j] * (1.0 + 1e-12) + 1e-14);
        if !feasible {
            continue;
        }
        let r = &yc - z * &th;
        let obj = r.norm_squared() / (2.0 * n) + lambda * (0..k).map(|j| w[j] * theta[j].abs()).sum::<f64>();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, theta));
        }
    }
    best.expect("some pattern satisfies the optimality conditions").1
}

fn expit(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

/// Penalized logistic optimum on a fixed (support, sign) pattern by Newton's
/// method on the smooth restricted objective. Returns `None` when the pattern
/// fails the optimality conditions of the full problem.
pub fn logistic_on_pattern(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &[f64],
    lambda: f64,
    sign: &[i8],
) -> Option<(Vec<f64>, f64)> {
    let n = z.nrows();
    let k = z.ncols();
    let support: Vec<usize> = (0..k).filter(|&j| sign[j] != 0 || w[j] == 0.0).collect();
    let q = support.len() + 1;
    let design = |i: usize, a: usize| if a == 0 { 1.0 } else { z[(i, support[a - 1])] };
    let mut par = DVector::<f64>::zeros(q);
    let ybar = y.mean();
    par[0] = (ybar / (1.0 - ybar)).ln();
    for _ in 0..200 {
        let mut g = DVector::<f64>::zeros(q);
        let mut h = DMatrix::<f64>::zeros(q, q);
        for i in 0..n {
            let eta: f64 = (0..q).map(|a| design(i, a) * par[a]).sum();
            let mu = expit(eta);
            let v = mu * (1.0 - mu);
            for a in 0..q {
                g[a] += (mu - y[i]) * design(i, a) / n as f64;
                for b in 0..q {
                    h[(a, b)] += v * design(i, a) * design(i, b) / n as f64;
                }
            }
        }
        for a in 1..q {
            let j = support[a - 1];
            g[a] += lambda * w[j] * sign[j] as f64;
        }
        let step = h.cholesky()?.solve(&g);
        par -= &step;
        if step.amax() < 1e-15 * (1.0 + par.amax()) {
            break;
        }
        if par.amax() > 1e6 {
            return None;
        }
    }
    let mut theta = vec![0.0; k];
    for (a, &j) in support.iter().enumerate() {
        theta[j] = par[a + 1];
        if w[j] > 0.0 && theta[j] * sign[j] as f64 <= 0.0 {
            return None;
        }
    }
    let eta = z * DVector::from_column_slice(&theta);
    let resid = DVector::from_fn(n, |i, _| y[i] - expit(eta[i] + par[0]));
    for j in 0..k {
        if sign[j] == 0 && w[j] > 0.0 {
            let g = z.column(j).dot(&resid) / n as f64;
            if g.abs() > lambda * w[j] * (1.0 + 1e-9) {
                return None;
            }
        }
    }
    Some((theta, par[0]))
}

/// Exact penalized logistic fit: tries `hint` first, then enumerates patterns.
pub fn logistic_exact(z: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], lambda: f64, hint: &[i8]) -> (Vec<f64>, f64) {
    if let Some(s) = logistic_on_pattern(z, y, w, lambda, hint) {
        return s;
    }
    let k = z.ncols();
    for code in 0..3usize.pow(k as u32) {
        let mut c = code;
        let mut sign = vec![0i8; k];
        for s in sign.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        if let Some(s) = logistic_on_pattern(z, y, w, lambda, &sign) {
            return s;
        }
    }
    panic!("no pattern satisfies the optimality conditions");
}

/// Kolmogorov–Smirnov distance of a sample from `U(0, 1)`.
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
