use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shel_core::data::{ClusterIndex, Family};
use shel_core::design::{StackedDesign, SyntheticDesign};
use shel_core::solver::{fit, fit_path, kkt_violation, lambda_max, lambda_path, SolverConfig};

use crate::common::{lasso_enumeration, logistic_exact, normal_matrix, normal_vector, uniform};
use crate::Outcome;

const INSTANCES: usize = 200;
const GAUSSIAN_TOL: f64 = 1e-6;
const BINOMIAL_TOL: f64 = 1e-5;

/// Random clustered design with cluster-mean synthetic columns.
fn instance(seed: u64, max_cols: usize, n_range: (usize, usize)) -> (StackedDesign<f64>, DVector<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(n_range.0..=n_range.1);
    let p = rng.random_range(1..=max_cols.min(6));
    let p0 = rng.random_range(0..=(max_cols - p).min(p));
    let x = normal_matrix(&mut rng, n, p);
    let labels: Vec<i64> = (0..n).map(|i| (i / 4) as i64).collect();
    let idx = ClusterIndex::from_labels(&labels);
    let sources: Vec<usize> = (0..p0).collect();
    // shift the screened columns by a cluster effect so B is not degenerate
    let mut xh = x.clone();
    for &l in &sources {
        for rows in idx.iter() {
            let shift: f64 = uniform(&mut rng, -1.5, 1.5);
            for &r in rows {
                xh[(r, l)] += shift;
            }
        }
    }
    let syn = SyntheticDesign::from_columns(&xh, &idx, sources, vec![0.0; p0], 0.05);
    let ratio = uniform(&mut rng, 0.5, 1.5);
    let design = StackedDesign::new(&xh, &syn.b, ratio).unwrap();
    let beta = normal_vector(&mut rng, p);
    let noise = normal_vector(&mut rng, n);
    let y = &xh * beta + noise;
    (design, y, xh)
}

fn gaussian_case(seed: u64) -> f64 {
    let (d, y, _) = instance(seed, 8, (20, 40));
    let cfg = SolverConfig::default();
    let lmax = lambda_max(&d, &y, Family::Gaussian, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let lam = lmax * uniform(&mut rng, 0.02, 0.9);
    let f = fit(&d, &y, Family::Gaussian, lam, &cfg).unwrap();
    let exact = lasso_enumeration(d.z(), &y, d.weights(), lam);
    f.theta_scaled
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn binomial_case(seed: u64) -> f64 {
    let (d, y, _) = instance(seed, 6, (30, 40));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
    let eta = d.z() * DVector::from_fn(d.z().ncols(), |_, _| uniform(&mut rng, -1.0, 1.0));
    let mut yb = eta.map(|e| if rng.random::<f64>() < 1.0 / (1.0 + (-e).exp()) { 1.0 } else { 0.0 });
    if yb.sum() == 0.0 || yb.sum() == yb.len() as f64 {
        yb[0] = 1.0 - yb[0];
    }
    let _ = y;
    let cfg = SolverConfig::default();
    let lmax = lambda_max(&d, &yb, Family::Binomial, &cfg).unwrap();
    let lam = lmax * uniform(&mut rng, 0.05, 0.9);
    let f = fit(&d, &yb, Family::Binomial, lam, &cfg).unwrap();
    let hint: Vec<i8> = f
        .theta_scaled
        .iter()
        .map(|&t| if t > 0.0 { 1 } else if t < 0.0 { -1 } else { 0 })
        .collect();
    let (theta, b0) = logistic_exact(d.z(), &yb, d.weights(), lam, &hint);
    let mut err = (f.intercept_scaled - b0).abs();
    for (a, b) in f.theta_scaled.iter().zip(&theta) {
        err = err.max((a - b).abs());
    }
    err
}

pub fn oracle_equivalence() -> Outcome {
    let g: Vec<f64> = (0..INSTANCES as u64).into_par_iter().map(gaussian_case).collect();
    let b: Vec<f64> = (0..INSTANCES as u64).into_par_iter().map(|s| binomial_case(10_000 + s)).collect();
    let gmax = g.iter().copied().fold(0.0, f64::max);
    let bmax = b.iter().copied().fold(0.0, f64::max);
    Outcome::check(
        gmax < GAUSSIAN_TOL && bmax < BINOMIAL_TOL,
        format!(
            "{INSTANCES} Gaussian instances max |Δθ| {gmax:.2e} (tol {GAUSSIAN_TOL:.0e}); \
             {INSTANCES} binomial instances max |Δθ| {bmax:.2e} (tol {BINOMIAL_TOL:.0e})"
        ),
    )
}

const KKT_INSTANCES: usize = 50;

fn path_violation(seed: u64, family: Family) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 120;
    let p = 30;
    let x = normal_matrix(&mut rng, n, p);
    let labels: Vec<i64> = (0..n).map(|i| (i / 4) as i64).collect();
    let idx = ClusterIndex::from_labels(&labels);
    let syn = SyntheticDesign::from_columns(&x, &idx, (0..10).collect(), vec![0.0; 10], 0.05);
    let d = StackedDesign::new(&x, &syn.b, 0.8).unwrap();
    let eta = x.columns(0, 3).column_sum() + syn.b.column(0) * 0.5;
    let noise = normal_vector(&mut rng, n);
    let y = match family {
        Family::Gaussian => eta + noise,
        Family::Binomial => eta.map(|e| if rng.random::<f64>() < 1.0 / (1.0 + (-e).exp()) { 1.0 } else { 0.0 }),
    };
    let cfg = SolverConfig::default();
    let grid = lambda_path(&d, &y, family, 50, 0.01, &cfg).unwrap();
    let fits = fit_path(&d, &y, family, &grid, &cfg).unwrap();
    let worst = fits.iter().map(|f| kkt_violation(&d, &y, f)).fold(0.0, f64::max);
    (worst, fits.len())
}

pub fn kkt_suite() -> Outcome {
    let tol = SolverConfig::<f64>::default().tol * 10.0;
    let results: Vec<(f64, usize)> = (0..KKT_INSTANCES as u64)
        .into_par_iter()
        .flat_map_iter(|s| [path_violation(s, Family::Gaussian), path_violation(500 + s, Family::Binomial)])
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let fits: usize = results.iter().map(|r| r.1).sum();
    Outcome::check(
        worst < tol,
        format!("{fits} fits over {KKT_INSTANCES} Gaussian and {KKT_INSTANCES} binomial paths, max violation {worst:.2e} (tol {tol:.0e})"),
    )
}
