use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shel_core::data::{ClusteredDataset, Family};
use shel_core::estimators::{fit_marginal, target_shift_oracle};
use shel_core::sim::{run_study, Dependence, DgpConfig, Grid, Method, StudyConfig};
use shel_core::solver::SolverConfig;

use crate::common::std_normal;
use crate::Outcome;

const SHIFT_TOL: f64 = 0.1;

/// Endogenous instance in which a two-column combination of the cluster means
/// explains the intercepts up to small noise. Cluster means have s.d. 5 against
/// unit within-cluster noise, so the marginal slope is close to the
/// cluster-level one.
pub fn target_shift() -> Outcome {
    let (m, n, p) = (40usize, 50usize, 10usize);
    let hetero = [1usize, 3, 6, 8];
    let gamma_gen = [0.8, 0.0, -0.6, 0.0];
    let mut beta0 = vec![0.0; p];
    beta0[0] = 1.0;
    beta0[4] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let bc = DMatrix::from_fn(m, hetero.len(), |_, _| 5.0 * std_normal(&mut rng));
    let alpha: Vec<f64> = (0..m)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (0..hetero.len()).map(|k| bc[(i, k)] * gamma_gen[k]).sum::<f64>() + 0.1 * z
        })
        .collect();
    let rows = m * n;
    let mut x = DMatrix::from_fn(rows, p, |_, _| StandardNormal.sample(&mut rng));
    for (k, &l) in hetero.iter().enumerate() {
        for r in 0..rows {
            x[(r, l)] += bc[(r / n, k)];
        }
    }
    let y = DVector::from_fn(rows, |r, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        (0..p).map(|j| x[(r, j)] * beta0[j]).sum::<f64>() + alpha[r / n] + e
    });
    let labels = (0..rows).map(|r| (r / n) as i64).collect();
    let data = ClusteredDataset::new(y, x, labels, Family::Gaussian).unwrap();
    let fit = fit_marginal(&data, 1e-3, &SolverConfig::default()).unwrap();

    let shift = target_shift_oracle(&alpha, &bc, 2).unwrap();
    let mut expected = vec![0.0; p];
    for (k, &l) in hetero.iter().enumerate() {
        expected[l] = shift.gamma_star[k];
    }
    let gap = (0..p)
        .map(|j| (fit.beta[j] - beta0[j] - expected[j]).abs())
        .fold(0.0, f64::max);
    Outcome::check(
        gap < SHIFT_TOL,
        format!(
            "max |(beta_marginal - beta0) - shift| = {gap:.4} < {SHIFT_TOL}; shift support {:?} (delta_m {:.3}), \
             values {:?}",
            shift.support.iter().map(|&k| hetero[k]).collect::<Vec<_>>(),
            shift.delta_m,
            shift.support.iter().map(|&k| (shift.gamma_star[k] * 1e3).round() / 1e3).collect::<Vec<_>>()
        ),
    )
}

pub fn selection_ordering() -> Outcome {
    let p0s = [25usize, 50, 100];
    let cfg = StudyConfig {
        base: DgpConfig {
            dependence: Dependence::Endogenous,
            ..DgpConfig::default()
        },
        grid: Grid {
            p0_true: p0s.to_vec(),
            ..Grid::default()
        },
        methods: vec![Method::Lasso1se, Method::Shel1se],
        reps: 50,
        ..StudyConfig::default()
    };
    let result = run_study(&cfg).expect("study runs");
    let mut pass = result.failures.is_empty();
    let mut parts = Vec::new();
    for (s, p0) in cfg.scenarios().iter().zip(p0s) {
        let lasso = result.summary_for(&s.name, Method::Lasso1se).unwrap();
        let shel = result.summary_for(&s.name, Method::Shel1se).unwrap();
        let (fl, fs) = (lasso.metrics["fp"].median, shel.metrics["fp"].median);
        let (tl, ts) = (lasso.metrics["tp"].median, shel.metrics["tp"].median);
        pass &= fs < fl && tl == 6.0 && ts == 6.0;
        parts.push(format!("p0={p0}: median FP shel {fs} < lasso {fl}, median TP {ts}/{tl}"));
    }
    Outcome::check(
        pass,
        format!("{}; failures {}", parts.join("; "), result.failures.len()),
    )
}
