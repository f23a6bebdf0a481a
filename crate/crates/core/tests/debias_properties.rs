use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shel_core::data::{ClusteredDataset, Family};
use shel_core::design::SyntheticDesign;
use shel_core::estimators::{cross_validate, fit_shel, CvConfig};
use shel_core::inference::{cluster_variance, debias, debiased_test_suite, nodewise_fit, NodewiseConfig, NodewisePenalty};
use shel_core::screening::build_synthetic_design;
use shel_core::sim::{generate, Dependence, DgpConfig};
use shel_core::solver::SolverConfig;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Tridiagonal precision with unit diagonal and −0.4 off the diagonal.
fn precision(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => -0.4,
        _ => 0.0,
    })
}

fn gaussian_design(seed: u64, n: usize, theta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = theta.nrows();
    let cov = theta.clone().try_inverse().unwrap();
    let l = cov.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    z * l.transpose()
}

#[test]
fn nodewise_direction_estimates_precision_columns() {
    let p = 6;
    let n = 2000;
    let theta = precision(p);
    let x = gaussian_design(1, n, &theta);
    let y = DVector::zeros(n);
    let labels = (0..n).map(|i| (i / 4) as i64).collect();
    let data = ClusteredDataset::new(y, x, labels, Family::Gaussian).unwrap();
    let empty = SyntheticDesign::empty(n, 0.0);
    let v = vec![1.0; n];
    for l in 0..p {
        let node = nodewise_fit(&data, &empty, &v, l, &NodewiseConfig::default(), &SolverConfig::default()).unwrap();
        let a = DVector::from_column_slice(&node.a_hat);
        let col = theta.column(l);
        let rel = (&a - col).norm() / col.norm();
        assert!(rel < 0.2, "column {l}: relative error {rel}");
    }
}

#[test]
fn cluster_variance_matches_observation_level_without_clustering() {
    let (m, size, p) = (2000usize, 4usize, 8usize);
    let n = m * size;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + normal(&mut rng));
    let labels = (0..n).map(|i| (i / size) as i64).collect();
    let data = ClusteredDataset::new(y, x, labels, Family::Gaussian).unwrap();
    let empty = SyntheticDesign::empty(n, 0.0);
    let solver = SolverConfig::default();
    let f = fit_shel(&data, &empty, 0.05, &solver).unwrap();
    let v = vec![1.0; n];
    for l in 0..p {
        let node = nodewise_fit(&data, &empty, &v, l, &NodewiseConfig::default(), &solver).unwrap();
        let (_, phi) = debias(&data, &empty, &f, &node).unwrap();
        let (vhat, _) = cluster_variance(&data, &phi);
        let obs = phi.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let ratio = vhat / size as f64 / obs;
        assert!((ratio - 1.0).abs() < 0.1, "target {l}: ratio {ratio}");
    }
}

/// Coverage for coordinates fixed before looking at the data: the six signals
/// and six nulls, three of them heterogeneous across clusters.
#[test]
fn debiased_intervals_cover_fixed_coordinates() {
    let solver = SolverConfig::default();
    let mut covered = 0usize;
    let mut total = 0usize;
    for rep in 0..25u64 {
        let cfg = DgpConfig {
            m: 100,
            p: 50,
            p0_true: 25,
            dependence: Dependence::Endogenous,
            seed: 400 + rep,
            ..DgpConfig::default()
        };
        let (data, truth) = generate(&cfg).unwrap();
        let nulls: Vec<usize> = (0..cfg.p).filter(|j| truth.beta[*j] == 0.0).collect();
        let (het, hom): (Vec<usize>, Vec<usize>) = nulls.iter().partition(|j| truth.p0_set.contains(j));
        let mut targets = truth.support();
        targets.extend(het.iter().take(3));
        targets.extend(hom.iter().take(3));
        let (syn, _) = build_synthetic_design(&data, 0.05).unwrap();
        let cv = cross_validate(&data, &syn, None, &CvConfig { seed: rep, ..CvConfig::default() }, &solver).unwrap();
        let f = fit_shel(&data, &syn, cv.lambda_1se, &solver).unwrap();
        let report = debiased_test_suite(&data, &syn, &f, &targets, &NodewiseConfig::default(), &solver).unwrap();
        for r in report.rows.iter().filter(|r| r.error.is_none()) {
            total += 1;
            covered += usize::from(r.ci_lo <= truth.beta[r.index] && truth.beta[r.index] <= r.ci_hi);
        }
    }
    let rate = covered as f64 / total as f64;
    let band = 2.0 * (0.95 * 0.05 / total as f64).sqrt();
    assert!(total >= 280, "only {total} intervals");
    assert!((rate - 0.95).abs() <= band, "coverage {rate} over {total}");
}

/// Under the global null, with intercepts independent of the covariates and a
/// fixed penalty, the z-statistics of every coordinate are close to standard
/// normal. With endogenous intercepts and four rows per cluster the synthetic
/// columns only proxy the cluster means, so the target itself moves off zero.
#[test]
fn global_null_z_statistics_are_standard_normal() {
    let solver = SolverConfig::default();
    let nodewise = NodewiseConfig {
        penalty: NodewisePenalty::Fixed(0.1),
        ..NodewiseConfig::default()
    };
    let mut zs = Vec::new();
    for rep in 0..100u64 {
        let cfg = DgpConfig {
            m: 100,
            p: 20,
            p0_true: 5,
            dependence: Dependence::Independent,
            beta_support: vec![],
            beta_values: vec![],
            seed: 700 + rep,
            ..DgpConfig::default()
        };
        let (data, _) = generate(&cfg).unwrap();
        let (syn, _) = build_synthetic_design(&data, 0.05).unwrap();
        let f = fit_shel(&data, &syn, 0.1, &solver).unwrap();
        let targets: Vec<usize> = (0..cfg.p).collect();
        let report = debiased_test_suite(&data, &syn, &f, &targets, &nodewise, &solver).unwrap();
        zs.extend(report.rows.iter().filter(|r| r.error.is_none()).map(|r| r.z));
    }
    let ks = ks_normal(&mut zs);
    assert!(ks < 0.06, "KS distance {ks} over {} statistics", zs.len());
}

fn ks_normal(z: &mut [f64]) -> f64 {
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = shel_core::inference::norm_cdf(v);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}
