use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use shel_core::estimators::{fit_shel, shel_design, LambdaRule};
use shel_core::inference::{build_polyhedron, selective_test, CovarianceModel};
use shel_core::screening::build_synthetic_design;
use shel_core::sim::{generate, run_study, Dependence, DgpConfig, Method, StudyConfig};
use shel_core::solver::SolverConfig;

use crate::common::{ks_uniform, std_normal};
use crate::Outcome;

const EVENTS: usize = 2000;
const KS_TOL: f64 = 0.05;
const COVERAGE: (f64, f64) = (0.93, 0.97);
/// Fixed penalty, chosen before seeing any response so that conditioning on
/// the event is exact.
const LAMBDA: f64 = 0.15;
const SIGMA2: f64 = 1.0;
const TAU2: f64 = 0.5;

struct Draw {
    pivot: f64,
    covered: bool,
}

/// One global-null dataset: covariates from the simulation design, response
/// `α_i + ε_ij` independent of them. Returns `None` when nothing is selected.
fn null_event(seed: u64, tau2: f64, cov: &CovarianceModel) -> Option<Draw> {
    let cfg = DgpConfig {
        m: 100,
        n: 4,
        p: 50,
        p0_true: 10,
        dependence: Dependence::Independent,
        beta_support: vec![],
        beta_values: vec![],
        seed,
        ..DgpConfig::default()
    };
    let (data, _) = generate(&cfg).expect("valid null design");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4e11);
    let alpha: Vec<f64> = (0..cfg.m)
        .map(|_| tau2.sqrt() * std_normal(&mut rng))
        .collect();
    let y = DVector::from_fn(data.n_obs(), |r, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        alpha[r / cfg.n] + SIGMA2.sqrt() * e
    });
    let data = shel_core::data::ClusteredDataset::new(y, data.x().clone(), data.labels().to_vec(), data.family())
        .expect("valid dataset");
    let (syn, _) = build_synthetic_design(&data, 0.05).expect("screening");
    let f = fit_shel(&data, &syn, LAMBDA, &SolverConfig::default()).expect("fit");
    if f.active_set.is_empty() {
        return None;
    }
    let design = shel_design(data.x(), &syn).expect("design");
    let event = build_polyhedron(&design, data.y(), &f, 1e-6).expect("event");
    let pos = rng.random_range(0..event.active_set.len());
    let t = selective_test(&event, data.y(), cov, data.clusters(), pos, 0.95).expect("selective test");
    // E y is the constant zero and the contrast is orthogonal to constants
    Some(Draw {
        pivot: t.pivot,
        covered: t.ci_lo <= 0.0 && 0.0 <= t.ci_hi,
    })
}

fn collect_events(base_seed: u64, tau2: f64, cov: &CovarianceModel) -> (Vec<Draw>, usize) {
    let mut draws = Vec::with_capacity(EVENTS);
    let mut tried = 0usize;
    let mut next = 0u64;
    while draws.len() < EVENTS {
        let batch = (EVENTS - draws.len()).max(64);
        let seeds: Vec<u64> = (next..next + batch as u64).map(|s| base_seed + s).collect();
        next += batch as u64;
        tried += batch;
        let got: Vec<Option<Draw>> = seeds.par_iter().map(|&s| null_event(s, tau2, cov)).collect();
        draws.extend(got.into_iter().flatten());
    }
    draws.truncate(EVENTS);
    (draws, tried)
}

pub fn selective_validity() -> Outcome {
    let iid = CovarianceModel::iid(SIGMA2).unwrap();
    let (iid_draws, iid_tried) = collect_events(1_000_000, 0.0, &iid);
    let iid_pivots: Vec<f64> = iid_draws.iter().map(|d| d.pivot).collect();
    let ks_iid = ks_uniform(&iid_pivots);

    let omega = CovarianceModel::clustered(SIGMA2, TAU2).unwrap();
    let (cl_draws, cl_tried) = collect_events(2_000_000, TAU2, &omega);
    let cl_pivots: Vec<f64> = cl_draws.iter().map(|d| d.pivot).collect();
    let ks_cl = ks_uniform(&cl_pivots);
    let coverage = cl_draws.iter().filter(|d| d.covered).count() as f64 / cl_draws.len() as f64;

    let pass = ks_iid < KS_TOL && ks_cl < KS_TOL && coverage >= COVERAGE.0 && coverage <= COVERAGE.1;
    Outcome::check(
        pass,
        format!(
            "KS iid-noise {ks_iid:.4} ({EVENTS} events of {iid_tried} draws), KS clustered-noise {ks_cl:.4} \
             ({EVENTS} of {cl_tried}) vs tolerance {KS_TOL}; clustered-covariance coverage {coverage:.4} in \
             [{}, {}]",
            COVERAGE.0, COVERAGE.1
        ),
    )
}

const DEBIAS_NOMINAL: f64 = 0.05;
const NAIVE_FLOOR: f64 = 0.10;

pub fn debiased_fpr() -> Outcome {
    let cfg = StudyConfig {
        base: DgpConfig {
            p0_true: 100,
            dependence: Dependence::Endogenous,
            ..DgpConfig::default()
        },
        grid: Default::default(),
        methods: vec![Method::Debiased, Method::Naive],
        reps: 50,
        inference_rule: LambdaRule::OneSe,
        ..StudyConfig::default()
    };
    let result = run_study(&cfg).expect("study runs");
    let scenario = cfg.scenarios()[0].name.clone();
    let deb = result.summary_for(&scenario, Method::Debiased).expect("debiased summary");
    let naive = result.summary_for(&scenario, Method::Naive).expect("naive summary");
    let fpr = &deb.metrics["fpr"];
    let nfpr = &naive.metrics["fpr"];
    let bound = DEBIAS_NOMINAL + 2.0 * fpr.se;
    let pass = fpr.mean <= bound && nfpr.mean > NAIVE_FLOOR;
    Outcome::check(
        pass,
        format!(
            "debiased FPR {:.4} (s.e. {:.4}, {} reps with selected nulls) <= {bound:.4}; naive FPR {:.4} \
             (s.e. {:.4}) > {NAIVE_FLOOR}; debiased power {:.3}; failures {}",
            fpr.mean,
            fpr.se,
            fpr.count,
            nfpr.mean,
            nfpr.se,
            deb.metrics["power"].mean,
            result.failures.len()
        ),
    )
}
