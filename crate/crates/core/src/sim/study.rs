use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, Dependence, DgpConfig, InterceptDist, Truth};
use super::metrics::{classification, score_estimation, score_inference, score_selection, TestOutcome};
use crate::data::{ClusteredDataset, Family};
use crate::design::{predict_original, SyntheticDesign};
use crate::error::{Result, ShelError};
use crate::estimators::{cross_validate, fit_ishel, shel_design, CvConfig, IshelConfig, LambdaRule};
use crate::inference::{
    build_polyhedron, debiased_test_suite, estimate_covariance, normal_quantile, selective_test, CovarianceKind,
    NodewiseConfig,
};
use crate::mixed::{fit_glmm_logistic, fit_lmm, MixedFit};
use crate::screening::build_synthetic_design;
use crate::solver::{expit, fit, PenalizedFit, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LassoMin,
    #[serde(rename = "lasso_1se")]
    Lasso1se,
    ShelMin,
    #[serde(rename = "shel_1se")]
    Shel1se,
    Ishel1,
    Ishel2,
    Si1,
    Si2,
    Debiased,
    Naive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LassoMin => "lasso_min",
            Method::Lasso1se => "lasso_1se",
            Method::ShelMin => "shel_min",
            Method::Shel1se => "shel_1se",
            Method::Ishel1 => "ishel1",
            Method::Ishel2 => "ishel2",
            Method::Si1 => "si1",
            Method::Si2 => "si2",
            Method::Debiased => "debiased",
            Method::Naive => "naive",
        }
    }

    fn is_inference(self) -> bool {
        matches!(self, Method::Si1 | Method::Si2 | Method::Debiased | Method::Naive)
    }

    fn supports(self, family: Family) -> bool {
        family == Family::Gaussian || !matches!(self, Method::Si1 | Method::Si2)
    }
}

/// Scenario axes; an empty list keeps the base configuration's value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub p0_true: Vec<usize>,
    pub dependence: Vec<Dependence>,
    pub intercept_dist: Vec<InterceptDist>,
    pub family: Vec<Family>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub base: DgpConfig,
    pub grid: Grid,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    /// Screening level used to build the synthetic design.
    pub screening_alpha: f64,
    pub cv: CvConfig,
    /// Outer-loop settings of the iterative fits (its rule and CV are overridden).
    pub ishel: IshelConfig,
    pub nodewise: NodewiseConfig,
    /// Penalty rule of the SHEL fit whose selections are tested.
    pub inference_rule: LambdaRule,
    /// Significance level for counting rejections.
    pub test_alpha: f64,
    /// Confidence level of the reported intervals.
    pub level: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            base: DgpConfig::default(),
            grid: Grid {
                p0_true: vec![0, 25, 50, 100],
                ..Grid::default()
            },
            methods: vec![
                Method::LassoMin,
                Method::Lasso1se,
                Method::ShelMin,
                Method::Shel1se,
                Method::Ishel1,
                Method::Ishel2,
            ],
            reps: 50,
            seed: 20_240_601,
            screening_alpha: 0.05,
            cv: CvConfig::default(),
            ishel: IshelConfig::default(),
            nodewise: NodewiseConfig::default(),
            inference_rule: LambdaRule::OneSe,
            test_alpha: 0.05,
            level: 0.95,
        }
    }
}

impl StudyConfig {
    /// Full-size setting: 400 clusters of 4, 1000 covariates, 200 replications,
    /// heterogeneous counts {0, 50, 100, 200, 500, 800}.
    pub fn paper_scale(mut self) -> Self {
        self.base.m = 400;
        self.base.n = 4;
        self.base.p = 1000;
        self.reps = 200;
        self.grid.p0_true = vec![0, 50, 100, 200, 500, 800];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(ShelError::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ShelError::Config("no methods requested".into()));
        }
        if !(self.test_alpha > 0.0 && self.test_alpha < 1.0) || !(self.level > 0.0 && self.level < 1.0) {
            return Err(ShelError::Config("test_alpha and level must lie in (0, 1)".into()));
        }
        for s in self.scenarios() {
            s.dgp.validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the grid axes, in a fixed order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for family in axis(&self.grid.family, self.base.family) {
            for dependence in axis(&self.grid.dependence, self.base.dependence) {
                for intercept in axis(&self.grid.intercept_dist, self.base.intercept_dist) {
                    for p0 in axis(&self.grid.p0_true, self.base.p0_true) {
                        let dgp = DgpConfig {
                            family,
                            dependence,
                            intercept_dist: intercept,
                            p0_true: p0,
                            ..self.base.clone()
                        };
                        let name = format!(
                            "{}-{}-{}-p0_{}",
                            serde_plain(&family),
                            serde_plain(&dependence),
                            serde_plain(&intercept),
                            p0
                        );
                        out.push(Scenario { name, dgp });
                    }
                }
            }
        }
        out
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub dgp: DgpConfig,
}

/// Metrics of one method on one replication; NaN marks a metric that does not
/// apply.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: Method,
    pub rep: usize,
    pub fp: usize,
    pub tp: usize,
    pub rmse: f64,
    pub l1_error: f64,
    pub residual_icc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub power: f64,
    pub median_ci_length: f64,
    pub n_tested: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub scenario: String,
    pub method: Option<Method>,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Monte-Carlo standard error of the mean.
    pub se: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        let count = v.len();
        if count == 0 {
            return Summary {
                count,
                mean: f64::NAN,
                median: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let se = if count > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64 / count as f64).sqrt()
        } else {
            f64::NAN
        };
        Summary {
            count,
            mean,
            median: super::metrics::median(&v),
            se,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: Method,
    pub n_rows: usize,
    pub n_failed: usize,
    pub metrics: BTreeMap<&'static str, Summary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<Failure>,
    pub summary: Vec<MethodSummary>,
}

/// Column order of the per-replication metrics, after `scenario`, `method` and `rep`.
pub const METRIC_NAMES: [&str; 11] = [
    "fp",
    "tp",
    "rmse",
    "l1_error",
    "residual_icc",
    "sensitivity",
    "specificity",
    "fpr",
    "power",
    "median_ci_length",
    "n_tested",
];

impl MetricsRow {
    fn values(&self) -> [f64; 11] {
        [
            self.fp as f64,
            self.tp as f64,
            self.rmse,
            self.l1_error,
            self.residual_icc,
            self.sensitivity,
            self.specificity,
            self.fpr,
            self.power,
            self.median_ci_length,
            self.n_tested as f64,
        ]
    }
}

struct Replication<'a> {
    config: &'a StudyConfig,
    data: ClusteredDataset<f64>,
    truth: Truth,
    synthetic: SyntheticDesign<f64>,
    empty: SyntheticDesign<f64>,
    cv: CvConfig,
    solver: SolverConfig<f64>,
}

#[derive(Clone)]
struct Selection {
    fit: PenalizedFit<f64>,
    fitted: DVector<f64>,
}

impl Replication<'_> {
    fn penalized(&self, synthetic: &SyntheticDesign<f64>, rule: LambdaRule) -> Result<Selection> {
        let cv = cross_validate(&self.data, synthetic, None, &self.cv, &self.solver)?;
        let design = shel_design(self.data.x(), synthetic)?;
        let f = fit(&design, self.data.y(), self.data.family(), cv.lambda(rule), &self.solver)?;
        let fitted = self.linear_predictor(synthetic, &f, None);
        Ok(Selection { fit: f, fitted })
    }

    fn iterative(&self, rule: LambdaRule) -> Result<Selection> {
        let cfg = IshelConfig {
            rule,
            cv: self.cv.clone(),
            ..self.config.ishel.clone()
        };
        let r = fit_ishel(&self.data, &self.synthetic, &cfg, &self.solver)?;
        let fitted = self.linear_predictor(&self.synthetic, &r.fit, r.carried.as_ref());
        Ok(Selection { fit: r.fit, fitted })
    }

    fn linear_predictor(
        &self,
        synthetic: &SyntheticDesign<f64>,
        f: &PenalizedFit<f64>,
        carried: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let mut coef = f.beta.clone();
        coef.extend_from_slice(&f.gamma);
        let offsets = match carried {
            Some(c) => {
                coef.extend_from_slice(&f.offset_coef);
                DMatrix::from_column_slice(c.len(), 1, c.as_slice())
            }
            None => DMatrix::zeros(self.data.n_obs(), 0),
        };
        predict_original(self.data.x(), &synthetic.b, &offsets, &coef, f.intercept)
    }

    fn selection_row(&self, scenario: &str, method: Method, rep: usize, sel: &Selection) -> MetricsRow {
        let (fp, tp) = score_selection(&sel.fit.beta, &self.truth);
        let y = self.data.y_f64();
        let mut row = blank_row(scenario, method, rep, fp, tp);
        match self.data.family() {
            Family::Gaussian => {
                let (rmse, l1, icc) = score_estimation(
                    &y,
                    sel.fitted.as_slice(),
                    &sel.fit.beta,
                    &self.truth,
                    self.data.clusters(),
                );
                row.rmse = rmse;
                row.l1_error = l1;
                row.residual_icc = icc;
            }
            Family::Binomial => {
                let mu: Vec<f64> = sel.fitted.iter().map(|&e| expit(e)).collect();
                let (sens, spec) = classification(&y, &mu);
                row.sensitivity = sens;
                row.specificity = spec;
                row.l1_error = sel.fit.beta.iter().zip(&self.truth.beta).map(|(a, b)| (a - b).abs()).sum();
            }
        }
        row
    }

    fn inference_tests(&self, method: Method, sel: &Selection) -> Result<Vec<TestOutcome>> {
        let selected = sel.fit.selected_beta();
        if selected.is_empty() {
            return Ok(Vec::new());
        }
        let q = normal_quantile(0.5 + 0.5 * self.config.level);
        match method {
            Method::Si1 | Method::Si2 => {
                let design = shel_design(self.data.x(), &self.synthetic)?;
                let event = build_polyhedron(&design, self.data.y(), &sel.fit, 1e-6)?;
                let resid: Vec<f64> = self.data.y().iter().zip(sel.fitted.iter()).map(|(a, b)| a - b).collect();
                let kind = if method == Method::Si1 {
                    CovarianceKind::Iid
                } else {
                    CovarianceKind::Clustered
                };
                let cov = estimate_covariance(&resid, self.data.clusters(), kind)?;
                let p = self.data.n_covariates();
                (0..event.active_set.len())
                    .filter(|&pos| event.active_set[pos] < p)
                    .map(|pos| {
                        let t = selective_test(&event, self.data.y(), &cov, self.data.clusters(), pos, self.config.level)?;
                        Ok(TestOutcome {
                            index: t.index,
                            pvalue: t.pvalue,
                            ci_length: (t.ci_hi - t.ci_lo) * t.to_original.abs(),
                        })
                    })
                    .collect()
            }
            Method::Debiased => {
                let rep = debiased_test_suite(
                    &self.data,
                    &self.synthetic,
                    &sel.fit,
                    &selected,
                    &NodewiseConfig {
                        cv: CvConfig {
                            seed: self.cv.seed,
                            ..self.config.nodewise.cv.clone()
                        },
                        level: self.config.level,
                        ..self.config.nodewise.clone()
                    },
                    &self.solver,
                )?;
                if let Some(r) = rep.rows.iter().find(|r| r.error.is_some()) {
                    log::warn!("debiased test of covariate {} failed: {:?}", r.index, r.error);
                }
                Ok(rep
                    .rows
                    .iter()
                    .filter(|r| r.error.is_none())
                    .map(|r| TestOutcome {
                        index: r.index,
                        pvalue: r.pvalue,
                        ci_length: r.ci_hi - r.ci_lo,
                    })
                    .collect())
            }
            Method::Naive => {
                let xs = self.data.x().select_columns(&selected);
                let y = self.data.y_f64();
                let refit: MixedFit = match self.data.family() {
                    Family::Gaussian => fit_lmm(&y, &xs, self.data.clusters())?,
                    Family::Binomial => fit_glmm_logistic(&y, &xs, self.data.clusters())?,
                };
                Ok(selected
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| TestOutcome {
                        index: j,
                        pvalue: refit.wald_pvalue(k + 1),
                        ci_length: 2.0 * q * refit.se[k + 1],
                    })
                    .collect())
            }
            _ => unreachable!("not an inference method"),
        }
    }
}

fn blank_row(scenario: &str, method: Method, rep: usize, fp: usize, tp: usize) -> MetricsRow {
    MetricsRow {
        scenario: scenario.to_string(),
        method,
        rep,
        fp,
        tp,
        rmse: f64::NAN,
        l1_error: f64::NAN,
        residual_icc: f64::NAN,
        sensitivity: f64::NAN,
        specificity: f64::NAN,
        fpr: f64::NAN,
        power: f64::NAN,
        median_ci_length: f64::NAN,
        n_tested: 0,
    }
}

type RepOutcome = (Vec<MetricsRow>, Vec<Failure>);

fn run_replication(config: &StudyConfig, scenario: &Scenario, rep: usize) -> RepOutcome {
    let seed = config.seed.wrapping_add(rep as u64);
    let fail = |method: Option<Method>, e: ShelError| Failure {
        scenario: scenario.name.clone(),
        method,
        rep,
        error: e.to_string(),
    };
    let setup = || -> Result<Replication<'_>> {
        let dgp = DgpConfig {
            seed,
            ..scenario.dgp.clone()
        };
        let (data, truth) = generate(&dgp)?;
        let (synthetic, _) = build_synthetic_design(&data, config.screening_alpha)?;
        let empty = SyntheticDesign::empty(data.n_obs(), config.screening_alpha);
        Ok(Replication {
            config,
            data,
            truth,
            synthetic,
            empty,
            cv: CvConfig {
                seed,
                ..config.cv.clone()
            },
            solver: SolverConfig::default(),
        })
    };
    let r = match setup() {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{} rep {rep}: {e}", scenario.name);
            return (Vec::new(), vec![fail(None, e)]);
        }
    };
    let family = r.data.family();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    // penalized fits shared between selection and inference methods, indexed by
    // (synthetic columns used, rule)
    let mut fits: [Option<Result<Selection>>; 4] = Default::default();
    let mut penalized = |with_b: bool, rule: LambdaRule| -> std::result::Result<Selection, String> {
        let slot = 2 * usize::from(with_b) + usize::from(rule == LambdaRule::OneSe);
        let synthetic = if with_b { &r.synthetic } else { &r.empty };
        match fits[slot].get_or_insert_with(|| r.penalized(synthetic, rule)) {
            Ok(s) => Ok(s.clone()),
            Err(e) => Err(e.to_string()),
        }
    };
    for &method in &config.methods {
        if !method.supports(family) {
            continue;
        }
        let outcome = if method.is_inference() {
            match penalized(true, config.inference_rule) {
                Ok(sel) => r.inference_tests(method, &sel).map(|tests| {
                    let (fp, tp) = score_selection(&sel.fit.beta, &r.truth);
                    let mut row = blank_row(&scenario.name, method, rep, fp, tp);
                    let (fpr, power, len) = score_inference(&tests, &r.truth, config.test_alpha);
                    row.fpr = fpr;
                    row.power = power;
                    row.median_ci_length = len;
                    row.n_tested = tests.len();
                    row
                }),
                Err(e) => Err(ShelError::numerical("inference fit", e)),
            }
        } else {
            let sel = match method {
                Method::LassoMin => penalized(false, LambdaRule::Min),
                Method::Lasso1se => penalized(false, LambdaRule::OneSe),
                Method::ShelMin => penalized(true, LambdaRule::Min),
                Method::Shel1se => penalized(true, LambdaRule::OneSe),
                Method::Ishel1 => r.iterative(LambdaRule::OneSe).map_err(|e| e.to_string()),
                Method::Ishel2 => r.iterative(LambdaRule::Min).map_err(|e| e.to_string()),
                _ => unreachable!(),
            };
            sel.map(|s| r.selection_row(&scenario.name, method, rep, &s))
                .map_err(|e| ShelError::numerical(method.name(), e))
        };
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("{} rep {rep} {}: {e}", scenario.name, method.name());
                failures.push(fail(Some(method), e));
            }
        }
    }
    (rows, failures)
}

/// Runs every scenario for `reps` replications; replication `r` draws its data
/// and folds from `seed + r`. Output order and values do not depend on the
/// number of worker threads.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let scenarios = config.scenarios();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..config.reps).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<RepOutcome> = jobs
        .par_iter()
        .map(|&(s, r)| run_replication(config, &scenarios[s], r))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in outcomes {
        rows.extend(r);
        failures.extend(f);
    }
    let summary = summarize(&scenarios, config, &rows, &failures);
    Ok(StudyResult {
        config: config.clone(),
        rows,
        failures,
        summary,
    })
}

fn summarize(scenarios: &[Scenario], config: &StudyConfig, rows: &[MetricsRow], failures: &[Failure]) -> Vec<MethodSummary> {
    let mut out = Vec::new();
    for s in scenarios {
        for &method in &config.methods {
            if !method.supports(s.dgp.family) {
                continue;
            }
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.scenario == s.name && r.method == method).collect();
            let n_failed = failures
                .iter()
                .filter(|f| f.scenario == s.name && f.method.is_none_or(|m| m == method))
                .count();
            let mut metrics = BTreeMap::new();
            for (k, name) in METRIC_NAMES.iter().enumerate() {
                let vals: Vec<f64> = mine.iter().map(|r| r.values()[k]).collect();
                metrics.insert(*name, Summary::of(&vals));
            }
            out.push(MethodSummary {
                scenario: s.name.clone(),
                method,
                n_rows: mine.len(),
                n_failed,
                metrics,
            });
        }
    }
    out
}

impl StudyResult {
    /// One row per scenario, method and replication.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scenario", "method", "rep"];
        header.extend(METRIC_NAMES);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.scenario.clone(), r.method.name().to_string(), r.rep.to_string()];
            rec.push(r.fp.to_string());
            rec.push(r.tp.to_string());
            for v in [
                r.rmse,
                r.l1_error,
                r.residual_icc,
                r.sensitivity,
                r.specificity,
                r.fpr,
                r.power,
                r.median_ci_length,
            ] {
                rec.push(format!("{v:e}"));
            }
            rec.push(r.n_tested.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregated summary with the effective configuration echoed.
    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            config: &'a StudyConfig,
            failures: &'a [Failure],
            summary: &'a [MethodSummary],
        }
        serde_json::to_writer_pretty(
            out,
            &Doc {
                config: &self.config,
                failures: &self.failures,
                summary: &self.summary,
            },
        )?;
        Ok(())
    }

    pub fn summary_for(&self, scenario: &str, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.scenario == scenario && s.method == method)
    }
}
