use std::path::Path;

use serde::{Deserialize, Serialize};
use shel_core::data::{read_csv, CsvSpec, Family};
use shel_core::estimators::{
    cross_validate, fit_gshel, fit_ishel, fit_marginal, fit_shel, CvConfig, CvResult, IshelConfig, IterativeTrace,
    LambdaRule,
};
use shel_core::screening::{build_synthetic_design, ScreeningReport};
use shel_core::{Dataset, Fit, Solver, Synthetic};

use crate::config::{DataSection, FitConfig, FitMethod};
use crate::error::{CliError, CliResult};

pub fn load_data(section: &DataSection) -> CliResult<Dataset> {
    let spec = CsvSpec {
        response: section.response.clone(),
        cluster: section.cluster.clone(),
        family: section.family,
    };
    read_csv(&section.path, &spec).map_err(|e| {
        // unreadable input is a data problem whatever the underlying cause
        CliError::Data(format!("reading {}: {e}", section.path.display()))
    })
}

pub fn solver(cfg: &FitConfig) -> Solver {
    Solver {
        tol: cfg.fit.tol,
        ..Solver::default()
    }
}

pub struct Fitted {
    pub data: Dataset,
    /// Synthetic design the returned fit was computed with; empty for `lasso`.
    pub synthetic: Synthetic,
    pub screening: ScreeningReport,
    pub fit: Fit,
    /// Cross-validation behind the penalty; absent for a restored fit.
    pub cv: Option<CvResult>,
    pub trace: Option<IterativeTrace>,
}

pub fn run_fit(cfg: &FitConfig) -> CliResult<Fitted> {
    let data = load_data(&cfg.data)?;
    let (screened, screening) =
        build_synthetic_design(&data, cfg.fit.alpha).map_err(CliError::at("screening"))?;
    let solver = solver(cfg);
    let cv_cfg = CvConfig {
        folds: cfg.fit.folds,
        n_lambda: cfg.fit.n_lambda,
        ratio_min: cfg.fit.ratio_min,
        seed: cfg.seed,
    };
    let method = cfg.fit.method;
    if method.is_iterative() {
        let rule = match method {
            FitMethod::Ishel1 => LambdaRule::OneSe,
            FitMethod::Ishel2 => LambdaRule::Min,
            _ => cfg.fit.rule,
        };
        let ishel = IshelConfig {
            rule,
            e_thr: cfg.fit.e_thr,
            max_outer: cfg.fit.max_outer,
            cv: cv_cfg,
        };
        let it = fit_ishel(&data, &screened, &ishel, &solver).map_err(CliError::at("iterative refit"))?;
        return Ok(Fitted {
            data,
            synthetic: screened,
            screening,
            fit: it.fit,
            cv: Some(it.cv),
            trace: Some(it.trace),
        });
    }
    let synthetic = if method == FitMethod::Lasso {
        Synthetic::empty(data.n_obs(), cfg.fit.alpha)
    } else {
        screened
    };
    let cv = cross_validate(&data, &synthetic, None, &cv_cfg, &solver).map_err(CliError::at("cross-validation"))?;
    let fit = refit(method, &data, &synthetic, cv.lambda(cfg.fit.rule), &solver)?;
    Ok(Fitted {
        data,
        synthetic,
        screening,
        fit,
        cv: Some(cv),
        trace: None,
    })
}

/// Penalized fit of a non-iterative method at a given penalty.
pub fn refit(
    method: FitMethod,
    data: &Dataset,
    synthetic: &Synthetic,
    lambda: f64,
    solver: &Solver,
) -> CliResult<Fit> {
    let fit = match method {
        FitMethod::Lasso => fit_marginal(data, lambda, solver),
        FitMethod::Shel => fit_shel(data, synthetic, lambda, solver),
        FitMethod::Gshel => fit_gshel(data, synthetic, lambda, solver),
        _ => unreachable!("iterative methods are refitted through their own loop"),
    };
    fit.map_err(CliError::at("penalized fit"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Coefficient {
    pub index: usize,
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SyntheticColumn {
    /// Covariate whose cluster means form the column.
    pub source: usize,
    pub name: String,
    pub pvalue: f64,
    pub gamma: f64,
}

/// Contents of the fit JSON. Reading it back only needs the fields used to
/// rebuild the fit, so the diagnostics are kept as raw JSON.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitRecord {
    pub config: FitConfig,
    pub method: FitMethod,
    pub family: Family,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub intercept: f64,
    /// Names of the selected covariates, in covariate order.
    pub active_set: Vec<String>,
    pub active_synthetic: Vec<String>,
    pub coefficients: Vec<Coefficient>,
    pub synthetic: Vec<SyntheticColumn>,
    /// Coefficient on the carried synthetic fit of an iterative method.
    pub offset_coef: Vec<f64>,
    pub converged: bool,
    pub cv: serde_json::Value,
    pub iterative: serde_json::Value,
}

impl FitRecord {
    pub fn new(cfg: &FitConfig, f: &Fitted) -> CliResult<Self> {
        let names = f.data.column_names();
        let p = names.len();
        let fit = &f.fit;
        let to_json = |v: serde_json::Result<serde_json::Value>| {
            v.map_err(|e| CliError::Numerical(format!("serializing fit: {e}")))
        };
        Ok(FitRecord {
            config: cfg.clone(),
            method: cfg.fit.method,
            family: f.data.family(),
            n_obs: f.data.n_obs(),
            n_clusters: f.data.n_clusters(),
            lambda1: fit.lambda1,
            lambda2: fit.lambda2,
            intercept: fit.intercept,
            active_set: fit.selected_beta().iter().map(|&j| names[j].clone()).collect(),
            active_synthetic: fit
                .active_set
                .iter()
                .filter(|&&k| k >= p)
                .map(|&k| format!("B_{}", names[f.synthetic.source_column[k - p]]))
                .collect(),
            coefficients: fit
                .beta
                .iter()
                .enumerate()
                .map(|(j, &v)| Coefficient {
                    index: j,
                    name: names[j].clone(),
                    value: v,
                })
                .collect(),
            synthetic: f
                .synthetic
                .source_column
                .iter()
                .zip(&f.synthetic.pvalues)
                .zip(&fit.gamma)
                .map(|((&s, &pv), &g)| SyntheticColumn {
                    source: s,
                    name: names[s].clone(),
                    pvalue: pv,
                    gamma: g,
                })
                .collect(),
            offset_coef: fit.offset_coef.clone(),
            converged: fit.converged,
            cv: to_json(serde_json::to_value(&f.cv))?,
            iterative: to_json(serde_json::to_value(&f.trace))?,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::output(path, e))
}

pub fn create_file(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::output(path, e))
}
