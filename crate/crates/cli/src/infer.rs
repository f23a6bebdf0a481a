use std::path::Path;

use serde::Serialize;
use shel_core::estimators::{shel_design, CvConfig};
use shel_core::{Solver, Synthetic};
use shel_core::inference::{
    build_polyhedron, debiased_test_suite, estimate_covariance, selective_inference, CovarianceKind,
    CovarianceModel, NodewiseConfig,
};

use crate::config::{InferMode, InferenceSection};
use crate::error::{CliError, CliResult};
use crate::fit::{create_file, refit, solver, write_json, FitRecord, Fitted};

#[derive(Debug, Serialize)]
pub struct InferenceSummary {
    pub mode: InferMode,
    pub level: f64,
    pub n_tested: usize,
    /// Residual variance components used by `si1`/`si2`.
    pub covariance: Option<CovarianceModel>,
    pub n_failed: usize,
}

/// Writes `inference.csv` and `inference.json` into `out_dir`.
pub fn run_inference(f: &Fitted, section: &InferenceSection, seed: u64, tol: f64, out_dir: &Path) -> CliResult<()> {
    let csv_path = out_dir.join("inference.csv");
    let summary = match section.mode {
        InferMode::Si1 | InferMode::Si2 => {
            let design = shel_design(f.data.x(), &f.synthetic).map_err(CliError::at("selection event"))?;
            let event =
                build_polyhedron(&design, f.data.y(), &f.fit, section.event_tol).map_err(CliError::at("selection event"))?;
            let fitted = f.fit.fitted(&design);
            let resid: Vec<f64> = f.data.y().iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
            let kind = if section.mode == InferMode::Si1 {
                CovarianceKind::Iid
            } else {
                CovarianceKind::Clustered
            };
            let cov = estimate_covariance(&resid, f.data.clusters(), kind).map_err(CliError::at("covariance estimation"))?;
            let report = selective_inference(&event, f.data.y(), &cov, f.data.clusters(), section.level)
                .map_err(CliError::at("selective inference"))?;
            report
                .write_csv(create_file(&csv_path)?)
                .map_err(|e| CliError::output(&csv_path, e))?;
            InferenceSummary {
                mode: section.mode,
                level: section.level,
                n_tested: report.rows.len(),
                covariance: Some(cov),
                n_failed: 0,
            }
        }
        InferMode::Debias => {
            let nodewise = NodewiseConfig {
                cv: CvConfig {
                    seed,
                    ..section.nodewise.cv.clone()
                },
                level: section.level,
                ..section.nodewise.clone()
            };
            let solver = Solver {
                tol,
                ..Default::default()
            };
            let targets = f.fit.selected_beta();
            let report = debiased_test_suite(&f.data, &f.synthetic, &f.fit, &targets, &nodewise, &solver)
                .map_err(CliError::at("debiased inference"))?;
            report
                .write_csv(create_file(&csv_path)?)
                .map_err(|e| CliError::output(&csv_path, e))?;
            InferenceSummary {
                mode: section.mode,
                level: section.level,
                n_tested: report.rows.len(),
                covariance: None,
                n_failed: report.rows.iter().filter(|r| r.error.is_some()).count(),
            }
        }
    };
    write_json(&out_dir.join("inference.json"), &summary)
}

/// Rebuilds a stored fit from its record and the data, checking that the
/// selection is reproduced.
pub fn restore(record: &FitRecord, data_path: Option<&Path>) -> CliResult<Fitted> {
    let mut cfg = record.config.clone();
    if let Some(p) = data_path {
        cfg.data.path = p.to_path_buf();
    }
    let data = crate::fit::load_data(&cfg.data)?;
    let names = data.column_names();
    let p = names.len();
    if p != record.coefficients.len() || names.iter().zip(&record.coefficients).any(|(n, c)| *n != c.name) {
        return Err(CliError::Data("covariate columns differ from those of the stored fit".into()));
    }
    let synthetic = Synthetic::from_columns(
        data.x(),
        data.clusters(),
        record.synthetic.iter().map(|s| s.source).collect(),
        record.synthetic.iter().map(|s| s.pvalue).collect(),
        cfg.fit.alpha,
    );
    let fit = refit(record.method, &data, &synthetic, record.lambda1, &solver(&cfg))?;
    let active: Vec<String> = fit.selected_beta().iter().map(|&j| names[j].clone()).collect();
    if active != record.active_set {
        return Err(CliError::Numerical(format!(
            "refit: selection {active:?} differs from the stored {:?}",
            record.active_set
        )));
    }
    Ok(Fitted {
        data,
        synthetic,
        screening: Default::default(),
        fit,
        cv: None,
        trace: None,
    })
}

