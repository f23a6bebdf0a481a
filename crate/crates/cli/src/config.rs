use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shel_core::data::Family;
use shel_core::estimators::LambdaRule;
use shel_core::inference::NodewiseConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Lasso,
    Shel,
    Gshel,
    Ishel1,
    Ishel2,
    Igshel,
}

impl FitMethod {
    pub fn is_iterative(self) -> bool {
        matches!(self, FitMethod::Ishel1 | FitMethod::Ishel2 | FitMethod::Igshel)
    }

    /// Response family the method is defined for.
    pub fn family(self) -> Option<Family> {
        match self {
            FitMethod::Lasso => None,
            FitMethod::Shel | FitMethod::Ishel1 | FitMethod::Ishel2 => Some(Family::Gaussian),
            FitMethod::Gshel | FitMethod::Igshel => Some(Family::Binomial),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferMode {
    Si1,
    Si2,
    Debias,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV path; relative paths are resolved against the config file.
    pub path: PathBuf,
    pub response: String,
    pub cluster: String,
    #[serde(default = "gaussian")]
    pub family: Family,
}

fn gaussian() -> Family {
    Family::Gaussian
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub method: FitMethod,
    /// Penalty rule for the non-iterative methods and for `igshel`.
    pub rule: LambdaRule,
    pub folds: usize,
    pub n_lambda: usize,
    pub ratio_min: f64,
    /// Screening level for the heterogeneity tests.
    pub alpha: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub e_thr: Option<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            method: FitMethod::Shel,
            rule: LambdaRule::OneSe,
            folds: 10,
            n_lambda: 100,
            ratio_min: 0.01,
            alpha: 0.05,
            tol: 1e-8,
            max_outer: 20,
            e_thr: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub mode: InferMode,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Slack allowed when checking that the response lies in its own selection event.
    #[serde(default = "default_event_tol")]
    pub event_tol: f64,
    #[serde(default)]
    pub nodewise: NodewiseConfig,
}

impl InferenceSection {
    pub fn new(mode: InferMode, level: f64) -> Self {
        InferenceSection {
            mode,
            level,
            event_tol: default_event_tol(),
            nodewise: NodewiseConfig::default(),
        }
    }
}

fn default_level() -> f64 {
    0.95
}

fn default_event_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub fit: FitSection,
    pub inference: Option<InferenceSection>,
}

fn default_seed() -> u64 {
    1
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl FitConfig {
    /// Reads the file and resolves the data path against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: FitConfig = read_toml(path)?;
        if cfg.data.path.is_relative() {
            let dir = path.parent().unwrap_or(Path::new("."));
            cfg.data.path = dir.join(&cfg.data.path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let f = &self.fit;
        if f.folds < 2 || f.n_lambda < 2 {
            return Err(CliError::Config("fit.folds and fit.n_lambda must be at least 2".into()));
        }
        if !(f.ratio_min > 0.0 && f.ratio_min < 1.0) {
            return Err(CliError::Config("fit.ratio_min must lie in (0, 1)".into()));
        }
        if !(f.tol > 0.0) || f.max_outer == 0 {
            return Err(CliError::Config("fit.tol and fit.max_outer must be positive".into()));
        }
        if let Some(family) = f.method.family() {
            if family != self.data.family {
                return Err(CliError::Config(format!(
                    "method {:?} needs a {family:?} response but data.family is {:?}",
                    f.method, self.data.family
                )));
            }
        }
        if let Some(inf) = &self.inference {
            check_inference(inf.mode, self.data.family, f.method)?;
            if !(inf.level > 0.0 && inf.level < 1.0) {
                return Err(CliError::Config("inference.level must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Rejects inference requests the methods do not cover.
pub fn check_inference(mode: InferMode, family: Family, method: FitMethod) -> CliResult<()> {
    if method.is_iterative() {
        return Err(CliError::Config(format!(
            "no post-selection inference for iterative fits ({method:?}): the synthetic design is refitted \
             from the response at every step, so the selection event is not a fixed polyhedron"
        )));
    }
    if mode != InferMode::Debias && family == Family::Binomial {
        return Err(CliError::Config(
            "selective inference (si1/si2) needs a Gaussian response; for a binary response the score is only \
             asymptotically normal and the polyhedral test is not valid with many covariates, so use mode debias"
                .into(),
        ));
    }
    Ok(())
}
