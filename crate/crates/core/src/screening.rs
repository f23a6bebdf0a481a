//! Between-cluster heterogeneity screening of covariates and construction of the
//! synthetic design from the cluster means of the screened ones.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::{ClusterIndex, ClusteredDataset};
use crate::design::SyntheticDesign;
use crate::error::{Result, ShelError};
use crate::mixed::{anova_components, logistic_variance_test};

/// One-way ANOVA F-test p-value for equal cluster means.
///
/// A covariate with no variation at all gets p = 1; one that varies only between
/// clusters gets p = 0.
pub fn anova_heterogeneity(x: &[f64], clusters: &ClusterIndex) -> Result<f64> {
    let c = anova_components(x, clusters)?;
    let between = c.ms_between;
    let within = c.sigma2;
    if within == 0.0 {
        return Ok(if between > 0.0 { 0.0 } else { 1.0 });
    }
    let f = between / within;
    let dist = FisherSnedecor::new(c.df_between as f64, c.df_within as f64)
        .map_err(|e| ShelError::numerical("ANOVA screening", e.to_string()))?;
    Ok(dist.sf(f).clamp(0.0, 1.0))
}

/// Boundary likelihood-ratio test of zero between-cluster variance for a 0/1
/// covariate. A covariate with a single level has no heterogeneity (p = 1).
pub fn binary_heterogeneity(x: &[f64], clusters: &ClusterIndex) -> Result<HeterogeneityTest> {
    let ones = x.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == x.len() {
        return Ok(HeterogeneityTest {
            kind: TestKind::Binary,
            pvalue: 1.0,
            statistic: 0.0,
            score_fallback: false,
        });
    }
    let t = logistic_variance_test(x, clusters)?;
    Ok(HeterogeneityTest {
        kind: TestKind::Binary,
        pvalue: t.pvalue.clamp(0.0, 1.0),
        statistic: t.statistic,
        score_fallback: t.score_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Anova,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneityTest {
    pub kind: TestKind,
    pub pvalue: f64,
    pub statistic: f64,
    pub score_fallback: bool,
}

fn is_binary(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Runs the test appropriate to the covariate's values.
pub fn heterogeneity_test(x: &[f64], clusters: &ClusterIndex) -> Result<HeterogeneityTest> {
    if is_binary(x) {
        binary_heterogeneity(x, clusters)
    } else {
        let c = anova_components(x, clusters)?;
        let pvalue = anova_heterogeneity(x, clusters)?;
        Ok(HeterogeneityTest {
            kind: TestKind::Anova,
            pvalue,
            statistic: if c.sigma2 > 0.0 { c.ms_between / c.sigma2 } else { f64::INFINITY },
            score_fallback: false,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreeningRow {
    /// Zero-based covariate index.
    pub index: usize,
    pub name: String,
    pub test: TestKind,
    pub pvalue: f64,
    pub selected: bool,
    pub score_fallback: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScreeningReport {
    pub alpha: f64,
    pub rows: Vec<ScreeningRow>,
}

impl ScreeningReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "name", "test", "pvalue", "selected", "score_fallback"])?;
        for r in &self.rows {
            let test = match r.test {
                TestKind::Anova => "anova",
                TestKind::Binary => "binary",
            };
            w.write_record([
                (r.index + 1).to_string(),
                r.name.clone(),
                test.to_string(),
                format!("{:e}", r.pvalue),
                r.selected.to_string(),
                r.score_fallback.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tests every covariate for between-cluster heterogeneity and builds `B` from the
/// cluster means of those with p-value below `alpha`, in covariate order.
pub fn build_synthetic_design(
    data: &ClusteredDataset<f64>,
    alpha: f64,
) -> Result<(SyntheticDesign<f64>, ScreeningReport)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(ShelError::Config("screening alpha must lie in [0, 1)".into()));
    }
    let clusters = data.clusters();
    let tests: Vec<HeterogeneityTest> = (0..data.n_covariates())
        .into_par_iter()
        .map(|j| heterogeneity_test(&data.column_f64(j), clusters))
        .collect::<Result<_>>()?;
    let mut sources = Vec::new();
    let mut pvalues = Vec::new();
    let mut rows = Vec::with_capacity(tests.len());
    for (j, t) in tests.iter().enumerate() {
        let selected = t.pvalue < alpha;
        if selected {
            sources.push(j);
            pvalues.push(t.pvalue);
        }
        rows.push(ScreeningRow {
            index: j,
            name: data.column_names()[j].clone(),
            test: t.kind,
            pvalue: t.pvalue,
            selected,
            score_fallback: t.score_fallback,
        });
    }
    let design = SyntheticDesign::from_columns(data.x(), clusters, sources, pvalues, alpha);
    Ok((design, ScreeningReport { alpha, rows }))
}
