//! Clustered datasets: responses, covariates and cluster membership.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShelError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

/// Row grouping by cluster, in order of first appearance of each label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    of_row: Vec<usize>,
    rows: Vec<Vec<usize>>,
}

impl ClusterIndex {
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut seen: HashMap<i64, usize> = HashMap::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut of_row = Vec::with_capacity(labels.len());
        for (r, &lab) in labels.iter().enumerate() {
            let next = rows.len();
            let c = *seen.entry(lab).or_insert(next);
            if c == rows.len() {
                rows.push(Vec::new());
            }
            rows[c].push(r);
            of_row.push(c);
        }
        ClusterIndex { of_row, rows }
    }

    /// Number of clusters `m`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Zero-based cluster of each row.
    pub fn of_row(&self) -> &[usize] {
        &self.of_row
    }

    pub fn rows(&self, cluster: usize) -> &[usize] {
        &self.rows[cluster]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// Per-cluster means of `v`.
    pub fn means(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|rows| rows.iter().map(|&r| v[r]).sum::<f64>() / rows.len() as f64)
            .collect()
    }
}

/// Responses, covariates and cluster labels for `N` observations in `m` clusters.
#[derive(Debug, Clone)]
pub struct ClusteredDataset<T: Scalar> {
    y: DVector<T>,
    x: DMatrix<T>,
    labels: Vec<i64>,
    family: Family,
    index: ClusterIndex,
    row_origin: Vec<usize>,
    column_names: Vec<String>,
}

impl<T: Scalar> ClusteredDataset<T> {
    pub fn new(y: DVector<T>, x: DMatrix<T>, labels: Vec<i64>, family: Family) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(ShelError::EmptyDataset);
        }
        if x.nrows() != n || labels.len() != n {
            return Err(ShelError::Dimension(format!(
                "y has {} rows, X has {}, cluster labels {}",
                n,
                x.nrows(),
                labels.len()
            )));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(ShelError::NonFinite { field: "y", row });
        }
        for (k, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(ShelError::NonFinite {
                    field: "X",
                    row: k % n,
                });
            }
        }
        if family == Family::Binomial {
            if let Some(row) = y.iter().position(|&v| v != T::zero() && v != T::one()) {
                return Err(ShelError::Data(format!(
                    "binomial response must be 0 or 1 (row {row})"
                )));
            }
        }
        let column_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let index = ClusterIndex::from_labels(&labels);
        Ok(ClusteredDataset {
            y,
            x,
            labels,
            family,
            index,
            row_origin: (0..n).collect(),
            column_names,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(ShelError::Dimension(format!(
                "{} column names for {} covariates",
                names.len(),
                self.x.ncols()
            )));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn clusters(&self) -> &ClusterIndex {
        &self.index
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Original row index of each row, composed across canonicalizations.
    pub fn row_origin(&self) -> &[usize] {
        &self.row_origin
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        self.index.len()
    }

    pub fn is_canonical(&self) -> bool {
        let mut r = 0;
        for (c, rows) in self.index.iter().enumerate() {
            for &row in rows {
                if row != r || self.labels[row] != c as i64 + 1 {
                    return false;
                }
                r += 1;
            }
        }
        true
    }

    /// Relabels clusters `1..=m` in first-appearance order and groups their rows
    /// contiguously, keeping the within-cluster row order.
    pub fn canonicalize(&self) -> Self {
        let order: Vec<usize> = self.index.iter().flatten().copied().collect();
        let mut labels = Vec::with_capacity(order.len());
        for (c, rows) in self.index.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c as i64 + 1, rows.len()));
        }
        let y = DVector::from_iterator(order.len(), order.iter().map(|&r| self.y[r]));
        let x = self.x.select_rows(order.iter());
        let row_origin = order.iter().map(|&r| self.row_origin[r]).collect();
        let index = ClusterIndex::from_labels(&labels);
        ClusteredDataset {
            y,
            x,
            labels,
            family: self.family,
            index,
            row_origin,
            column_names: self.column_names.clone(),
        }
    }

    /// Restricts to the given clusters (zero-based), preserving their order.
    pub fn subset_clusters(&self, clusters: &[usize]) -> Self {
        let rows: Vec<usize> = clusters
            .iter()
            .flat_map(|&c| self.index.rows(c).iter().copied())
            .collect();
        self.subset_rows(&rows)
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        let x = self.x.select_rows(rows.iter());
        let labels: Vec<i64> = rows.iter().map(|&r| self.labels[r]).collect();
        let index = ClusterIndex::from_labels(&labels);
        ClusteredDataset {
            y,
            x,
            labels,
            family: self.family,
            index,
            row_origin: rows.iter().map(|&r| self.row_origin[r]).collect(),
            column_names: self.column_names.clone(),
        }
    }

    /// Same covariates and clusters with a replacement response.
    pub fn with_response(&self, y: DVector<T>) -> Result<Self> {
        ClusteredDataset::new(y, self.x.clone(), self.labels.clone(), self.family)?
            .with_column_names(self.column_names.clone())
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|v| v.to_f64().unwrap()).collect()
    }

    pub fn column_f64(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().map(|v| v.to_f64().unwrap()).collect()
    }
}

/// Which columns of a CSV file hold the response and the cluster label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSpec {
    pub response: String,
    pub cluster: String,
    #[serde(default = "default_family")]
    pub family: Family,
}

fn default_family() -> Family {
    Family::Gaussian
}

/// Reads a CSV with a header row. Every column other than the response and the
/// cluster label becomes a covariate. Cluster labels may be integers or arbitrary
/// strings; strings are numbered by first appearance.
pub fn read_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<ClusteredDataset<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ShelError::MissingColumn(name.to_string()))
    };
    let yi = find(&spec.response)?;
    let ci = find(&spec.cluster)?;
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != yi && i != ci).collect();
    let names: Vec<String> = cov_idx.iter().map(|&i| headers[i].trim().to_string()).collect();

    let mut y = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut string_labels: HashMap<String, i64> = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(ShelError::Data(format!(
                    "missing value in column `{}` at data row {}",
                    headers[i].trim(),
                    row + 1
                )));
            }
            raw.parse::<f64>().map_err(|_| {
                ShelError::Data(format!(
                    "non-numeric value `{raw}` in column `{}` at data row {}",
                    headers[i].trim(),
                    row + 1
                ))
            })
        };
        y.push(parse(yi)?);
        for &i in &cov_idx {
            xs.push(parse(i)?);
        }
        let raw = rec.get(ci).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(ShelError::Data(format!(
                "missing cluster label at data row {}",
                row + 1
            )));
        }
        let label = match raw.parse::<i64>() {
            Ok(v) => v,
            Err(_) => {
                let next = string_labels.len() as i64 + 1;
                *string_labels.entry(raw.to_string()).or_insert(next)
            }
        };
        labels.push(label);
    }
    let n = y.len();
    let p = cov_idx.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    ClusteredDataset::new(DVector::from_vec(y), x, labels, spec.family)?.with_column_names(names)
}
