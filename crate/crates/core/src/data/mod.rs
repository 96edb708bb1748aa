//! Clustered longitudinal data and the design matrices derived from it.
//!
//! Rows are stored grouped by cluster, with clusters in order of first
//! appearance in the input. The original input position of every stored row
//! is kept so results can be mapped back.

mod csv_io;
mod design;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{
    export_csv, ingest_csv, ingest_prediction_csv, ColumnRoles, IngestOptions, IngestReport, PredictionFrame,
};
pub use design::{assemble_designs, DesignBundle};

/// One column of the per-cluster random-effects design `Z_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomEffect {
    Intercept,
    /// Random slope on fixed covariate `r` (0-based column of `X`).
    Slope(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    ClusterConstant,
    ClusterVarying,
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateKind::ClusterConstant => f.write_str("cluster-constant"),
            CovariateKind::ClusterVarying => f.write_str("cluster-varying"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    cluster_labels: Vec<String>,
    cluster_ranges: Vec<Range<usize>>,
    cluster_of_row: Vec<usize>,
    input_row: Vec<usize>,
    y: Vec<f64>,
    x: DMatrix<f64>,
    covariate_names: Vec<String>,
    covariate_kind: Vec<CovariateKind>,
    random: Vec<RandomEffect>,
}

impl LongitudinalDataset {
    /// Builds a dataset with default covariate names `x1..xp`.
    pub fn new<S: AsRef<str>>(
        cluster_ids: &[S],
        y: Vec<f64>,
        x: DMatrix<f64>,
        random: Vec<RandomEffect>,
    ) -> Result<Self> {
        let names = (1..=x.ncols()).map(|r| format!("x{r}")).collect();
        Self::with_names(cluster_ids, y, x, names, random)
    }

    pub fn with_names<S: AsRef<str>>(
        cluster_ids: &[S],
        y: Vec<f64>,
        x: DMatrix<f64>,
        covariate_names: Vec<String>,
        random: Vec<RandomEffect>,
    ) -> Result<Self> {
        let n_obs = y.len();
        if n_obs == 0 {
            return Err(Error::InvalidData("dataset has no observations".into()));
        }
        if cluster_ids.len() != n_obs {
            return Err(Error::InvalidData(format!(
                "{} cluster ids for {} responses",
                cluster_ids.len(),
                n_obs
            )));
        }
        if x.nrows() != n_obs {
            return Err(Error::InvalidData(format!(
                "covariate matrix has {} rows, expected {}",
                x.nrows(),
                n_obs
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::InvalidData(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if random.is_empty() {
            return Err(Error::InvalidData(
                "at least one random effect is required".into(),
            ));
        }
        for effect in &random {
            if let RandomEffect::Slope(r) = *effect {
                if r >= x.ncols() {
                    return Err(Error::InvalidData(format!(
                        "random slope references column {} but only {} covariates exist",
                        r,
                        x.ncols()
                    )));
                }
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {row}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate value".into()));
        }

        // Group rows by cluster in order of first appearance.
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (row, id) in cluster_ids.iter().enumerate() {
            let id = id.as_ref();
            let c = *index.entry(id).or_insert_with(|| {
                labels.push(id.to_string());
                members.push(Vec::new());
                labels.len() - 1
            });
            members[c].push(row);
        }

        let input_row: Vec<usize> = members.iter().flatten().copied().collect();
        let mut cluster_ranges = Vec::with_capacity(members.len());
        let mut cluster_of_row = Vec::with_capacity(n_obs);
        let mut start = 0;
        for (c, rows) in members.iter().enumerate() {
            cluster_ranges.push(start..start + rows.len());
            cluster_of_row.extend(std::iter::repeat_n(c, rows.len()));
            start += rows.len();
        }
        let y_sorted = input_row.iter().map(|&r| y[r]).collect();
        let x_sorted = x.select_rows(input_row.iter());

        let mut data = LongitudinalDataset {
            cluster_labels: labels,
            cluster_ranges,
            cluster_of_row,
            input_row,
            y: y_sorted,
            x: x_sorted,
            covariate_names,
            covariate_kind: Vec::new(),
            random,
        };
        data.covariate_kind = (0..data.n_fixed()).map(|r| data.infer_kind(r)).collect();
        Ok(data)
    }

    fn infer_kind(&self, r: usize) -> CovariateKind {
        let col = self.x.column(r);
        let constant = self.cluster_ranges.iter().all(|range| {
            let first = col[range.start];
            range.clone().all(|row| col[row] == first)
        });
        if constant {
            CovariateKind::ClusterConstant
        } else {
            CovariateKind::ClusterVarying
        }
    }

    /// Total number of observations `N`.
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Number of clusters `n`.
    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    /// Number of fixed covariates `p` (intercept excluded).
    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random effects per cluster `q`.
    pub fn n_random(&self) -> usize {
        self.random.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn random_effects(&self) -> &[RandomEffect] {
        &self.random
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kind
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn cluster_ranges(&self) -> &[Range<usize>] {
        &self.cluster_ranges
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.cluster_ranges.iter().map(|r| r.len()).collect()
    }

    /// Cluster index of every stored row.
    pub fn cluster_of_row(&self) -> &[usize] {
        &self.cluster_of_row
    }

    /// Input position of every stored row.
    pub fn input_rows(&self) -> &[usize] {
        &self.input_row
    }

    pub fn cluster_index(&self, label: &str) -> Option<usize> {
        self.cluster_labels.iter().position(|l| l == label)
    }

    /// One value per cluster of covariate `r`: the first row of each cluster.
    pub fn cluster_representatives(&self, r: usize) -> Vec<f64> {
        let col = self.x.column(r);
        self.cluster_ranges.iter().map(|range| col[range.start]).collect()
    }

    /// Restricts the dataset to the given clusters (in the given order).
    ///
    /// Covariate kinds are inherited from `self` rather than re-inferred, so a
    /// training subset keeps the correction structure of the full data.
    pub fn subset(&self, clusters: &[usize]) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidData("subset selects no clusters".into()));
        }
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for &c in clusters {
            let range = self.cluster_ranges.get(c).ok_or_else(|| {
                Error::InvalidData(format!("cluster index {c} out of range"))
            })?;
            for row in range.clone() {
                rows.push(row);
                ids.push(self.cluster_labels[c].as_str());
            }
        }
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let x = self.x.select_rows(rows.iter());
        let mut sub = Self::with_names(
            &ids,
            y,
            x,
            self.covariate_names.clone(),
            self.random.clone(),
        )?;
        sub.input_row = sub.input_row.iter().map(|&r| self.input_row[rows[r]]).collect();
        sub.covariate_kind = self.covariate_kind.clone();
        Ok(sub)
    }

    /// Divides every covariate column by the matching factor.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.n_fixed() {
            return Err(Error::InvalidData(format!(
                "{} scale factors for {} covariates",
                factors.len(),
                self.n_fixed()
            )));
        }
        if factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidData("scale factors must be positive".into()));
        }
        let mut out = self.clone();
        for (r, f) in factors.iter().enumerate() {
            out.x.column_mut(r).iter_mut().for_each(|v| *v /= f);
        }
        Ok(out)
    }

    /// Population standard deviation of every covariate column; constant
    /// columns report 1 so they pass through scaling unchanged.
    pub fn column_std(&self) -> Vec<f64> {
        let n = self.n_obs() as f64;
        self.x
            .column_iter()
            .map(|col| {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Human-readable descriptor, e.g. `intercept` or `slope:age`.
    pub fn random_effect_label(&self, effect: RandomEffect) -> String {
        match effect {
            RandomEffect::Intercept => "intercept".to_string(),
            RandomEffect::Slope(r) => format!("slope:{}", self.covariate_names[r]),
        }
    }
}
