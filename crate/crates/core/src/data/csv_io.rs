use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LongitudinalDataset, RandomEffect};
use crate::error::{Error, Result};

/// Which CSV columns play which role in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub cluster: String,
    pub response: String,
    pub fixed: Vec<String>,
    /// Random-effect descriptors: `intercept` or `slope:<fixed column>`.
    pub random: Vec<String>,
}

impl ColumnRoles {
    /// Resolves the random descriptors against the fixed column list.
    pub fn resolve_random(&self) -> Result<Vec<RandomEffect>> {
        self.random
            .iter()
            .map(|spec| {
                let spec = spec.trim();
                if spec.eq_ignore_ascii_case("intercept") {
                    return Ok(RandomEffect::Intercept);
                }
                let name = spec.strip_prefix("slope:").ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "random effect `{spec}` must be `intercept` or `slope:<column>`"
                    ))
                })?;
                self.fixed
                    .iter()
                    .position(|f| f == name)
                    .map(RandomEffect::Slope)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "random slope column `{name}` is not among the fixed columns"
                        ))
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Drop incomplete rows and report them instead of failing.
    pub drop_incomplete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    /// 1-based data-row numbers (header excluded) that were dropped.
    pub rejected_rows: Vec<usize>,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Reads a header-bearing CSV into a dataset.
///
/// Rows are numbered from 1, counting data rows only.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    roles: &ColumnRoles,
    options: IngestOptions,
) -> Result<(LongitudinalDataset, IngestReport)> {
    if roles.fixed.is_empty() {
        return Err(Error::InvalidConfig("at least one fixed covariate column is required".into()));
    }
    let random = roles.resolve_random()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let cluster_col = find(&roles.cluster)?;
    let response_col = find(&roles.response)?;
    let fixed_cols = roles.fixed.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut values = Vec::new();
    let mut report = IngestReport::default();
    let parse = |row: usize, column: &str, field: &str| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
            row,
            column: column.to_string(),
            value: field.to_string(),
        })
    };

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        report.rows_read += 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        let incomplete = is_missing(field(cluster_col))
            || is_missing(field(response_col))
            || fixed_cols.iter().any(|&c| is_missing(field(c)));
        if incomplete {
            report.rejected_rows.push(row);
            continue;
        }
        ids.push(field(cluster_col).to_string());
        y.push(parse(row, &roles.response, field(response_col))?);
        for (&c, name) in fixed_cols.iter().zip(&roles.fixed) {
            values.push(parse(row, name, field(c))?);
        }
    }

    if !report.rejected_rows.is_empty() && !options.drop_incomplete {
        return Err(Error::IncompleteRows { rows: report.rejected_rows });
    }
    if y.is_empty() {
        return Err(Error::AllRowsRejected(report.rows_read));
    }
    let n_obs = y.len();
    let x = DMatrix::from_row_slice(n_obs, roles.fixed.len(), &values);
    let data = LongitudinalDataset::with_names(&ids, y, x, roles.fixed.clone(), random)?;
    Ok((data, report))
}

/// Rows to predict for: cluster labels, covariates and, when the column is
/// present, the response.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub clusters: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Option<Vec<f64>>,
}

/// Reads rows for prediction. The response column is optional; every other
/// listed column must be present and complete.
pub fn ingest_prediction_csv(
    path: impl AsRef<Path>,
    cluster: &str,
    response: Option<&str>,
    fixed: &[String],
) -> Result<PredictionFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let cluster_col = find(cluster)?;
    let response_col = response.and_then(|r| headers.iter().position(|h| h == r));
    let fixed_cols = fixed.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;

    let mut clusters = Vec::new();
    let mut y = Vec::new();
    let mut values = Vec::new();
    let mut incomplete = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        if is_missing(field(cluster_col)) || fixed_cols.iter().any(|&c| is_missing(field(c))) {
            incomplete.push(row);
            continue;
        }
        clusters.push(field(cluster_col).to_string());
        for (&c, name) in fixed_cols.iter().zip(fixed) {
            values.push(field(c).parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: name.clone(),
                value: field(c).to_string(),
            })?);
        }
        if let Some(c) = response_col {
            // A missing response only drops the row from the error summary.
            let v = field(c);
            y.push(if is_missing(v) {
                f64::NAN
            } else {
                v.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row,
                    column: response.unwrap_or_default().to_string(),
                    value: v.to_string(),
                })?
            });
        }
    }
    if !incomplete.is_empty() {
        return Err(Error::IncompleteRows { rows: incomplete });
    }
    if clusters.is_empty() {
        return Err(Error::AllRowsRejected(0));
    }
    let x = DMatrix::from_row_slice(clusters.len(), fixed.len(), &values);
    Ok(PredictionFrame {
        clusters,
        x,
        y: response_col.map(|_| y),
    })
}

/// Writes the dataset back out in its original row order with columns
/// `cluster`, `y`, then one column per covariate.
pub fn export_csv(data: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["cluster".to_string(), "y".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    writer.write_record(&header)?;

    let mut order: Vec<usize> = (0..data.n_obs()).collect();
    order.sort_by_key(|&r| data.input_rows()[r]);
    for r in order {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(data.cluster_labels()[data.cluster_of_row()[r]].clone());
        rec.push(data.y()[r].to_string());
        rec.extend(data.x().row(r).iter().map(|v| v.to_string()));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}
