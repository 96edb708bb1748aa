//! Serializable fitted model (`fit.json`), per-iteration trace export, and
//! prediction from a stored model.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, LongitudinalDataset, RandomEffect};
use crate::engine::{BoostConfig, FitResult};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEffects {
    pub cluster: String,
    pub effects: Vec<f64>,
}

/// A fitted model on the original covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format: u32,
    pub version: String,
    pub roles: Option<ColumnRoles>,
    pub covariate_names: Vec<String>,
    /// `intercept` or `slope:<covariate>`, in `Z` column order.
    pub random_effects: Vec<String>,
    /// Column divisors used during fitting, if covariates were standardized.
    pub scale: Option<Vec<f64>>,
    pub config: BoostConfig,
    pub stopping: String,
    pub m_star: usize,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub selected: Vec<String>,
    pub sigma2: f64,
    /// Random-effects covariance, row-major.
    pub cov: Vec<Vec<f64>>,
    pub clusters: Vec<ClusterEffects>,
    pub cv_risk: Option<Vec<f64>>,
    /// `None` entries where the criterion is undefined.
    pub aic: Option<Vec<Option<f64>>>,
    pub df: Option<Vec<f64>>,
    pub initial_converged: bool,
    pub warnings: Vec<String>,
}

/// Multipliers taking fitted coefficients back to the original scale.
fn back_factors(data: &LongitudinalDataset, scale: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let p = data.n_fixed();
    let beta_f: Vec<f64> = match scale {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; p],
    };
    let effect_f = data
        .random_effects()
        .iter()
        .map(|e| match e {
            RandomEffect::Intercept => 1.0,
            RandomEffect::Slope(r) => beta_f[*r],
        })
        .collect();
    (beta_f, effect_f)
}

impl FitArtifact {
    /// `data` is the dataset the model was fitted on; with `scale`, its
    /// covariates were divided by those factors beforehand.
    pub fn from_fit(
        data: &LongitudinalDataset,
        fit: &FitResult,
        config: &BoostConfig,
        scale: Option<&[f64]>,
        roles: Option<ColumnRoles>,
    ) -> Self {
        let (beta_f, effect_f) = back_factors(data, scale);
        let state = &fit.state;
        let q = data.n_random();
        let beta: Vec<f64> = state.beta.iter().zip(&beta_f).map(|(b, f)| b * f).collect();
        let cov = (0..q)
            .map(|i| (0..q).map(|j| state.cov[(i, j)] * effect_f[i] * effect_f[j]).collect())
            .collect();
        let clusters = data
            .cluster_labels()
            .iter()
            .enumerate()
            .map(|(i, label)| ClusterEffects {
                cluster: label.clone(),
                effects: state.cluster_effects(q, i).iter().zip(&effect_f).map(|(g, f)| g * f).collect(),
            })
            .collect();
        let names = data.covariate_names();
        FitArtifact {
            format: FORMAT_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            roles,
            covariate_names: names.to_vec(),
            random_effects: data.random_effects().iter().map(|e| data.random_effect_label(*e)).collect(),
            scale: scale.map(|s| s.to_vec()),
            config: config.clone(),
            stopping: fit.stopping.name().to_string(),
            m_star: fit.m_star,
            beta0: state.beta0,
            selected: state.selected().iter().map(|&r| names[r].clone()).collect(),
            beta,
            sigma2: state.sigma2,
            cov,
            clusters,
            cv_risk: fit.cv.as_ref().map(|c| c.risk.clone()),
            aic: fit
                .trace
                .aic_path
                .as_ref()
                .map(|a| a.iter().map(|v| v.is_finite().then_some(*v)).collect()),
            df: fit.trace.df_path.clone(),
            initial_converged: fit.initial_converged,
            warnings: fit.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidData(format!("cannot serialize model: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: FitArtifact =
            serde_json::from_str(s).map_err(|e| Error::InvalidData(format!("cannot read model file: {e}")))?;
        if a.format != FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model format {}", a.format)));
        }
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Covariate index carried by each random effect (`None` = intercept).
    fn effect_columns(&self) -> Result<Vec<Option<usize>>> {
        self.random_effects
            .iter()
            .map(|label| {
                if label == "intercept" {
                    return Ok(None);
                }
                let name = label
                    .strip_prefix("slope:")
                    .ok_or_else(|| Error::InvalidData(format!("bad random effect label '{label}'")))?;
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .map(Some)
                    .ok_or_else(|| Error::InvalidData(format!("random slope on unknown covariate '{name}'")))
            })
            .collect()
    }

    /// `beta0 + x' beta`, plus `z' gamma_i` for clusters seen in training.
    /// Unseen clusters get their random effects at the prior mean, zero.
    pub fn predict(&self, clusters: &[String], x: &DMatrix<f64>) -> Result<Prediction> {
        if x.ncols() != self.beta.len() {
            return Err(Error::InvalidData(format!(
                "{} covariate columns supplied, model has {}",
                x.ncols(),
                self.beta.len()
            )));
        }
        if clusters.len() != x.nrows() {
            return Err(Error::InvalidData("cluster labels and covariate rows differ in length".into()));
        }
        let cols = self.effect_columns()?;
        let lookup: std::collections::HashMap<&str, &[f64]> = self
            .clusters
            .iter()
            .map(|c| (c.cluster.as_str(), c.effects.as_slice()))
            .collect();
        let mut eta = Vec::with_capacity(x.nrows());
        let mut used_random = Vec::with_capacity(x.nrows());
        for (row, label) in clusters.iter().enumerate() {
            let mut v = self.beta0;
            for (r, b) in self.beta.iter().enumerate() {
                v += b * x[(row, r)];
            }
            let effects = lookup.get(label.as_str());
            if let Some(g) = effects {
                for (s, col) in cols.iter().enumerate() {
                    v += g[s] * col.map_or(1.0, |r| x[(row, r)]);
                }
            }
            eta.push(v);
            used_random.push(effects.is_some());
        }
        Ok(Prediction { eta, used_random })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eta: Vec<f64>,
    /// Whether the row's cluster had fitted random effects.
    pub used_random: Vec<bool>,
}

/// One row per iteration (plus `m = 0` for the initial fit), on the same
/// scale as [`FitArtifact`] so the row at `m*` matches it exactly.
pub fn write_trace_csv(data: &LongitudinalDataset, fit: &FitResult, scale: Option<&[f64]>, path: &Path) -> Result<()> {
    let t = &fit.trace;
    let q = data.n_random();
    let (beta_f, effect_f) = back_factors(data, scale);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["m".into(), "beta0".into()];
    header.extend(data.covariate_names().iter().map(|n| format!("beta_{n}")));
    header.push("sigma2".into());
    for i in 0..q {
        for j in i..q {
            header.push(format!("q_{}_{}", i + 1, j + 1));
        }
    }
    for h in ["loss", "selected", "df", "aic", "cv_risk"] {
        header.push(h.into());
    }
    w.write_record(&header)?;

    let f = crate::sim::fmt_f64;
    let opt = |v: Option<f64>| v.filter(|x| x.is_finite()).map(f).unwrap_or_default();
    let names = data.covariate_names();
    for m in 0..=t.iterations() {
        let state = t.state_at(m).expect("m within trace");
        let mut rec = vec![m.to_string(), f(state.beta0)];
        rec.extend(state.beta.iter().zip(&beta_f).map(|(b, s)| f(b * s)));
        rec.push(f(state.sigma2));
        for i in 0..q {
            for j in i..q {
                rec.push(f(state.cov[(i, j)] * effect_f[i] * effect_f[j]));
            }
        }
        if m == 0 {
            rec.push(f(t.initial_loss));
            rec.push(String::new());
            rec.push(opt(t.initial_df));
            rec.push(String::new());
            rec.push(String::new());
        } else {
            rec.push(f(t.loss_path[m - 1]));
            rec.push(t.selected_path[m - 1].map(|r| names[r].clone()).unwrap_or_default());
            rec.push(opt(t.df_path.as_ref().map(|d| d[m - 1])));
            rec.push(opt(t.aic_path.as_ref().map(|a| a[m - 1])));
            rec.push(opt(fit.cv.as_ref().map(|c| c.risk[m - 1])));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
