//! Choosing the stopping iteration `m*`: cluster-wise cross-validation of the
//! fixed-effects predictor, or a corrected AIC with boosting degrees of
//! freedom taken from the trace of the accumulated hat matrix.

mod hat;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::LongitudinalDataset;
use crate::engine::{fit_path, BoostConfig};
use crate::error::{Error, Result};

pub use hat::{HatOperator, HatState, RandomHat};

/// Assignment of whole clusters to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvPlan {
    k: usize,
    fold_of_cluster: Vec<usize>,
}

impl CvPlan {
    /// Shuffles clusters with `seed` and deals them round-robin, so fold
    /// sizes differ by at most one cluster.
    pub fn new(n_clusters: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("cv needs at least 2 folds, got {k}")));
        }
        if k > n_clusters {
            return Err(Error::InvalidConfig(format!(
                "{k} folds requested but only {n_clusters} clusters are available"
            )));
        }
        let mut order: Vec<usize> = (0..n_clusters).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut fold_of_cluster = vec![0; n_clusters];
        for (pos, c) in order.into_iter().enumerate() {
            fold_of_cluster[c] = pos % k;
        }
        Ok(CvPlan { k, fold_of_cluster })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of_cluster(&self) -> &[usize] {
        &self.fold_of_cluster
    }

    /// Held-out clusters of every fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (c, &f) in self.fold_of_cluster.iter().enumerate() {
            folds[f].push(c);
        }
        folds
    }

    /// Number of held-out observations `N_l` per fold.
    pub fn fold_sizes(&self, data: &LongitudinalDataset) -> Vec<usize> {
        let sizes = data.cluster_sizes();
        self.folds()
            .iter()
            .map(|f| f.iter().map(|&c| sizes[c]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    /// `CV_k^[m]` for `m = 1..=m_stop` (index `m - 1`).
    pub risk: Vec<f64>,
    /// Per-fold mean squared prediction error, same indexing.
    pub fold_risk: Vec<Vec<f64>>,
    pub m_star: usize,
}

/// First index of the minimum, as a 1-based iteration. NaNs never win.
fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Cross-validated risk of the fixed-effects predictor along the path.
///
/// Each fold refits the whole pipeline (initial fit, variance components,
/// boosting) on the remaining clusters. Held-out rows are predicted with
/// `beta0 + x' beta`, random effects at their prior mean of zero.
pub fn cv_risk(data: &LongitudinalDataset, config: &BoostConfig, plan: &CvPlan) -> Result<CvCurve> {
    if plan.fold_of_cluster().len() != data.n_clusters() {
        return Err(Error::InvalidConfig("cv plan does not match the number of clusters".into()));
    }
    let inner = BoostConfig {
        stopping: crate::engine::StoppingRule::None,
        ..config.clone()
    };
    let folds = plan.folds();
    let fold_risk = folds
        .par_iter()
        .map(|held_out| {
            let training: Vec<usize> = (0..data.n_clusters())
                .filter(|c| held_out.binary_search(c).is_err())
                .collect();
            if training.is_empty() {
                return Err(Error::InvalidConfig("a cv fold leaves no training clusters".into()));
            }
            if held_out.is_empty() {
                return Err(Error::InvalidConfig("a cv fold holds out no clusters".into()));
            }
            let train = data.subset(&training)?;
            let test = data.subset(held_out)?;
            let path = fit_path(&train, &inner, false)?;
            Ok(held_out_risk(&test, &path.trace))
        })
        .collect::<Result<Vec<_>>>()?;

    let m_stop = config.m_stop;
    let k = fold_risk.len() as f64;
    let risk: Vec<f64> = (0..m_stop)
        .map(|m| fold_risk.iter().map(|f| f[m]).sum::<f64>() / k)
        .collect();
    let m_star = argmin_first(&risk)
        .ok_or_else(|| Error::Numerical("cross-validation risk is undefined at every iteration".into()))?;
    Ok(CvCurve {
        risk,
        fold_risk,
        m_star,
    })
}

fn held_out_risk(test: &LongitudinalDataset, trace: &crate::engine::FitTrace) -> Vec<f64> {
    let x = test.x();
    let y = test.y();
    let n = y.len() as f64;
    let mut pred = vec![trace.initial_beta0; y.len()];
    let mut prev: Option<&Vec<f64>> = None;
    let mut out = Vec::with_capacity(trace.iterations());
    for (m, row) in trace.beta_path.iter().enumerate() {
        let d0 = row[0] - prev.map_or(trace.initial_beta0, |p| p[0]);
        let mut delta_r = None;
        if let Some(r) = trace.selected_path[m] {
            let d = row[r + 1] - prev.map_or(0.0, |p| p[r + 1]);
            delta_r = Some((r, d));
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += d0;
            if let Some((r, d)) = delta_r {
                *p += d * x[(i, r)];
            }
        }
        out.push(y.iter().zip(&pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n);
        prev = Some(row);
    }
    out
}

/// `log sigma2 + (1 + df/N) / (1 - (df + 2)/N)`; `None` where `df + 2 >= N`.
pub fn aic_value(sigma2: f64, df: f64, n_obs: usize) -> Option<f64> {
    let n = n_obs as f64;
    let denom = 1.0 - (df + 2.0) / n;
    if !(denom > 0.0) || !(sigma2 > 0.0) {
        return None;
    }
    Some(sigma2.ln() + (1.0 + df / n) / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AicSelection {
    /// `AIC^[m]` for `m = 1..=m_stop`; `NaN` where undefined.
    pub values: Vec<f64>,
    pub m_star: usize,
    /// Iterations left out of the argmin because `df + 2 >= N`.
    pub excluded: usize,
}

/// Evaluates the corrected AIC along the path and picks its first minimum.
pub fn aic_curve(df: &[f64], sigma2: &[f64], n_obs: usize) -> Result<AicSelection> {
    if df.len() != sigma2.len() {
        return Err(Error::InvalidData(format!(
            "{} df values but {} variance values",
            df.len(),
            sigma2.len()
        )));
    }
    let values: Vec<f64> = df
        .iter()
        .zip(sigma2)
        .map(|(&d, &s)| aic_value(s, d, n_obs).unwrap_or(f64::NAN))
        .collect();
    let excluded = values.iter().filter(|v| v.is_nan()).count();
    if excluded > 0 {
        log::warn!("{excluded} iterations have df + 2 >= N and are excluded from AIC selection");
    }
    let m_star = argmin_first(&values).ok_or_else(|| {
        Error::Numerical("AIC is undefined at every iteration (df + 2 >= N); use more data or cv stopping".into())
    })?;
    Ok(AicSelection {
        values,
        m_star,
        excluded,
    })
}
