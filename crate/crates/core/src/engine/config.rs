use serde::{Deserialize, Serialize};

use crate::baselearners::CorrectionOptions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StoppingRule {
    /// Cluster-wise k-fold cross-validation of the fixed-effects predictor.
    Cv { folds: usize },
    /// Corrected AIC with hat-matrix degrees of freedom.
    Aic,
    /// Run all `m_stop` iterations.
    None,
}

impl StoppingRule {
    pub fn name(&self) -> &'static str {
        match self {
            StoppingRule::Cv { .. } => "cv",
            StoppingRule::Aic => "aic",
            StoppingRule::None => "none",
        }
    }
}

/// How `sigma2` is estimated from the residual vector `r = y - eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    /// `(1/N) sum r^2`.
    #[default]
    MeanSquare,
    /// `(1/(N-1)) sum (r - mean r)^2`.
    Centered,
}

impl VarianceEstimator {
    pub fn estimate(&self, r: &[f64]) -> f64 {
        let n = r.len() as f64;
        match self {
            VarianceEstimator::MeanSquare => r.iter().map(|v| v * v).sum::<f64>() / n,
            VarianceEstimator::Centered => {
                if r.len() < 2 {
                    return 0.0;
                }
                let mean = r.iter().sum::<f64>() / n;
                r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Learning rate in `(0, 1]`.
    pub nu: f64,
    pub m_stop: usize,
    pub stopping: StoppingRule,
    /// Seeds the cross-validation fold assignment.
    pub seed: u64,
    pub variance: VarianceEstimator,
    pub correction: CorrectionOptions,
    /// Relative change of `(sigma2, Q)` that ends the initial fit.
    pub init_tol: f64,
    pub init_max_rounds: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            nu: 0.1,
            m_stop: 1000,
            stopping: StoppingRule::Cv { folds: 10 },
            seed: 0,
            variance: VarianceEstimator::MeanSquare,
            correction: CorrectionOptions::default(),
            init_tol: 1e-6,
            init_max_rounds: 200,
        }
    }
}

impl BoostConfig {
    pub fn with_stopping(mut self, stopping: StoppingRule) -> Self {
        self.stopping = stopping;
        self
    }

    pub fn with_m_stop(mut self, m_stop: usize) -> Self {
        self.m_stop = m_stop;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the configuration on its own, without data.
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidConfig(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        if self.m_stop == 0 {
            return Err(Error::InvalidConfig("m_stop must be at least 1".into()));
        }
        if let StoppingRule::Cv { folds } = self.stopping {
            if folds < 2 {
                return Err(Error::InvalidConfig(format!("cv needs at least 2 folds, got {folds}")));
            }
        }
        if !(self.init_tol > 0.0) || self.init_max_rounds == 0 {
            return Err(Error::InvalidConfig("initial-fit tolerance and round limit must be positive".into()));
        }
        Ok(())
    }

    /// Checks the configuration against a dataset with `n_clusters` clusters.
    pub fn validate_for(&self, n_clusters: usize) -> Result<()> {
        self.validate()?;
        if let StoppingRule::Cv { folds } = self.stopping {
            if folds > n_clusters {
                return Err(Error::InvalidConfig(format!(
                    "{folds} folds requested but the data has only {n_clusters} clusters"
                )));
            }
        }
        Ok(())
    }
}
