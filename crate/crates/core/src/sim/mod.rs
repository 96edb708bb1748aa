//! Simulation designs with random intercepts or random slopes, error
//! metrics against the generating truth, and a grid runner.

mod bench;
mod metrics;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, RandomEffect};
use crate::error::{Error, Result};

pub use bench::{
    bench_grid, fit_both, write_aggregate_json, write_report_csv, Aggregate, BothFits, CellFailure, GridCell,
    GridSpec, Method, ReplicationRow, SimulationReport,
};
pub use metrics::{evaluate, Metrics};
pub(crate) use bench::fmt_f64;

/// Coefficients `(beta_1, ..., beta_4)` of the informative covariates.
pub const INFORMATIVE: [f64; 4] = [2.0, 4.0, 3.0, 5.0];
pub const TRUE_INTERCEPT: f64 = 1.0;
/// Correlation between the three random effects of the slopes design.
pub const SLOPE_CORRELATION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    RandomIntercepts,
    /// Random intercept plus random slopes on `x3` and `x4`.
    RandomSlopes,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::RandomIntercepts => "random_intercepts",
            Design::RandomSlopes => "random_slopes",
        }
    }

    pub fn q(&self) -> usize {
        match self {
            Design::RandomIntercepts => 1,
            Design::RandomSlopes => 3,
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_intercepts" | "intercepts" => Ok(Design::RandomIntercepts),
            "random_slopes" | "slopes" => Ok(Design::RandomSlopes),
            other => Err(Error::InvalidConfig(format!(
                "unknown design '{other}' (expected random_intercepts or random_slopes)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub design: Design,
    /// Number of clusters.
    pub n: usize,
    /// Observations per cluster.
    pub n_i: usize,
    /// Number of candidate covariates; the first four are informative.
    pub p: usize,
    pub tau: f64,
    pub sigma: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            design: Design::RandomIntercepts,
            n: 50,
            n_i: 10,
            p: 10,
            tau: 0.4,
            sigma: 0.4,
            replications: 20,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n_i < 1 {
            return Err(Error::InvalidConfig(format!(
                "need n >= 2 clusters and n_i >= 1 observations, got n={} n_i={}",
                self.n, self.n_i
            )));
        }
        if self.p < 4 {
            return Err(Error::InvalidConfig(format!(
                "p must be at least 4 (four informative covariates), got {}",
                self.p
            )));
        }
        // tau = 0 is allowed: it degenerates to no random structure.
        if !(self.tau >= 0.0 && self.tau.is_finite()) || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need tau >= 0 and sigma > 0, got tau={} sigma={}",
                self.tau, self.sigma
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        Ok(())
    }

    /// True random-effects covariance.
    pub fn true_cov(&self) -> DMatrix<f64> {
        let t2 = self.tau * self.tau;
        match self.design {
            Design::RandomIntercepts => DMatrix::from_element(1, 1, t2),
            Design::RandomSlopes => {
                DMatrix::from_fn(3, 3, |i, j| if i == j { t2 } else { SLOPE_CORRELATION * t2 })
            }
        }
    }

    pub fn true_beta(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.p];
        beta[..4].copy_from_slice(&INFORMATIVE);
        beta
    }
}

/// Generating values of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Cluster-major like `ModelState::gamma`.
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub cov: DMatrix<f64>,
    pub design: Design,
}

impl Truth {
    pub fn informative(&self) -> Vec<bool> {
        self.beta.iter().map(|b| *b != 0.0).collect()
    }
}

/// Random stream of replication `rep`: one ChaCha key per seed, one stream
/// per replication, so replications can run in any order.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one dataset. `x1`, `x2` are cluster-constant, the rest vary
/// within clusters; all are standard normal.
pub fn generate(config: &SimulationConfig, rep: usize) -> Result<(LongitudinalDataset, Truth)> {
    config.validate()?;
    let mut rng = replication_rng(config.seed, rep);
    let (n, ni, p) = (config.n, config.n_i, config.p);
    let q = config.design.q();
    let cov = config.true_cov();
    // Lower Cholesky factor; tau = 0 gives a zero factor.
    let chol = if config.tau > 0.0 {
        cov.clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("true covariance is not positive definite".into()))?
            .l()
    } else {
        DMatrix::zeros(q, q)
    };
    let beta = config.true_beta();
    let n_obs = n * ni;
    let mut ids = Vec::with_capacity(n_obs);
    let mut x = DMatrix::zeros(n_obs, p);
    let mut y = Vec::with_capacity(n_obs);
    let mut gamma = vec![0.0; n * q];
    for i in 0..n {
        let x1 = normal(&mut rng);
        let x2 = normal(&mut rng);
        let e: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
        for s in 0..q {
            gamma[i * q + s] = (0..=s).map(|t| chol[(s, t)] * e[t]).sum();
        }
        for j in 0..ni {
            let row = i * ni + j;
            ids.push(format!("{}", i + 1));
            x[(row, 0)] = x1;
            x[(row, 1)] = x2;
            for r in 2..p {
                x[(row, r)] = normal(&mut rng);
            }
            let mut eta = TRUE_INTERCEPT;
            for r in 0..4 {
                eta += beta[r] * x[(row, r)];
            }
            eta += gamma[i * q];
            if q == 3 {
                eta += gamma[i * q + 1] * x[(row, 2)] + gamma[i * q + 2] * x[(row, 3)];
            }
            y.push(eta + config.sigma * normal(&mut rng));
        }
    }
    let random = match config.design {
        Design::RandomIntercepts => vec![RandomEffect::Intercept],
        Design::RandomSlopes => vec![RandomEffect::Intercept, RandomEffect::Slope(2), RandomEffect::Slope(3)],
    };
    let names: Vec<String> = (1..=p).map(|r| format!("x{r}")).collect();
    let data = LongitudinalDataset::with_names(&ids, y, x, names, random)?;
    let truth = Truth {
        beta0: TRUE_INTERCEPT,
        beta,
        gamma,
        sigma2: config.sigma * config.sigma,
        cov,
        design: config.design,
    };
    Ok((data, truth))
}
