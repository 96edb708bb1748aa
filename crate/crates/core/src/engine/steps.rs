use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{BoostConfig, ModelState, VarianceEstimator};
use crate::baselearners::{spd_inverse, FixedBaselearner, FixedFit, RandomBaselearner, ResidualStats};
use crate::data::DesignBundle;
use crate::error::{Error, Result};

pub const SIGMA2_FLOOR: f64 = 1e-10;
pub const COV_DIAG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct InitialFit {
    pub state: ModelState,
    pub converged: bool,
    pub rounds: usize,
}

/// Fits `y = beta0 + Z gamma + eps` by alternating the intercept, the
/// corrected ridge solve for `gamma` and the variance updates.
///
/// On return `random` is factorized at the final `(sigma2, Q)`.
pub fn initial_fit(
    bundle: &DesignBundle,
    y: &[f64],
    random: &mut RandomBaselearner,
    config: &BoostConfig,
) -> Result<InitialFit> {
    let n_obs = y.len() as f64;
    let q = bundle.q();
    let mean = y.iter().sum::<f64>() / n_obs;
    let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_obs;
    let start = (spread / 2.0).max(SIGMA2_FLOOR);

    let mut state = ModelState {
        beta0: mean,
        beta: vec![0.0; bundle.x().ncols()],
        gamma: vec![0.0; bundle.n_clusters() * q],
        sigma2: start,
        cov: DMatrix::identity(q, q) * start.max(COV_DIAG_FLOOR),
        m: 0,
    };

    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.init_max_rounds {
        rounds += 1;
        random.refresh(state.sigma2, &state.cov)?;

        let z_gamma = bundle.z_mul(&state.gamma);
        state.beta0 = y.iter().zip(&z_gamma).map(|(y, zg)| y - zg).sum::<f64>() / n_obs;
        let centered: Vec<f64> = y.iter().map(|v| v - state.beta0).collect();
        state.gamma = random.increment(bundle, &centered)?;

        let z_gamma = bundle.z_mul(&state.gamma);
        let resid: Vec<f64> = centered.iter().zip(&z_gamma).map(|(c, zg)| c - zg).collect();
        let (old_sigma2, old_cov) = (state.sigma2, state.cov.clone());
        update_variances(&mut state, &resid, bundle, config.variance)?;

        let d_sigma = (state.sigma2 - old_sigma2).abs() / old_sigma2;
        let d_cov = (&state.cov - &old_cov).norm() / old_cov.norm();
        if d_sigma.max(d_cov) < config.init_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("initial mixed-model fit did not converge after {rounds} rounds");
    }
    random.refresh(state.sigma2, &state.cov)?;
    Ok(InitialFit {
        state,
        converged,
        rounds,
    })
}

/// Residual `u = y - eta` (negative gradient of the quadratic loss).
pub fn negative_gradient(state: &ModelState, bundle: &DesignBundle, y: &[f64]) -> Vec<f64> {
    let eta = state.predictor(bundle);
    y.iter().zip(&eta).map(|(y, e)| y - e).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedStep {
    pub index: usize,
    pub fit: FixedFit,
}

/// Fits every fixed baselearner to `u` and moves the best one by `nu`.
///
/// Ties in the residual sum of squares go to the smallest covariate index.
/// Returns `None` (leaving the state untouched) when every baselearner is
/// degenerate.
pub fn step1_update_fixed(
    state: &mut ModelState,
    u: &[f64],
    fixed: &[FixedBaselearner],
    nu: f64,
) -> Option<FixedStep> {
    let stats = ResidualStats::new(u);
    let mut best: Option<FixedStep> = None;
    for bl in fixed {
        if let Some(fit) = bl.fit_with(u, &stats) {
            if best.is_none_or(|b| fit.sse < b.fit.sse) {
                best = Some(FixedStep { index: bl.index(), fit });
            }
        }
    }
    let step = best?;
    state.beta0 += nu * step.fit.intercept;
    state.beta[step.index] += nu * step.fit.slope;
    Some(step)
}

/// Adds `nu` times the corrected random-effects fit of `u` to `gamma` and
/// returns the unscaled increment.
pub fn step2_update_random(
    state: &mut ModelState,
    u: &[f64],
    random: &RandomBaselearner,
    bundle: &DesignBundle,
    nu: f64,
) -> Result<Vec<f64>> {
    let inc = random.increment(bundle, u)?;
    for (g, d) in state.gamma.iter_mut().zip(&inc) {
        *g += nu * d;
    }
    Ok(inc)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VarianceUpdate {
    /// `sigma2` fell below the floor and was clamped.
    pub sigma2_clamped: bool,
}

/// Updates `sigma2` from the current residuals and then `Q` by the EM-type
/// posterior-curvature average.
pub fn step3_update_variances(
    state: &mut ModelState,
    y: &[f64],
    bundle: &DesignBundle,
    estimator: VarianceEstimator,
) -> Result<VarianceUpdate> {
    let r = negative_gradient(state, bundle, y);
    update_variances(state, &r, bundle, estimator)
}

pub(crate) fn update_variances(
    state: &mut ModelState,
    resid: &[f64],
    bundle: &DesignBundle,
    estimator: VarianceEstimator,
) -> Result<VarianceUpdate> {
    if resid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residuals".into()));
    }
    let raw = estimator.estimate(resid);
    let sigma2_clamped = !(raw >= SIGMA2_FLOOR);
    state.sigma2 = if sigma2_clamped { SIGMA2_FLOOR } else { raw };
    state.cov = em_covariance_update(bundle.z_blocks(), &state.gamma, state.sigma2, &state.cov)?;
    Ok(VarianceUpdate { sigma2_clamped })
}

/// `Q_new = (1/n) sum_i (F_i^-1 + gamma_i gamma_i')` with
/// `F_i = Z_i'Z_i / sigma2 + Q_prev^-1`, symmetrized and with the diagonal
/// floored.
pub fn em_covariance_update(
    z_blocks: &[DMatrix<f64>],
    gamma: &[f64],
    sigma2: f64,
    cov_prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let q = cov_prev.nrows();
    let n = z_blocks.len();
    let prior_precision = spd_inverse(cov_prev, "previous random-effects covariance")?;
    let mut acc = DMatrix::zeros(q, q);
    for (i, z) in z_blocks.iter().enumerate() {
        let curvature = z.transpose() * z / sigma2 + &prior_precision;
        acc += spd_inverse(&curvature, "random-effects curvature")?;
        let g = DVector::from_column_slice(&gamma[i * q..(i + 1) * q]);
        acc += &g * g.transpose();
    }
    acc /= n as f64;
    let mut cov = (&acc + acc.transpose()) * 0.5;
    for s in 0..q {
        if !(cov[(s, s)] >= COV_DIAG_FLOOR) {
            cov[(s, s)] = COV_DIAG_FLOOR;
        }
    }
    Ok(cov)
}

/// Gaussian log-density of the residuals minus `1/2 sum gamma_i' Q^-1 gamma_i`.
pub fn penalized_loglik(state: &ModelState, bundle: &DesignBundle, y: &[f64]) -> Result<f64> {
    if !(state.sigma2 > 0.0) {
        return Err(Error::IllConditioned("residual variance must be positive".into()));
    }
    let precision = state
        .cov
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::IllConditioned("random-effects covariance is singular".into()))?;
    let r = negative_gradient(state, bundle, y);
    let n_obs = r.len() as f64;
    let rss: f64 = r.iter().map(|v| v * v).sum();
    let loglik = -0.5 * n_obs * (2.0 * PI * state.sigma2).ln() - rss / (2.0 * state.sigma2);
    let q = state.cov.nrows();
    let penalty: f64 = state
        .gamma
        .chunks(q)
        .map(|g| {
            let g = DVector::from_column_slice(g);
            (g.transpose() * &precision * &g)[(0, 0)]
        })
        .sum();
    Ok(loglik - 0.5 * penalty)
}
