//! The boosting loop: initialization from an intercept-plus-random-effects
//! fit, then per iteration (1) one component-wise fixed-effect update,
//! (2) one corrected random-effects update, (3) a variance-component update.

mod config;
mod steps;

#[cfg(test)]
mod tests;

use nalgebra::DMatrix;

use crate::baselearners::{build_correction, fixed_baselearners, RandomBaselearner};
use crate::data::{assemble_designs, DesignBundle, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::stopping::{aic_curve, cv_risk, AicSelection, CvCurve, CvPlan, HatState, RandomHat};

pub use config::{BoostConfig, StoppingRule, VarianceEstimator};
pub use steps::{
    em_covariance_update, initial_fit, negative_gradient, penalized_loglik, step1_update_fixed,
    step2_update_random, step3_update_variances, FixedStep, InitialFit, VarianceUpdate, COV_DIAG_FLOOR,
    SIGMA2_FLOOR,
};

/// Coefficients and variance components at iteration `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Cluster-major: `gamma[i*q + s]` is effect `s` of cluster `i`.
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub cov: DMatrix<f64>,
    pub m: usize,
}

impl ModelState {
    pub fn zeros(p: usize, n_clusters: usize, q: usize) -> Self {
        ModelState {
            beta0: 0.0,
            beta: vec![0.0; p],
            gamma: vec![0.0; n_clusters * q],
            sigma2: 1.0,
            cov: DMatrix::identity(q, q),
            m: 0,
        }
    }

    /// `eta = beta0 + X beta + Z gamma`.
    pub fn predictor(&self, bundle: &DesignBundle) -> Vec<f64> {
        let mut eta = bundle.fixed_predictor(self.beta0, &self.beta);
        bundle.z_mul_add(&self.gamma, 1.0, &mut eta);
        eta
    }

    pub fn cluster_effects(&self, q: usize, cluster: usize) -> &[f64] {
        &self.gamma[cluster * q..(cluster + 1) * q]
    }

    /// Covariates with a nonzero coefficient.
    pub fn selected(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Everything recorded along the boosting path. Per-iteration vectors are
/// indexed by `m - 1` for `m = 1..=m_stop`; the initial fit is kept apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub initial_beta0: f64,
    pub initial_gamma: Vec<f64>,
    pub initial_sigma2: f64,
    pub initial_cov: DMatrix<f64>,
    pub initial_loss: f64,
    /// Rows `[beta0, beta_1, ..., beta_p]`.
    pub beta_path: Vec<Vec<f64>>,
    pub gamma_path: Vec<Vec<f64>>,
    pub sigma2_path: Vec<f64>,
    pub cov_path: Vec<DMatrix<f64>>,
    /// Training loss `sum 1/2 (y - eta)^2` after step 1.
    pub step1_loss_path: Vec<f64>,
    /// Training loss after steps 1 and 2.
    pub loss_path: Vec<f64>,
    pub selected_path: Vec<Option<usize>>,
    /// `df^[0]`, present when the hat matrix was tracked.
    pub initial_df: Option<f64>,
    pub df_path: Option<Vec<f64>>,
    pub aic_path: Option<Vec<f64>>,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.loss_path.len()
    }

    /// Model state after `m` iterations (`m = 0` is the initial fit).
    pub fn state_at(&self, m: usize) -> Option<ModelState> {
        if m == 0 {
            let p = self.beta_path.first().map_or(0, |r| r.len() - 1);
            return Some(ModelState {
                beta0: self.initial_beta0,
                beta: vec![0.0; p],
                gamma: self.initial_gamma.clone(),
                sigma2: self.initial_sigma2,
                cov: self.initial_cov.clone(),
                m: 0,
            });
        }
        let row = self.beta_path.get(m - 1)?;
        Some(ModelState {
            beta0: row[0],
            beta: row[1..].to_vec(),
            gamma: self.gamma_path[m - 1].clone(),
            sigma2: self.sigma2_path[m - 1],
            cov: self.cov_path[m - 1].clone(),
            m,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitPath {
    pub trace: FitTrace,
    pub initial_converged: bool,
    pub initial_rounds: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub trace: FitTrace,
    /// State at the chosen stopping iteration.
    pub state: ModelState,
    pub m_star: usize,
    pub stopping: StoppingRule,
    pub cv: Option<CvCurve>,
    pub aic: Option<AicSelection>,
    pub initial_converged: bool,
    pub warnings: Vec<String>,
}

fn half_norm_sq(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

/// Runs `m_stop` iterations and records the full path. The hat-matrix
/// product (`N x N`) is only accumulated when `track_hat` is set.
pub fn fit_path(data: &LongitudinalDataset, config: &BoostConfig, track_hat: bool) -> Result<FitPath> {
    config.validate()?;
    let bundle = assemble_designs(data)?;
    let fixed = fixed_baselearners(&bundle);
    let mut warnings = Vec::new();
    let degenerate: Vec<&str> = fixed
        .iter()
        .filter(|bl| bl.is_degenerate())
        .map(|bl| data.covariate_names()[bl.index()].as_str())
        .collect();
    if !degenerate.is_empty() {
        let msg = format!("constant covariates excluded from selection: {}", degenerate.join(", "));
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut random = RandomBaselearner::new(&bundle, build_correction(data, config.correction));
    let y = data.y();
    let init = initial_fit(&bundle, y, &mut random, config)?;
    if !init.converged {
        warnings.push(format!("initial fit did not converge after {} rounds", init.rounds));
    }
    let mut state = init.state.clone();

    let mut eta_beta = bundle.fixed_predictor(state.beta0, &state.beta);
    let mut eta_gamma = bundle.z_mul(&state.gamma);
    let residual = |eb: &[f64], eg: &[f64]| -> Vec<f64> {
        y.iter().zip(eb).zip(eg).map(|((y, b), g)| y - b - g).collect()
    };

    let mut trace = FitTrace {
        initial_beta0: state.beta0,
        initial_gamma: state.gamma.clone(),
        initial_sigma2: state.sigma2,
        initial_cov: state.cov.clone(),
        initial_loss: half_norm_sq(&residual(&eta_beta, &eta_gamma)),
        ..Default::default()
    };
    let mut hat = if track_hat {
        let h = HatState::initial(&RandomHat::new(&random, &bundle), bundle.n_obs())?;
        trace.initial_df = Some(h.df());
        trace.df_path = Some(Vec::with_capacity(config.m_stop));
        trace.aic_path = Some(Vec::with_capacity(config.m_stop));
        Some(h)
    } else {
        None
    };

    let nu = config.nu;
    let mut skipped = 0usize;
    let mut clamped = 0usize;
    for m in 1..=config.m_stop {
        let step = (|| -> Result<()> {
            // Step 1.
            let mut u = residual(&eta_beta, &eta_gamma);
            let selected = step1_update_fixed(&mut state, &u, &fixed, nu);
            if let Some(s) = &selected {
                let col = bundle.x().column(s.index);
                for ((e, u), x) in eta_beta.iter_mut().zip(u.iter_mut()).zip(col.iter()) {
                    let h = nu * (s.fit.intercept + s.fit.slope * x);
                    *e += h;
                    *u -= h;
                }
            } else {
                skipped += 1;
            }
            let step1_loss = half_norm_sq(&u);

            // Step 2, with the residual refreshed after step 1.
            let inc = step2_update_random(&mut state, &u, &random, &bundle, nu)?;
            bundle.z_mul_add(&inc, nu, &mut eta_gamma);
            bundle.z_mul_add(&inc, -nu, &mut u);
            let loss = half_norm_sq(&u);

            if let Some(h) = hat.as_mut() {
                let s_beta = selected.map(|s| &fixed[s.index]);
                h.update(s_beta.map(|b| b as _), &RandomHat::new(&random, &bundle), nu)?;
            }

            // Step 3, then refresh the ridge factorizations for iteration m+1.
            let vu = steps::update_variances(&mut state, &u, &bundle, config.variance)?;
            if vu.sigma2_clamped {
                clamped += 1;
            }
            random.refresh(state.sigma2, &state.cov)?;
            state.m = m;

            let mut row = Vec::with_capacity(state.beta.len() + 1);
            row.push(state.beta0);
            row.extend_from_slice(&state.beta);
            trace.beta_path.push(row);
            trace.gamma_path.push(state.gamma.clone());
            trace.sigma2_path.push(state.sigma2);
            trace.cov_path.push(state.cov.clone());
            trace.step1_loss_path.push(step1_loss);
            trace.loss_path.push(loss);
            trace.selected_path.push(selected.map(|s| s.index));
            if let Some(h) = hat.as_ref() {
                let df = h.df();
                trace.df_path.as_mut().unwrap().push(df);
                let aic = crate::stopping::aic_value(state.sigma2, df, bundle.n_obs()).unwrap_or(f64::NAN);
                trace.aic_path.as_mut().unwrap().push(aic);
            }
            Ok(())
        })();
        if let Err(source) = step {
            return Err(Error::Aborted {
                iteration: m,
                source: Box::new(source),
                partial: Box::new(trace),
            });
        }
    }
    if skipped > 0 {
        let msg = format!("fixed-effect step skipped in {skipped} iterations (no usable covariate)");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if clamped > 0 {
        let msg = format!("residual variance clamped to {SIGMA2_FLOOR:e} in {clamped} iterations");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(FitPath {
        trace,
        initial_converged: init.converged,
        initial_rounds: init.rounds,
        warnings,
    })
}

/// Fits the model and selects the stopping iteration with the configured rule.
pub fn run(data: &LongitudinalDataset, config: &BoostConfig) -> Result<FitResult> {
    config.validate_for(data.n_clusters())?;
    let (path, m_star, cv, aic) = match config.stopping {
        StoppingRule::Cv { folds } => {
            let plan = CvPlan::new(data.n_clusters(), folds, config.seed)?;
            let curve = cv_risk(data, config, &plan)?;
            let path = fit_path(data, config, false)?;
            let m = curve.m_star;
            (path, m, Some(curve), None)
        }
        StoppingRule::Aic => {
            let path = fit_path(data, config, true)?;
            let sel = aic_curve(
                path.trace.df_path.as_deref().unwrap_or_default(),
                &path.trace.sigma2_path,
                data.n_obs(),
            )?;
            let m = sel.m_star;
            (path, m, None, Some(sel))
        }
        StoppingRule::None => {
            let path = fit_path(data, config, false)?;
            (path, config.m_stop, None, None)
        }
    };
    let state = path
        .trace
        .state_at(m_star)
        .ok_or_else(|| Error::Numerical(format!("stopping iteration {m_star} outside the trace")))?;
    let mut warnings = path.warnings;
    if let Some(sel) = &aic {
        if sel.excluded > 0 {
            warnings.push(format!(
                "{} iterations excluded from AIC selection (df + 2 >= N)",
                sel.excluded
            ));
        }
    }
    Ok(FitResult {
        trace: path.trace,
        state,
        m_star,
        stopping: config.stopping,
        cv,
        aic,
        initial_converged: path.initial_converged,
        warnings,
    })
}
