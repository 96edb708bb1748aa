use serde::{Deserialize, Serialize};

use super::{Design, Truth};
use crate::engine::ModelState;
use crate::error::{Error, Result};

/// Error metrics of one fitted model against its generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `||beta - beta_hat||^2` including the intercept.
    pub mse_beta: f64,
    pub mse_gamma: f64,
    /// `(sigma^2 - sigma_hat^2)^2`.
    pub mse_sigma: f64,
    /// `(tau^2 - tau_hat^2)^2`, intercepts design only.
    pub mse_tau: Option<f64>,
    /// `||Q - Q_hat||_F^2`, slopes design only.
    pub mse_q: Option<f64>,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub m_star: usize,
    /// Whether `Q_hat` is symmetric with a Cholesky factor.
    pub cov_psd: bool,
}

pub fn evaluate(truth: &Truth, fitted: &ModelState) -> Result<Metrics> {
    if fitted.beta.len() != truth.beta.len() || fitted.gamma.len() != truth.gamma.len() {
        return Err(Error::InvalidData(format!(
            "fitted model has {} coefficients and {} random effects, truth has {} and {}",
            fitted.beta.len(),
            fitted.gamma.len(),
            truth.beta.len(),
            truth.gamma.len()
        )));
    }
    if fitted.cov.shape() != truth.cov.shape() {
        return Err(Error::InvalidData("covariance dimensions differ".into()));
    }
    let sq = |a: f64, b: f64| (a - b) * (a - b);
    let mse_beta = sq(truth.beta0, fitted.beta0)
        + truth.beta.iter().zip(&fitted.beta).map(|(a, b)| sq(*a, *b)).sum::<f64>();
    let mse_gamma = truth.gamma.iter().zip(&fitted.gamma).map(|(a, b)| sq(*a, *b)).sum();
    let mse_sigma = sq(truth.sigma2, fitted.sigma2);
    let (mse_tau, mse_q) = match truth.design {
        Design::RandomIntercepts => (Some(sq(truth.cov[(0, 0)], fitted.cov[(0, 0)])), None),
        Design::RandomSlopes => (None, Some((&truth.cov - &fitted.cov).norm_squared())),
    };

    let informative = truth.informative();
    let (mut fp, mut noise, mut fneg, mut signal) = (0usize, 0usize, 0usize, 0usize);
    for (inf, b) in informative.iter().zip(&fitted.beta) {
        let selected = *b != 0.0;
        if *inf {
            signal += 1;
            fneg += usize::from(!selected);
        } else {
            noise += 1;
            fp += usize::from(selected);
        }
    }
    let rate = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
    let cov_psd = fitted.cov == fitted.cov.transpose() && fitted.cov.clone().cholesky().is_some();
    Ok(Metrics {
        mse_beta,
        mse_gamma,
        mse_sigma,
        mse_tau,
        mse_q,
        fp_rate: rate(fp, noise),
        fn_rate: rate(fneg, signal),
        m_star: fitted.m,
        cov_psd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn truth() -> Truth {
        Truth {
            beta0: 1.0,
            beta: vec![2.0, 4.0, 3.0, 5.0, 0.0, 0.0],
            gamma: vec![0.5, -0.5],
            sigma2: 0.16,
            cov: DMatrix::from_element(1, 1, 0.16),
            design: Design::RandomIntercepts,
        }
    }

    fn state_from(t: &Truth) -> ModelState {
        ModelState {
            beta0: t.beta0,
            beta: t.beta.clone(),
            gamma: t.gamma.clone(),
            sigma2: t.sigma2,
            cov: t.cov.clone(),
            m: 7,
        }
    }

    #[test]
    fn exact_fit_scores_zero() {
        let t = truth();
        let m = evaluate(&t, &state_from(&t)).unwrap();
        assert_eq!(m.mse_beta, 0.0);
        assert_eq!(m.fp_rate, 0.0);
        assert_eq!(m.fn_rate, 0.0);
        assert_eq!(m.mse_tau, Some(0.0));
        assert_eq!(m.m_star, 7);
        assert!(m.cov_psd);
    }

    #[test]
    fn zero_coefficients() {
        let t = truth();
        let mut s = state_from(&t);
        s.beta0 = 0.0;
        s.beta = vec![0.0; 6];
        let m = evaluate(&t, &s).unwrap();
        assert_eq!(m.mse_beta, 55.0);
        assert_eq!(m.fn_rate, 1.0);
        assert_eq!(m.fp_rate, 0.0);
    }

    #[test]
    fn false_positive_rate_counts_noise_only() {
        let t = truth();
        let mut s = state_from(&t);
        s.beta[5] = 1e-300;
        let m = evaluate(&t, &s).unwrap();
        assert_eq!(m.fp_rate, 0.5);
    }

    #[test]
    fn slopes_frobenius() {
        let t = Truth {
            cov: DMatrix::identity(3, 3),
            gamma: vec![0.0; 6],
            design: Design::RandomSlopes,
            ..truth()
        };
        let mut s = state_from(&t);
        s.cov[(0, 1)] = 0.5;
        s.cov[(1, 0)] = 0.5;
        let m = evaluate(&t, &s).unwrap();
        assert_eq!(m.mse_q, Some(0.5));
        assert_eq!(m.mse_tau, None);
        assert!(m.cov_psd);
    }

    #[test]
    fn dimension_mismatch() {
        let t = truth();
        let mut s = state_from(&t);
        s.beta.pop();
        assert!(evaluate(&t, &s).is_err());
    }
}
