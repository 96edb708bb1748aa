use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::CorrectionMatrix;
use crate::data::DesignBundle;
use crate::error::{Error, Result};

/// Corrected BLUP baselearner with hat matrix `Z C (Z'Z + sigma2 Q_b^-1)^-1 Z'`.
///
/// Because `Q_b = dg(Q, ..., Q)` and `Z` is block diagonal, the inner solve
/// splits into one `q x q` system `Z_i'Z_i + sigma2 Q^-1` per cluster. The
/// factorizations are refreshed by [`refresh`](Self::refresh) whenever the
/// variance components change.
#[derive(Debug, Clone)]
pub struct RandomBaselearner {
    correction: CorrectionMatrix,
    ztz: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
    sigma2: f64,
    cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RandomFit {
    /// Corrected coefficient increment, cluster-major, length `nq`.
    pub increment: Vec<f64>,
    /// `Z * increment`, length `N`.
    pub fitted: Vec<f64>,
}

/// Inverts a symmetric positive definite matrix, or reports it as
/// ill-conditioned.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned(format!("{what} has non-finite entries")));
    }
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::IllConditioned(format!("{what} is not positive definite")))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

impl RandomBaselearner {
    pub fn new(bundle: &DesignBundle, correction: CorrectionMatrix) -> Self {
        assert_eq!(correction.n_clusters(), bundle.n_clusters());
        assert_eq!(correction.q(), bundle.q());
        let ztz = bundle.z_blocks().iter().map(|z| z.transpose() * z).collect();
        RandomBaselearner {
            correction,
            ztz,
            factors: Vec::new(),
            sigma2: f64::NAN,
            cov: DMatrix::zeros(0, 0),
        }
    }

    pub fn correction(&self) -> &CorrectionMatrix {
        &self.correction
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Re-factorizes `Z_i'Z_i + sigma2 Q^-1` for every cluster.
    pub fn refresh(&mut self, sigma2: f64, cov: &DMatrix<f64>) -> Result<()> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::IllConditioned(format!("residual variance {sigma2} is not positive")));
        }
        let q = self.correction.q();
        if cov.shape() != (q, q) {
            return Err(Error::IllConditioned(format!(
                "covariance is {}x{}, expected {q}x{q}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let penalty = spd_inverse(cov, "random-effects covariance")? * sigma2;
        self.factors = self
            .ztz
            .iter()
            .map(|ztz| {
                Cholesky::new(ztz + &penalty).ok_or_else(|| {
                    Error::IllConditioned("ridge system is not positive definite".into())
                })
            })
            .collect::<Result<_>>()?;
        self.sigma2 = sigma2;
        self.cov = cov.clone();
        Ok(())
    }

    fn ensure_ready(&self) -> Result<()> {
        if self.factors.len() != self.ztz.len() {
            return Err(Error::IllConditioned("ridge factorization has not been computed".into()));
        }
        Ok(())
    }

    /// `(Z'Z + sigma2 Q_b^-1)^-1 w` for a cluster-major `w`, in place.
    fn ridge_solve_in_place(&self, w: &mut [f64]) {
        let q = self.correction.q();
        for (i, factor) in self.factors.iter().enumerate() {
            let mut rhs = DVector::from_column_slice(&w[i * q..(i + 1) * q]);
            factor.solve_mut(&mut rhs);
            w[i * q..(i + 1) * q].copy_from_slice(rhs.as_slice());
        }
    }

    /// Uncorrected BLUP `(Z'Z + sigma2 Q_b^-1)^-1 Z'u`.
    pub fn solve_uncorrected(&self, bundle: &DesignBundle, u: &[f64]) -> Result<Vec<f64>> {
        self.ensure_ready()?;
        let mut w = bundle.zt_mul(u);
        self.ridge_solve_in_place(&mut w);
        Ok(w)
    }

    /// Corrected coefficients `C (Z'Z + sigma2 Q_b^-1)^-1 Z'u`.
    pub fn increment(&self, bundle: &DesignBundle, u: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.solve_uncorrected(bundle, u)?;
        self.correction.apply(&mut w);
        Ok(w)
    }

    pub fn fit(&self, bundle: &DesignBundle, u: &[f64]) -> Result<RandomFit> {
        let increment = self.increment(bundle, u)?;
        let fitted = bundle.z_mul(&increment);
        Ok(RandomFit { increment, fitted })
    }

    /// Replaces `m` with `m - nu * S_gamma m`, column by column.
    pub fn subtract_hat_product(&self, bundle: &DesignBundle, m: &mut DMatrix<f64>, nu: f64) -> Result<()> {
        self.ensure_ready()?;
        for mut col in m.column_iter_mut() {
            let inc = self.increment(bundle, col.as_slice())?;
            bundle.z_mul_add(&inc, -nu, col.as_mut_slice());
        }
        Ok(())
    }

    /// Dense `N x N` hat matrix, for tests and small problems.
    pub fn hat_matrix(&self, bundle: &DesignBundle) -> Result<DMatrix<f64>> {
        let n = bundle.n_obs();
        let mut m = DMatrix::identity(n, n);
        self.subtract_hat_product(bundle, &mut m, 1.0)?;
        Ok(DMatrix::identity(n, n) - m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselearners::{build_correction, CorrectionOptions};
    use crate::data::{assemble_designs, LongitudinalDataset, RandomEffect};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_by_two() -> (LongitudinalDataset, DesignBundle) {
        let d = LongitudinalDataset::new(
            &["a", "a", "b", "b"],
            vec![1.0, 1.0, -1.0, -1.0],
            DMatrix::zeros(4, 0),
            vec![RandomEffect::Intercept],
        )
        .unwrap();
        let b = assemble_designs(&d).unwrap();
        (d, b)
    }

    #[test]
    fn hand_solved_ridge() {
        let (d, b) = two_by_two();
        let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
        bl.refresh(1.0, &DMatrix::identity(1, 1)).unwrap();
        let u = [1.0, 1.0, -1.0, -1.0];
        let raw = bl.solve_uncorrected(&b, &u).unwrap();
        // (Z'Z + I)^-1 Z'u = (2/3, -2/3); brute-force dense solve agrees.
        let z = b.z_dense();
        let a = z.transpose() * &z + DMatrix::identity(2, 2);
        let brute = a.lu().solve(&(z.transpose() * DVector::from_column_slice(&u))).unwrap();
        for (got, want) in raw.iter().zip([2.0 / 3.0, -2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        for (got, want) in raw.iter().zip(brute.iter()) {
            assert!((got - want).abs() < 1e-14);
        }
        let fit = bl.fit(&b, &u).unwrap();
        for (got, want) in fit.increment.iter().zip(&raw) {
            assert!((got - want).abs() < 1e-14);
        }
        assert_eq!(fit.fitted.len(), 4);
    }

    #[test]
    fn zero_residual_zero_increment() {
        let (d, b) = two_by_two();
        let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
        bl.refresh(0.5, &DMatrix::identity(1, 1)).unwrap();
        let fit = bl.fit(&b, &[0.0; 4]).unwrap();
        assert!(fit.increment.iter().chain(&fit.fitted).all(|v| *v == 0.0));
    }

    #[test]
    fn infinite_penalty_limit() {
        let (d, b) = two_by_two();
        let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
        bl.refresh(1e12, &DMatrix::identity(1, 1)).unwrap();
        let u = [1.0, 3.0, -2.0, -1.0];
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inc = bl.increment(&b, &u).unwrap();
        assert!(inc.iter().all(|v| v.abs() < 1e-6 * norm));
    }

    #[test]
    fn non_spd_covariance_is_reported() {
        let (d, b) = two_by_two();
        let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
        let err = bl.refresh(1.0, &DMatrix::from_element(1, 1, -1.0)).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(_)));
        assert!(bl.increment(&b, &[0.0; 4]).is_err());
    }

    fn random_instance(seed: u64) -> (LongitudinalDataset, DesignBundle, f64, DMatrix<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let q = rng.random_range(1..3);
        let mut ids = Vec::new();
        for c in 0..n {
            for _ in 0..rng.random_range(1..5) {
                ids.push(format!("c{c}"));
            }
        }
        let n_obs = ids.len();
        let x = DMatrix::from_fn(n_obs, 2, |_, _| rng.random_range(-1.5..1.5));
        let random = if q == 1 {
            vec![RandomEffect::Intercept]
        } else {
            vec![RandomEffect::Intercept, RandomEffect::Slope(0)]
        };
        let d = LongitudinalDataset::new(&ids, vec![0.0; n_obs], x, random).unwrap();
        let b = assemble_designs(&d).unwrap();
        let l = DMatrix::from_fn(q, q, |i, j| if i >= j { rng.random_range(-1.0..1.0) } else { 0.0 });
        let cov = &l * l.transpose() + DMatrix::identity(q, q) * 0.1;
        (d, b, rng.random_range(0.05..2.0), cov)
    }

    proptest! {
        #[test]
        fn uncorrected_operator_contracts(seed in any::<u64>()) {
            let (d, b, sigma2, cov) = random_instance(seed);
            let z = b.z_dense();
            let ztz = z.transpose() * &z;
            let nq = ztz.nrows();
            let mut qb = DMatrix::zeros(nq, nq);
            let q = cov.nrows();
            for i in 0..d.n_clusters() {
                qb.view_mut((i * q, i * q), (q, q)).copy_from(&cov);
            }
            let a = &ztz + qb.try_inverse().unwrap() * sigma2;
            let m = a.try_inverse().unwrap() * &ztz;
            // Similar to a symmetric PSD matrix, so eigenvalues are real.
            let eig = m.complex_eigenvalues();
            for e in eig.iter() {
                prop_assert!(e.im.abs() < 1e-8);
                prop_assert!(e.re > -1e-10 && e.re < 1.0);
            }
        }

        #[test]
        fn corrected_increment_is_orthogonal(seed in any::<u64>()) {
            let (d, b, sigma2, cov) = random_instance(seed);
            let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
            bl.refresh(sigma2, &cov).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let u: Vec<f64> = (0..d.n_obs()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let inc = bl.increment(&b, &u).unwrap();
            // Scale by the uncorrected solve: the corrected one can vanish.
            let raw = bl.solve_uncorrected(&b, &u).unwrap();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c = bl.correction();
            prop_assert!(c.max_violation(&inc) <= 1e-8 * norm * c.max_column_norm() + 1e-300);
        }
    }
}
