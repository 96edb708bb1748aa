use nalgebra::DMatrix;

use crate::baselearners::{FixedBaselearner, RandomBaselearner};
use crate::data::DesignBundle;
use crate::error::Result;

/// A linear smoother `S` that can apply `M <- M - nu * S M` in place.
pub trait HatOperator {
    fn subtract_product(&self, m: &mut DMatrix<f64>, nu: f64) -> Result<()>;
}

impl HatOperator for DMatrix<f64> {
    fn subtract_product(&self, m: &mut DMatrix<f64>, nu: f64) -> Result<()> {
        let sm = self * &*m;
        *m -= sm * nu;
        Ok(())
    }
}

impl HatOperator for FixedBaselearner {
    fn subtract_product(&self, m: &mut DMatrix<f64>, nu: f64) -> Result<()> {
        self.subtract_hat_product(m, nu);
        Ok(())
    }
}

/// The random-effects smoother at its current factorization.
pub struct RandomHat<'a> {
    learner: &'a RandomBaselearner,
    bundle: &'a DesignBundle,
}

impl<'a> RandomHat<'a> {
    pub fn new(learner: &'a RandomBaselearner, bundle: &'a DesignBundle) -> Self {
        RandomHat { learner, bundle }
    }
}

impl HatOperator for RandomHat<'_> {
    fn subtract_product(&self, m: &mut DMatrix<f64>, nu: f64) -> Result<()> {
        self.learner.subtract_hat_product(self.bundle, m, nu)
    }
}

/// Running product `(I - S^[m]) ... (I - S^[0])`; the boosting hat matrix is
/// `H^[m] = I - product` and `df^[m] = tr(H^[m]) = N - tr(product)`.
#[derive(Debug, Clone)]
pub struct HatState {
    product: DMatrix<f64>,
    df_history: Vec<f64>,
}

impl HatState {
    /// `H = 0`: no fitting has happened yet.
    pub fn empty(n_obs: usize) -> Self {
        let mut h = HatState {
            product: DMatrix::identity(n_obs, n_obs),
            df_history: Vec::new(),
        };
        h.df_history.push(h.current_df());
        h
    }

    /// Starts from the initial fit's smoother `S^[0] = J/N + S_gamma (I - J/N)`,
    /// i.e. `I - S^[0] = (I - S_gamma)(I - J/N)`.
    pub fn initial(s_gamma: &dyn HatOperator, n_obs: usize) -> Result<Self> {
        let nf = n_obs as f64;
        let mut product = DMatrix::from_fn(n_obs, n_obs, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / nf);
        s_gamma.subtract_product(&mut product, 1.0)?;
        let mut h = HatState {
            product,
            df_history: Vec::new(),
        };
        h.df_history.push(h.current_df());
        Ok(h)
    }

    /// Multiplies the product by `(I - nu S_gamma)(I - nu S_beta)`. A missing
    /// `s_beta` means the fixed-effect step was skipped.
    pub fn update(&mut self, s_beta: Option<&dyn HatOperator>, s_gamma: &dyn HatOperator, nu: f64) -> Result<()> {
        if let Some(sb) = s_beta {
            sb.subtract_product(&mut self.product, nu)?;
        }
        s_gamma.subtract_product(&mut self.product, nu)?;
        let df = self.current_df();
        self.df_history.push(df);
        Ok(())
    }

    fn current_df(&self) -> f64 {
        self.product.nrows() as f64 - self.product.trace()
    }

    pub fn df(&self) -> f64 {
        *self.df_history.last().expect("history starts non-empty")
    }

    /// `df` after every update, starting with the initial state.
    pub fn df_history(&self) -> &[f64] {
        &self.df_history
    }

    /// `H = I - product`.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        let n = self.product.nrows();
        DMatrix::identity(n, n) - &self.product
    }
}
