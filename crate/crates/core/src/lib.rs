//! Component-wise gradient boosting for linear mixed models.
//!
//! Fixed effects are updated one covariate at a time by simple linear
//! regressions on the residuals, while all random effects are updated
//! together by a BLUP-type ridge baselearner whose coefficients are projected
//! off the span of the cluster-constant covariates. The residual variance and
//! random-effects covariance are re-estimated every iteration. The number of
//! iterations is chosen by cluster-wise cross-validation or a corrected AIC.

pub mod artifact;
pub mod baselearners;
pub mod data;
pub mod engine;
pub mod error;
pub mod sim;
pub mod stopping;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use artifact::FitArtifact;
pub use data::{assemble_designs, CovariateKind, DesignBundle, LongitudinalDataset, RandomEffect};
pub use engine::{fit_path, run, BoostConfig, FitResult, FitTrace, ModelState, StoppingRule, VarianceEstimator};
pub use error::{Error, ErrorKind, Result};
