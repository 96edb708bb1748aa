//! Fitting operators applied to the current residuals: one simple linear
//! regression per fixed covariate and a single corrected random-effects
//! learner.

mod correction;
mod fixed;
mod random;

pub use correction::{build_correction, CorrectionMatrix, CorrectionOptions};
pub use fixed::{fixed_baselearners, FixedBaselearner, FixedFit, ResidualStats};
pub use random::{RandomBaselearner, RandomFit};

pub(crate) use random::spd_inverse;
