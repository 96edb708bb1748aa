use nalgebra::DMatrix;

use crate::data::DesignBundle;

/// Simple linear regression of the residual on `(1, x_r)`.
///
/// The 2x2 normal equations are held in centered form: with `xc = x_r - mean`
/// the system is diagonal, so the slope is `xc'u / xc'xc` and the intercept
/// follows from the means.
#[derive(Debug, Clone)]
pub struct FixedBaselearner {
    index: usize,
    mean: f64,
    sxx: f64,
    centered: Vec<f64>,
    degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedFit {
    pub intercept: f64,
    pub slope: f64,
    pub sse: f64,
}

const DEGENERATE_RTOL: f64 = 1e-20;

impl FixedBaselearner {
    pub fn new(index: usize, column: &[f64]) -> Self {
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let centered: Vec<f64> = column.iter().map(|v| v - mean).collect();
        let sxx = centered.iter().map(|v| v * v).sum::<f64>();
        let scale = column.iter().map(|v| v * v).sum::<f64>();
        let degenerate = !(sxx > DEGENERATE_RTOL * scale) || !sxx.is_finite();
        FixedBaselearner {
            index,
            mean,
            sxx,
            centered,
            degenerate,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// True when the covariate is constant, so the slope is not identified.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Least-squares fit of `u`; `None` for a degenerate covariate.
    pub fn fit(&self, u: &[f64]) -> Option<FixedFit> {
        let stats = ResidualStats::new(u);
        self.fit_with(u, &stats)
    }

    /// Same as [`fit`](Self::fit), reusing the residual mean and centered
    /// sum of squares shared by every baselearner within one iteration.
    pub fn fit_with(&self, u: &[f64], stats: &ResidualStats) -> Option<FixedFit> {
        if self.degenerate {
            return None;
        }
        let sxu: f64 = self.centered.iter().zip(u).map(|(x, u)| x * u).sum();
        let slope = sxu / self.sxx;
        let intercept = stats.mean - slope * self.mean;
        let sse = (stats.centered_ss - slope * sxu).max(0.0);
        Some(FixedFit {
            intercept,
            slope,
            sse,
        })
    }

    /// Fitted values `intercept + slope * x_r`.
    pub fn fitted(&self, fit: &FixedFit) -> Vec<f64> {
        self.centered
            .iter()
            .map(|xc| fit.intercept + fit.slope * (xc + self.mean))
            .collect()
    }

    /// Replaces `m` with `m - nu * S m`, where `S` is the hat matrix of
    /// this baselearner, applied column by column.
    pub fn subtract_hat_product(&self, m: &mut DMatrix<f64>, nu: f64) {
        if self.degenerate {
            return;
        }
        let n = m.nrows() as f64;
        for mut col in m.column_iter_mut() {
            let mean = col.sum() / n;
            let coef = self.centered.iter().zip(col.iter()).map(|(x, v)| x * v).sum::<f64>() / self.sxx;
            for (v, xc) in col.iter_mut().zip(&self.centered) {
                *v -= nu * (mean + coef * xc);
            }
        }
    }

    /// Dense hat matrix `x~ (x~'x~)^-1 x~'`.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        let n = self.centered.len();
        let mut s = DMatrix::from_element(n, n, 1.0 / n as f64);
        if !self.degenerate {
            for i in 0..n {
                for j in 0..n {
                    s[(i, j)] += self.centered[i] * self.centered[j] / self.sxx;
                }
            }
        }
        s
    }
}

/// Mean and centered sum of squares of a residual vector.
#[derive(Debug, Clone, Copy)]
pub struct ResidualStats {
    pub mean: f64,
    pub centered_ss: f64,
}

impl ResidualStats {
    pub fn new(u: &[f64]) -> Self {
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let centered_ss = u.iter().map(|v| (v - mean).powi(2)).sum();
        ResidualStats { mean, centered_ss }
    }
}

pub fn fixed_baselearners(bundle: &DesignBundle) -> Vec<FixedBaselearner> {
    bundle
        .x()
        .column_iter()
        .enumerate()
        .map(|(r, col)| {
            let col: Vec<f64> = col.iter().copied().collect();
            FixedBaselearner::new(r, &col)
        })
        .collect()
}
