use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, LongitudinalDataset, RandomEffect};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOptions {
    /// Also correct random slopes for the cluster-constant covariates
    /// (appropriate when the model carries the matching interactions).
    pub slope_cluster_constant: bool,
}

/// Removes from each random effect its projection onto the span of an
/// effect-specific covariate set `X_cs` (`n x k`, one row per cluster).
///
/// The full correction is `C = P^-1 (I - dg(C_1..C_q)) P` where `P` reorders a
/// cluster-major `gamma` into effect-major blocks `(gamma~_1, ..., gamma~_q)`
/// and `C_s` is the orthogonal projection onto the columns of `X_cs`. Only an
/// orthonormal basis of each column space is stored.
#[derive(Debug, Clone)]
pub struct CorrectionMatrix {
    n: usize,
    q: usize,
    design_sets: Vec<DMatrix<f64>>,
    bases: Vec<DMatrix<f64>>,
}

pub fn build_correction(data: &LongitudinalDataset, options: CorrectionOptions) -> CorrectionMatrix {
    let n = data.n_clusters();
    let constant: Vec<usize> = data
        .covariate_kinds()
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == CovariateKind::ClusterConstant)
        .map(|(r, _)| r)
        .collect();
    let reps: Vec<Vec<f64>> = constant.iter().map(|&r| data.cluster_representatives(r)).collect();

    let design_sets: Vec<DMatrix<f64>> = data
        .random_effects()
        .iter()
        .map(|effect| {
            let with_constants = match effect {
                RandomEffect::Intercept => true,
                RandomEffect::Slope(_) => options.slope_cluster_constant,
            };
            let k = if with_constants { 1 + reps.len() } else { 1 };
            DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { reps[c - 1][i] })
        })
        .collect();
    CorrectionMatrix::from_design_sets(n, design_sets)
}

impl CorrectionMatrix {
    /// Builds the correction from explicit per-effect covariate sets.
    pub fn from_design_sets(n: usize, design_sets: Vec<DMatrix<f64>>) -> Self {
        for set in &design_sets {
            assert_eq!(set.nrows(), n, "design set must have one row per cluster");
        }
        let bases = design_sets.iter().map(orthonormal_basis).collect();
        CorrectionMatrix {
            n,
            q: design_sets.len(),
            design_sets,
            bases,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn design_set(&self, s: usize) -> &DMatrix<f64> {
        &self.design_sets[s]
    }

    /// Dimension of the column space removed from effect `s`.
    pub fn rank(&self, s: usize) -> usize {
        self.bases[s].ncols()
    }

    /// Applies `C` in place to a cluster-major vector.
    pub fn apply(&self, gamma: &mut [f64]) {
        debug_assert_eq!(gamma.len(), self.n * self.q);
        let mut block = vec![0.0; self.n];
        for (s, basis) in self.bases.iter().enumerate() {
            if basis.ncols() == self.n {
                // X_cs spans everything: C_s = I and the block is removed exactly.
                for i in 0..self.n {
                    gamma[i * self.q + s] = 0.0;
                }
                continue;
            }
            for i in 0..self.n {
                block[i] = gamma[i * self.q + s];
            }
            for col in basis.column_iter() {
                let coef: f64 = col.iter().zip(&block).map(|(a, b)| a * b).sum();
                for i in 0..self.n {
                    gamma[i * self.q + s] -= coef * col[i];
                }
            }
        }
    }

    /// `P gamma`: cluster-major to effect-major.
    pub fn to_effect_major(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.q)
            .flat_map(|s| (0..self.n).map(move |i| gamma[i * self.q + s]))
            .collect()
    }

    /// `P^-1 gamma~`: effect-major back to cluster-major.
    pub fn from_effect_major(&self, tilde: &[f64]) -> Vec<f64> {
        (0..self.n)
            .flat_map(|i| (0..self.q).map(move |s| tilde[s * self.n + i]))
            .collect()
    }

    /// The `n x n` projection `C_s`.
    pub fn projection(&self, s: usize) -> DMatrix<f64> {
        let b = &self.bases[s];
        b * b.transpose()
    }

    /// Dense `nq x nq` correction matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let nq = self.n * self.q;
        let mut c = DMatrix::zeros(nq, nq);
        for s in 0..self.q {
            let proj = self.projection(s);
            for i in 0..self.n {
                for j in 0..self.n {
                    let identity = if i == j { 1.0 } else { 0.0 };
                    c[(i * self.q + s, j * self.q + s)] = identity - proj[(i, j)];
                }
            }
        }
        c
    }

    /// Largest `|c' gamma~_s|` over every column `c` of every `X_cs`.
    pub fn max_violation(&self, gamma: &[f64]) -> f64 {
        let tilde = self.to_effect_major(gamma);
        let mut worst: f64 = 0.0;
        for (s, set) in self.design_sets.iter().enumerate() {
            let block = &tilde[s * self.n..(s + 1) * self.n];
            for col in set.column_iter() {
                let dot: f64 = col.iter().zip(block).map(|(a, b)| a * b).sum();
                worst = worst.max(dot.abs());
            }
        }
        worst
    }

    /// Largest column norm across all design sets.
    pub fn max_column_norm(&self) -> f64 {
        self.design_sets
            .iter()
            .flat_map(|set| set.column_iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }
}

/// Orthonormal basis of the column space via a truncated SVD, so that
/// duplicated or collinear columns are absorbed instead of inverted.
fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > tol)
        .map(|(j, _)| j)
        .collect();
    u.select_columns(keep.iter())
}
