use std::ops::Range;

use nalgebra::DMatrix;

use super::{LongitudinalDataset, RandomEffect};
use crate::error::{Error, Result};

/// Fixed-effects matrix plus the block-diagonal random-effects design.
///
/// `Z = dg(Z_1, ..., Z_n)` is kept as its diagonal blocks only. Columns of the
/// full `Z` are cluster-major: columns `i*q .. (i+1)*q` belong to cluster `i`.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    x: DMatrix<f64>,
    z_blocks: Vec<DMatrix<f64>>,
    cluster_slices: Vec<Range<usize>>,
    q: usize,
}

pub fn assemble_designs(data: &LongitudinalDataset) -> Result<DesignBundle> {
    let q = data.n_random();
    let x = data.x();
    for (c, range) in data.cluster_ranges().iter().enumerate() {
        if range.is_empty() {
            return Err(Error::InvalidData(format!(
                "cluster `{}` has no observations",
                data.cluster_labels()[c]
            )));
        }
    }
    for effect in data.random_effects() {
        if let RandomEffect::Slope(r) = *effect {
            if x.column(r).iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidData(format!(
                    "random slope on covariate `{}` which is identically zero",
                    data.covariate_names()[r]
                )));
            }
        }
    }

    let z_blocks = data
        .cluster_ranges()
        .iter()
        .map(|range| {
            DMatrix::from_fn(range.len(), q, |j, s| match data.random_effects()[s] {
                RandomEffect::Intercept => 1.0,
                RandomEffect::Slope(r) => x[(range.start + j, r)],
            })
        })
        .collect();

    Ok(DesignBundle {
        x: x.clone(),
        z_blocks,
        cluster_slices: data.cluster_ranges().to_vec(),
        q,
    })
}

impl DesignBundle {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z_blocks(&self) -> &[DMatrix<f64>] {
        &self.z_blocks
    }

    pub fn cluster_slices(&self) -> &[Range<usize>] {
        &self.cluster_slices
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.z_blocks.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Computes `Z * gamma` for cluster-major `gamma`.
    pub fn z_mul(&self, gamma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_obs()];
        self.z_mul_add(gamma, 1.0, &mut out);
        out
    }

    /// `out += scale * Z * gamma`.
    pub fn z_mul_add(&self, gamma: &[f64], scale: f64, out: &mut [f64]) {
        let q = self.q;
        for (i, (block, range)) in self.z_blocks.iter().zip(&self.cluster_slices).enumerate() {
            let g = &gamma[i * q..(i + 1) * q];
            for (j, row) in range.clone().enumerate() {
                let mut acc = 0.0;
                for s in 0..q {
                    acc += block[(j, s)] * g[s];
                }
                out[row] += scale * acc;
            }
        }
    }

    /// Computes `Z^T u`, cluster-major.
    pub fn zt_mul(&self, u: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut out = vec![0.0; self.n_clusters() * q];
        for (i, (block, range)) in self.z_blocks.iter().zip(&self.cluster_slices).enumerate() {
            for (j, row) in range.clone().enumerate() {
                for s in 0..q {
                    out[i * q + s] += block[(j, s)] * u[row];
                }
            }
        }
        out
    }

    /// Computes `beta0 + X * beta`.
    pub fn fixed_predictor(&self, beta0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![beta0; self.n_obs()];
        for (r, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.x.column(r).iter()) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// Dense `N x nq` random-effects design, for tests and small problems.
    pub fn z_dense(&self) -> DMatrix<f64> {
        let q = self.q;
        let mut z = DMatrix::zeros(self.n_obs(), self.n_clusters() * q);
        for (i, (block, range)) in self.z_blocks.iter().zip(&self.cluster_slices).enumerate() {
            z.view_mut((range.start, i * q), (range.len(), q)).copy_from(block);
        }
        z
    }
}
