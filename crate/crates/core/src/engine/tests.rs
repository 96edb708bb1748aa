use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::baselearners::{build_correction, fixed_baselearners, CorrectionOptions};
use crate::data::RandomEffect;

fn dataset(ids: &[String], y: Vec<f64>, x: DMatrix<f64>, random: Vec<RandomEffect>) -> LongitudinalDataset {
    LongitudinalDataset::new(ids, y, x, random).unwrap()
}

fn balanced_ids(n: usize, per: usize) -> Vec<String> {
    (0..n).flat_map(|c| std::iter::repeat_n(format!("c{c}"), per)).collect()
}

/// Random-intercept data with one cluster-constant and `p - 1` varying
/// covariates; only the first two carry signal.
fn random_intercept_data(seed: u64, n: usize, per: usize, p: usize, tau: f64, sigma: f64) -> LongitudinalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let ids = balanced_ids(n, per);
    let n_obs = n * per;
    let cluster_x: Vec<f64> = (0..n).map(|_| std.sample(&mut rng)).collect();
    let gamma: Vec<f64> = (0..n).map(|_| tau * std.sample(&mut rng)).collect();
    let mut x = DMatrix::zeros(n_obs, p);
    let mut y = Vec::with_capacity(n_obs);
    for row in 0..n_obs {
        let c = row / per;
        x[(row, 0)] = cluster_x[c];
        for r in 1..p {
            x[(row, r)] = std.sample(&mut rng);
        }
        let signal = 1.0 + 2.0 * x[(row, 0)] + if p > 1 { 3.0 * x[(row, 1)] } else { 0.0 };
        y.push(signal + gamma[c] + sigma * std.sample(&mut rng));
    }
    dataset(&ids, y, x, vec![RandomEffect::Intercept])
}

#[test]
fn negative_gradient_examples() {
    let ids = balanced_ids(1, 2);
    let d = dataset(&ids, vec![1.0, 2.0], DMatrix::zeros(2, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut state = ModelState::zeros(0, 1, 1);
    assert_eq!(negative_gradient(&state, &b, d.y()), vec![1.0, 2.0]);
    state.beta0 = 0.5;
    assert_eq!(negative_gradient(&state, &b, d.y()), vec![0.5, 1.5]);
    state.beta0 = 1.0;
    state.gamma = vec![0.5];
    let u = negative_gradient(&state, &b, &[1.5, 1.5]);
    assert_eq!(u, vec![0.0, 0.0]);
}

#[test]
fn step1_picks_exact_linear_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n_obs = 40;
    let x = DMatrix::from_fn(n_obs, 4, |_, _| rng.random_range(-1.0..1.0));
    let u: Vec<f64> = (0..n_obs).map(|i| 0.5 - 1.5 * x[(i, 2)]).collect();
    let b = FixedTestBundle::new(&x);
    let mut state = ModelState::zeros(4, 1, 1);
    let step = step1_update_fixed(&mut state, &u, &b.fixed, 1.0).unwrap();
    assert_eq!(step.index, 2);
    assert_abs_diff_eq!(step.fit.sse, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(state.beta[2], -1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(state.beta0, 0.5, epsilon = 1e-12);
    assert_eq!(state.beta[0], 0.0);
    assert_eq!(state.beta[1], 0.0);
    assert_eq!(state.beta[3], 0.0);
}

#[test]
fn step1_tie_goes_to_smaller_index() {
    let col: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
    let mut data = col.clone();
    data.extend(&col);
    let x = DMatrix::from_column_slice(10, 2, &data);
    let u: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos()).collect();
    let b = FixedTestBundle::new(&x);
    let mut state = ModelState::zeros(2, 1, 1);
    assert_eq!(step1_update_fixed(&mut state, &u, &b.fixed, 0.1).unwrap().index, 0);
}

#[test]
fn step1_alone_converges_to_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_obs = 30;
    let xs: Vec<f64> = (0..n_obs).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = xs.iter().map(|x| 0.7 - 1.3 * x + rng.random_range(-0.5..0.5)).collect();
    // Closed-form OLS oracle.
    let xm = xs.iter().sum::<f64>() / n_obs as f64;
    let ym = y.iter().sum::<f64>() / n_obs as f64;
    let sxy: f64 = xs.iter().zip(&y).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;

    let x = DMatrix::from_column_slice(n_obs, 1, &xs);
    let b = FixedTestBundle::new(&x);
    let mut state = ModelState::zeros(1, 1, 1);
    for _ in 0..100 {
        let eta = b.bundle_free_predictor(&state);
        let u: Vec<f64> = y.iter().zip(&eta).map(|(y, e)| y - e).collect();
        step1_update_fixed(&mut state, &u, &b.fixed, 1.0);
    }
    assert_abs_diff_eq!(state.beta[0], slope, epsilon = 1e-8);
    assert_abs_diff_eq!(state.beta0, intercept, epsilon = 1e-8);
}

#[test]
fn step1_skips_when_all_degenerate() {
    let x = DMatrix::from_element(5, 2, 3.0);
    let b = FixedTestBundle::new(&x);
    let mut state = ModelState::zeros(2, 1, 1);
    assert!(step1_update_fixed(&mut state, &[1.0, 2.0, 3.0, 4.0, 5.0], &b.fixed, 0.1).is_none());
    assert_eq!(state, ModelState::zeros(2, 1, 1));
}

struct FixedTestBundle {
    x: DMatrix<f64>,
    fixed: Vec<crate::baselearners::FixedBaselearner>,
}

impl FixedTestBundle {
    fn new(x: &DMatrix<f64>) -> Self {
        let fixed = (0..x.ncols())
            .map(|r| {
                let col: Vec<f64> = x.column(r).iter().copied().collect();
                crate::baselearners::FixedBaselearner::new(r, &col)
            })
            .collect();
        FixedTestBundle { x: x.clone(), fixed }
    }

    fn bundle_free_predictor(&self, state: &ModelState) -> Vec<f64> {
        (0..self.x.nrows())
            .map(|i| state.beta0 + (0..self.x.ncols()).map(|r| self.x[(i, r)] * state.beta[r]).sum::<f64>())
            .collect()
    }
}

fn random_learner(d: &LongitudinalDataset, sigma2: f64, cov: &DMatrix<f64>) -> (DesignBundle, RandomBaselearner) {
    let b = assemble_designs(d).unwrap();
    let mut bl = RandomBaselearner::new(&b, build_correction(d, CorrectionOptions::default()));
    bl.refresh(sigma2, cov).unwrap();
    (b, bl)
}

#[test]
fn step2_zero_residual_leaves_state() {
    let d = random_intercept_data(1, 4, 3, 2, 0.5, 0.3);
    let (b, bl) = random_learner(&d, 0.5, &DMatrix::identity(1, 1));
    let mut state = ModelState::zeros(2, 4, 1);
    state.gamma = vec![0.1, -0.2, 0.3, -0.2];
    let before = state.clone();
    step2_update_random(&mut state, &vec![0.0; d.n_obs()], &bl, &b, 0.1).unwrap();
    assert_eq!(state, before);
}

/// Fixed point of repeated step 2 with the residual refreshed each time:
/// `gamma = B theta` with `B' A^-1 Z'(u0 - Z B theta) = 0`, where `B` spans
/// the range of `C`. Solved directly with dense linear algebra.
fn step2_fixed_point(b: &DesignBundle, bl: &RandomBaselearner, u0: &[f64]) -> Vec<f64> {
    let c = bl.correction().dense();
    let eig = c.clone().symmetric_eigen();
    let cols: Vec<usize> = (0..c.nrows()).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    let basis = eig.eigenvectors.select_columns(cols.iter());
    let z = b.z_dense();
    let ztz = z.transpose() * &z;
    let nq = ztz.nrows();
    let q = b.q();
    let mut qb = DMatrix::zeros(nq, nq);
    for i in 0..b.n_clusters() {
        qb.view_mut((i * q, i * q), (q, q)).copy_from(bl.covariance());
    }
    let a = &ztz + qb.try_inverse().unwrap() * bl.sigma2();
    let a_inv = a.try_inverse().unwrap();
    let lhs = basis.transpose() * &a_inv * &ztz * &basis;
    let rhs = basis.transpose() * &a_inv * z.transpose() * DVector::from_column_slice(u0);
    let theta = lhs.lu().solve(&rhs).unwrap();
    (basis * theta).iter().copied().collect()
}

#[test]
fn repeated_step2_converges_to_its_fixed_point() {
    let d = random_intercept_data(5, 6, 4, 2, 0.8, 0.4);
    let (b, bl) = random_learner(&d, 0.3, &DMatrix::from_element(1, 1, 0.5));
    let u0: Vec<f64> = d.y().iter().map(|v| v - 1.0).collect();
    let mut state = ModelState::zeros(2, 6, 1);
    let c = bl.correction();
    for _ in 0..2000 {
        let zg = b.z_mul(&state.gamma);
        let u: Vec<f64> = u0.iter().zip(&zg).map(|(u, z)| u - z).collect();
        step2_update_random(&mut state, &u, &bl, &b, 0.1).unwrap();
        let norm = state.gamma.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(c.max_violation(&state.gamma) < 1e-8 * norm.max(1e-300) * c.max_column_norm());
    }
    let oracle = step2_fixed_point(&b, &bl, &u0);
    for (g, o) in state.gamma.iter().zip(&oracle) {
        assert_abs_diff_eq!(g, o, epsilon = 1e-6);
    }
}

#[test]
fn em_update_hand_value() {
    let z = vec![DMatrix::repeat(2, 1, 1.0), DMatrix::repeat(2, 1, 1.0)];
    let q = em_covariance_update(&z, &[0.3, -0.3], 1.0, &DMatrix::identity(1, 1)).unwrap();
    // F_i = 2 + 1 = 3, Q = (1/2) * 2 * (1/3 + 0.09).
    assert_abs_diff_eq!(q[(0, 0)], 1.0 / 3.0 + 0.09, epsilon = 1e-15);
}

#[test]
fn em_update_stays_positive_with_tiny_noise() {
    let z = vec![DMatrix::from_row_slice(3, 2, &[1.0, 0.1, 1.0, -0.4, 1.0, 0.9]); 4];
    let prev = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let q = em_covariance_update(&z, &[0.0; 8], 1e-8, &prev).unwrap();
    assert!(q.iter().all(|v| v.abs() < 1e-6));
    assert!(q.clone().cholesky().is_some());
    assert_eq!(q, q.transpose());
}

#[test]
fn step3_floors_residual_variance() {
    let ids = balanced_ids(2, 3);
    let y = vec![2.0; 6];
    let d = dataset(&ids, y, DMatrix::zeros(6, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut state = ModelState::zeros(0, 2, 1);
    state.beta0 = 2.0;
    let vu = step3_update_variances(&mut state, d.y(), &b, VarianceEstimator::MeanSquare).unwrap();
    assert!(vu.sigma2_clamped);
    assert_eq!(state.sigma2, SIGMA2_FLOOR);
    assert!(state.cov[(0, 0)] >= COV_DIAG_FLOOR);
}

#[test]
fn initial_fit_constant_response() {
    let ids = balanced_ids(5, 4);
    let d = dataset(&ids, vec![3.5; 20], DMatrix::zeros(20, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
    let init = initial_fit(&b, d.y(), &mut bl, &BoostConfig::default()).unwrap();
    assert_abs_diff_eq!(init.state.beta0, 3.5, epsilon = 1e-12);
    assert!(init.state.gamma.iter().all(|g| g.abs() < 1e-12));
    assert_eq!(init.state.sigma2, SIGMA2_FLOOR);
    assert!(init.state.beta.is_empty());
}

#[test]
fn initial_fit_single_cluster_is_centered_away() {
    let ids = balanced_ids(1, 6);
    let y = vec![1.0, 2.0, 4.0, 0.5, 3.0, 1.5];
    let mean = y.iter().sum::<f64>() / 6.0;
    let d = dataset(&ids, y, DMatrix::zeros(6, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
    let init = initial_fit(&b, d.y(), &mut bl, &BoostConfig::default()).unwrap();
    assert_eq!(init.state.gamma, vec![0.0]);
    assert_abs_diff_eq!(init.state.beta0, mean, epsilon = 1e-12);
}

#[test]
fn initial_fit_recovers_random_intercept_variance() {
    // Monte-Carlo oracle: known gamma with large spread and tiny noise.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 200;
    let per = 5;
    let gamma: Vec<f64> = (0..n).map(|_| Normal::new(0.0, 2.0).unwrap().sample(&mut rng)).collect();
    let gm = gamma.iter().sum::<f64>() / n as f64;
    let empirical = gamma.iter().map(|g| (g - gm).powi(2)).sum::<f64>() / n as f64;
    let ids = balanced_ids(n, per);
    let y: Vec<f64> = (0..n * per)
        .map(|row| 1.0 + gamma[row / per] + 0.01 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
        .collect();
    let d = dataset(&ids, y, DMatrix::zeros(n * per, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
    let init = initial_fit(&b, d.y(), &mut bl, &BoostConfig::default()).unwrap();
    let q = init.state.cov[(0, 0)];
    assert!((q - empirical).abs() < 0.2 * empirical, "Q = {q}, empirical = {empirical}");
    assert!(c_orthogonal(&bl, &init.state.gamma));
}

fn c_orthogonal(bl: &RandomBaselearner, gamma: &[f64]) -> bool {
    let c = bl.correction();
    let norm = gamma.iter().map(|v| v * v).sum::<f64>().sqrt();
    c.max_violation(gamma) <= 1e-8 * norm * c.max_column_norm() + 1e-300
}

#[test]
fn penalized_loglik_normalization() {
    let ids = balanced_ids(2, 2);
    let d = dataset(&ids, vec![0.0; 4], DMatrix::zeros(4, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut state = ModelState::zeros(0, 2, 1);
    state.sigma2 = 1.0 / (2.0 * std::f64::consts::PI);
    assert_abs_diff_eq!(penalized_loglik(&state, &b, d.y()).unwrap(), 0.0, epsilon = 1e-14);
}

#[test]
fn penalized_loglik_penalty_is_quadratic_and_matches_brute_force() {
    let ids: Vec<String> = ["a", "a", "b", "b", "b"].iter().map(|s| s.to_string()).collect();
    let x = DMatrix::from_column_slice(5, 1, &[0.2, -0.4, 1.0, 0.3, -0.8]);
    let y = vec![1.0, 0.4, 2.2, 1.1, -0.3];
    let d = dataset(&ids, y.clone(), x.clone(), vec![RandomEffect::Intercept, RandomEffect::Slope(0)]);
    let b = assemble_designs(&d).unwrap();
    let state = ModelState {
        beta0: 0.3,
        beta: vec![0.9],
        gamma: vec![0.2, -0.1, -0.15, 0.4],
        sigma2: 0.7,
        cov: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        m: 0,
    };
    // Brute force: explicit normal densities and penalty.
    let eta = [
        0.3 + 0.9 * 0.2 + 0.2 + (-0.1) * 0.2,
        0.3 + 0.9 * -0.4 + 0.2 + (-0.1) * -0.4,
        0.3 + 0.9 * 1.0 - 0.15 + 0.4 * 1.0,
        0.3 + 0.9 * 0.3 - 0.15 + 0.4 * 0.3,
        0.3 + 0.9 * -0.8 - 0.15 + 0.4 * -0.8,
    ];
    let logf: f64 = y
        .iter()
        .zip(eta)
        .map(|(y, e)| {
            let s2: f64 = 0.7;
            -(2.0 * std::f64::consts::PI * s2).sqrt().ln() - (y - e).powi(2) / (2.0 * s2)
        })
        .sum();
    let qinv = state.cov.clone().try_inverse().unwrap();
    let pen = |g: [f64; 2]| {
        let g = DVector::from_row_slice(&g);
        (g.transpose() * &qinv * &g)[(0, 0)]
    };
    let penalty = pen([0.2, -0.1]) + pen([-0.15, 0.4]);
    let got = penalized_loglik(&state, &b, d.y()).unwrap();
    assert_abs_diff_eq!(got, logf - 0.5 * penalty, epsilon = 1e-10);

    // Doubling gamma (with the fit held fixed) quadruples the penalty term.
    let zero_gamma = ModelState { gamma: vec![0.0; 4], ..state.clone() };
    let doubled = ModelState { gamma: state.gamma.iter().map(|g| 2.0 * g).collect(), ..state.clone() };
    let base = penalized_loglik(&zero_gamma, &b, d.y()).unwrap();
    let data_term = |s: &ModelState| {
        let r = negative_gradient(s, &b, d.y());
        -0.5 * 5.0 * (2.0 * std::f64::consts::PI * 0.7f64).ln() - r.iter().map(|v| v * v).sum::<f64>() / 1.4
    };
    let p1 = data_term(&state) - got;
    let p2 = data_term(&doubled) - penalized_loglik(&doubled, &b, d.y()).unwrap();
    assert_abs_diff_eq!(p2, 4.0 * p1, epsilon = 1e-12);
    assert!(base.is_finite());
}

#[test]
fn penalized_loglik_rejects_singular_cov() {
    let ids = balanced_ids(2, 2);
    let d = dataset(&ids, vec![0.0; 4], DMatrix::zeros(4, 0), vec![RandomEffect::Intercept]);
    let b = assemble_designs(&d).unwrap();
    let mut state = ModelState::zeros(0, 2, 1);
    state.cov = DMatrix::zeros(1, 1);
    assert!(penalized_loglik(&state, &b, d.y()).is_err());
}

#[test]
fn run_without_noise_or_random_variance_recovers_ols_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids = balanced_ids(10, 6);
    let xs: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
    let d = dataset(&ids, y, DMatrix::from_column_slice(60, 1, &xs), vec![RandomEffect::Intercept]);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None);
    let fit = run(&d, &cfg).unwrap();
    assert_eq!(fit.m_star, 1000);
    assert_abs_diff_eq!(fit.state.beta[0], 2.0, epsilon = 1e-3);
}

#[test]
fn m_stop_contract() {
    let d = random_intercept_data(2, 5, 4, 3, 0.5, 0.4);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(0);
    assert!(matches!(run(&d, &cfg), Err(Error::InvalidConfig(_))));
    let fit = run(&d, &cfg.with_m_stop(1)).unwrap();
    assert_eq!(fit.trace.iterations(), 1);
    assert_eq!(fit.trace.beta_path.len(), 1);
    assert_eq!(fit.m_star, 1);
}

#[test]
fn state_at_matches_trace_rows() {
    let d = random_intercept_data(4, 8, 5, 4, 0.5, 0.4);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(30);
    let path = fit_path(&d, &cfg, false).unwrap();
    let s = path.trace.state_at(17).unwrap();
    assert_eq!(s.beta0, path.trace.beta_path[16][0]);
    assert_eq!(&s.beta[..], &path.trace.beta_path[16][1..]);
    assert_eq!(s.m, 17);
    assert!(path.trace.state_at(31).is_none());
    let s0 = path.trace.state_at(0).unwrap();
    assert!(s0.beta.iter().all(|b| *b == 0.0));
}

#[test]
fn unselected_covariates_stay_exactly_zero() {
    let d = random_intercept_data(6, 10, 5, 6, 0.5, 0.4);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(40);
    let path = fit_path(&d, &cfg, false).unwrap();
    for m in 1..=40 {
        let state = path.trace.state_at(m).unwrap();
        let ever: Vec<usize> = path.trace.selected_path[..m].iter().flatten().copied().collect();
        for r in 0..6 {
            if !ever.contains(&r) {
                assert_eq!(state.beta[r], 0.0);
            }
        }
    }
}

#[test]
fn all_constant_covariates_reduce_to_random_refinement() {
    let ids = balanced_ids(6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let y: Vec<f64> = (0..24).map(|i| (i / 4) as f64 * 0.3 + rng.random_range(-0.2..0.2)).collect();
    let x = DMatrix::from_element(24, 2, 1.5);
    let d = dataset(&ids, y, x, vec![RandomEffect::Intercept]);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(25);
    let path = fit_path(&d, &cfg, false).unwrap();
    assert!(path.trace.selected_path.iter().all(|s| s.is_none()));
    assert!(!path.warnings.is_empty());
    let b = assemble_designs(&d).unwrap();
    let bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
    for g in &path.trace.gamma_path {
        assert!(c_orthogonal(&bl, g));
    }
}

#[test]
fn slopes_fit_keeps_cov_symmetric_pd() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids = balanced_ids(12, 6);
    let n_obs = 72;
    let x = DMatrix::from_fn(n_obs, 3, |_, _| rng.random_range(-1.0..1.0));
    let slopes: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
    let y: Vec<f64> = (0..n_obs)
        .map(|i| 1.0 + 2.0 * x[(i, 0)] + slopes[i / 6] * x[(i, 1)] + rng.random_range(-0.3..0.3))
        .collect();
    let d = dataset(&ids, y, x, vec![RandomEffect::Intercept, RandomEffect::Slope(1)]);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(60);
    let path = fit_path(&d, &cfg, false).unwrap();
    for cov in &path.trace.cov_path {
        assert_eq!(cov, &cov.transpose());
        assert!(cov.clone().cholesky().is_some());
    }
}

#[test]
fn hat_tracking_df_stays_in_range() {
    let d = random_intercept_data(9, 6, 5, 3, 0.6, 0.4);
    let cfg = BoostConfig::default().with_stopping(StoppingRule::Aic).with_m_stop(50);
    let path = fit_path(&d, &cfg, true).unwrap();
    let n = d.n_obs() as f64;
    let df = path.trace.df_path.as_ref().unwrap();
    assert_eq!(df.len(), 50);
    let df0 = path.trace.initial_df.unwrap();
    assert!((0.0..=n).contains(&df0));
    assert!(df.iter().all(|v| (0.0..=n).contains(v)));
    let fit = run(&d, &cfg).unwrap();
    assert!(fit.aic.is_some());
    assert!((1..=50).contains(&fit.m_star));
}

#[test]
fn initial_df_equals_trace_of_initial_smoother() {
    let d = random_intercept_data(10, 4, 3, 2, 0.6, 0.4);
    let b = assemble_designs(&d).unwrap();
    let cfg = BoostConfig::default().with_stopping(StoppingRule::Aic).with_m_stop(1);
    let path = fit_path(&d, &cfg, true).unwrap();
    let mut bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
    bl.refresh(path.trace.initial_sigma2, &path.trace.initial_cov).unwrap();
    let n = d.n_obs();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let s_gamma = bl.hat_matrix(&b).unwrap();
    let s0 = &j + &s_gamma * (DMatrix::identity(n, n) - &j);
    assert_abs_diff_eq!(path.trace.initial_df.unwrap(), s0.trace(), epsilon = 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn training_loss_monotone(seed in any::<u64>(), n in 3usize..10, per in 2usize..6, p in 1usize..5) {
        let d = random_intercept_data(seed, n, per, p, 0.7, 0.4);
        let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(150);
        let t = fit_path(&d, &cfg, false).unwrap().trace;
        let tol = 1e-9 * d.n_obs() as f64;
        let mut before = t.initial_loss;
        for m in 0..t.iterations() {
            prop_assert!(t.step1_loss_path[m] <= before * (1.0 + 1e-14),
                "step 1 increased loss at m={}: {} -> {}", m + 1, before, t.step1_loss_path[m]);
            prop_assert!(t.loss_path[m] <= before + tol,
                "total loss increased at m={}: {} -> {}", m + 1, before, t.loss_path[m]);
            before = t.loss_path[m];
        }
    }

    #[test]
    fn fitted_states_are_orthogonal(seed in any::<u64>()) {
        let d = random_intercept_data(seed, 7, 4, 3, 0.8, 0.4);
        let cfg = BoostConfig::default().with_stopping(StoppingRule::None).with_m_stop(20);
        let t = fit_path(&d, &cfg, false).unwrap().trace;
        let b = assemble_designs(&d).unwrap();
        let bl = RandomBaselearner::new(&b, build_correction(&d, CorrectionOptions::default()));
        prop_assert!(c_orthogonal(&bl, &t.initial_gamma));
        for g in &t.gamma_path {
            prop_assert!(c_orthogonal(&bl, g));
        }
    }
}

#[test]
fn fixed_baselearners_cover_every_column() {
    let d = random_intercept_data(1, 3, 3, 4, 0.5, 0.4);
    let b = assemble_designs(&d).unwrap();
    let fixed = fixed_baselearners(&b);
    assert_eq!(fixed.iter().map(|f| f.index()).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    // Column 0 is cluster-constant but not globally constant.
    assert!(!fixed[0].is_degenerate());
}
