use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use grblmm::data::{ingest_csv, ColumnRoles, IngestOptions};
use grblmm::sim::{Design, SimulationConfig};
use grblmm::{ErrorKind, FitArtifact, ModelState, StoppingRule};

fn py_err(e: grblmm::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.code());
    match e.kind() {
        ErrorKind::Numerical => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n_obs: usize) -> PyResult<DMatrix<f64>> {
    if rows.len() != n_obs {
        return Err(PyValueError::new_err(format!("{} covariate rows for {n_obs} observations", rows.len())));
    }
    let p = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("covariate rows differ in length"));
    }
    Ok(DMatrix::from_fn(n_obs, p, |i, j| rows[i][j]))
}

fn parse_random(specs: &[String], names: &[String]) -> PyResult<Vec<grblmm::RandomEffect>> {
    let roles = ColumnRoles {
        cluster: String::new(),
        response: String::new(),
        fixed: names.to_vec(),
        random: specs.to_vec(),
    };
    roles.resolve_random().map_err(py_err)
}

/// Longitudinal data: one row per observation, grouped by cluster.
#[pyclass(name = "Dataset", module = "pygrblmm", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: grblmm::LongitudinalDataset,
}

#[pymethods]
impl PyDataset {
    /// `x` is row-major: one list of covariate values per observation.
    #[new]
    #[pyo3(signature = (clusters, y, x, names=None, random=vec!["intercept".to_string()]))]
    fn new(clusters: Vec<String>, y: Vec<f64>, x: Vec<Vec<f64>>, names: Option<Vec<String>>, random: Vec<String>) -> PyResult<Self> {
        let x = rows_to_matrix(&x, y.len())?;
        let names = names.unwrap_or_else(|| (1..=x.ncols()).map(|r| format!("x{r}")).collect());
        let random = parse_random(&random, &names)?;
        let inner = grblmm::LongitudinalDataset::with_names(&clusters, y, x, names, random).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, cluster_col, response_col, fixed_cols, random=vec!["intercept".to_string()], drop_incomplete=false))]
    fn from_csv(
        path: PathBuf,
        cluster_col: String,
        response_col: String,
        fixed_cols: Vec<String>,
        random: Vec<String>,
        drop_incomplete: bool,
    ) -> PyResult<Self> {
        let roles = ColumnRoles {
            cluster: cluster_col,
            response: response_col,
            fixed: fixed_cols,
            random,
        };
        let (inner, _) = ingest_csv(path, &roles, IngestOptions { drop_incomplete }).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn n_clusters(&self) -> usize {
        self.inner.n_clusters()
    }

    #[getter]
    fn n_fixed(&self) -> usize {
        self.inner.n_fixed()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    #[getter]
    fn cluster_labels(&self) -> Vec<String> {
        self.inner.cluster_labels().to_vec()
    }

    /// `"constant"` or `"varying"` within clusters, per covariate.
    #[getter]
    fn covariate_kinds(&self) -> Vec<&'static str> {
        self.inner
            .covariate_kinds()
            .iter()
            .map(|k| match k {
                grblmm::CovariateKind::ClusterConstant => "constant",
                grblmm::CovariateKind::ClusterVarying => "varying",
            })
            .collect()
    }

    /// Response in cluster-grouped order.
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_obs={}, n_clusters={}, covariates={})",
            self.inner.n_obs(),
            self.inner.n_clusters(),
            self.inner.n_fixed()
        )
    }
}

#[pyclass(name = "BoostConfig", module = "pygrblmm", skip_from_py_object)]
#[derive(Clone)]
struct PyBoostConfig {
    inner: grblmm::BoostConfig,
}

#[pymethods]
impl PyBoostConfig {
    /// `stop` is `"cv"`, `"aic"` or `"none"`.
    #[new]
    #[pyo3(signature = (nu=0.1, mstop=1000, stop="cv", k=10, seed=0))]
    fn new(nu: f64, mstop: usize, stop: &str, k: usize, seed: u64) -> PyResult<Self> {
        let stopping = match stop {
            "cv" => StoppingRule::Cv { folds: k },
            "aic" => StoppingRule::Aic,
            "none" => StoppingRule::None,
            other => return Err(PyValueError::new_err(format!("unknown stopping rule '{other}'"))),
        };
        let inner = grblmm::BoostConfig::default()
            .with_nu(nu)
            .with_m_stop(mstop)
            .with_stopping(stopping)
            .with_seed(seed);
        inner.validate().map_err(py_err)?;
        Ok(PyBoostConfig { inner })
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }

    #[getter]
    fn mstop(&self) -> usize {
        self.inner.m_stop
    }

    #[getter]
    fn stop(&self) -> &'static str {
        self.inner.stopping.name()
    }

    fn __repr__(&self) -> String {
        format!(
            "BoostConfig(nu={}, mstop={}, stop='{}', seed={})",
            self.inner.nu,
            self.inner.m_stop,
            self.inner.stopping.name(),
            self.inner.seed
        )
    }
}

/// A fitted model. Coefficients are on the original covariate scale.
#[pyclass(name = "Model", module = "pygrblmm")]
struct PyModel {
    artifact: FitArtifact,
    /// State on the fitting scale, kept for `evaluate`.
    state: ModelState,
    loss_path: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn beta0(&self) -> f64 {
        self.artifact.beta0
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.artifact.beta.clone()
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.artifact.sigma2
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        self.artifact.cov.clone()
    }

    #[getter]
    fn m_star(&self) -> usize {
        self.artifact.m_star
    }

    #[getter]
    fn selected(&self) -> Vec<String> {
        self.artifact.selected.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.artifact.warnings.clone()
    }

    /// Training loss `1/2 sum r^2` after each iteration.
    #[getter]
    fn loss_path(&self) -> Vec<f64> {
        self.loss_path.clone()
    }

    /// Random effects by cluster label.
    #[getter]
    fn random_effects(&self) -> HashMap<String, Vec<f64>> {
        self.artifact
            .clusters
            .iter()
            .map(|c| (c.cluster.clone(), c.effects.clone()))
            .collect()
    }

    /// Returns `(predictions, used_random_effects)`.
    fn predict(&self, clusters: Vec<String>, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let x = rows_to_matrix(&x, clusters.len())?;
        let p = self.artifact.predict(&clusters, &x).map_err(py_err)?;
        Ok((p.eta, p.used_random))
    }

    /// The same JSON document the command-line `fit` writes.
    fn to_json(&self) -> PyResult<String> {
        self.artifact.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(m_star={}, stop='{}', selected={:?})",
            self.artifact.m_star, self.artifact.stopping, self.artifact.selected
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, config, scale=false))]
fn fit(data: &PyDataset, config: &PyBoostConfig, scale: bool) -> PyResult<PyModel> {
    let factors = scale.then(|| data.inner.column_std());
    let fit_data = match &factors {
        Some(f) => data.inner.scale_columns(f).map_err(py_err)?,
        None => data.inner.clone(),
    };
    let result = grblmm::run(&fit_data, &config.inner).map_err(py_err)?;
    let artifact = FitArtifact::from_fit(&fit_data, &result, &config.inner, factors.as_deref(), None);
    Ok(PyModel {
        artifact,
        state: result.state,
        loss_path: result.trace.loss_path,
    })
}

/// Generating values of a simulated dataset.
#[pyclass(name = "Truth", module = "pygrblmm")]
struct PyTruth {
    inner: grblmm::sim::Truth,
}

#[pymethods]
impl PyTruth {
    #[getter]
    fn beta0(&self) -> f64 {
        self.inner.beta0
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta.clone()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma.clone()
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2
    }
}

/// Draws replication `rep` of a simulation design.
#[pyfunction]
#[pyo3(signature = (design="random_intercepts", n=50, ni=10, p=10, tau=0.4, sigma=0.4, seed=1, rep=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(design: &str, n: usize, ni: usize, p: usize, tau: f64, sigma: f64, seed: u64, rep: usize) -> PyResult<(PyDataset, PyTruth)> {
    let design: Design = design.parse().map_err(py_err)?;
    let cfg = SimulationConfig {
        design,
        n,
        n_i: ni,
        p,
        tau,
        sigma,
        replications: 1,
        seed,
    };
    let (inner, truth) = grblmm::sim::generate(&cfg, rep).map_err(py_err)?;
    Ok((PyDataset { inner }, PyTruth { inner: truth }))
}

/// Error metrics of an unscaled fit against the simulation truth.
#[pyfunction]
fn evaluate(truth: &PyTruth, model: &PyModel) -> PyResult<HashMap<String, f64>> {
    if model.artifact.scale.is_some() {
        return Err(PyValueError::new_err("evaluate needs a model fitted without scale=True"));
    }
    let m = grblmm::sim::evaluate(&truth.inner, &model.state).map_err(py_err)?;
    let mut out = HashMap::from([
        ("mse_beta".to_string(), m.mse_beta),
        ("mse_gamma".to_string(), m.mse_gamma),
        ("mse_sigma".to_string(), m.mse_sigma),
        ("fp_rate".to_string(), m.fp_rate),
        ("fn_rate".to_string(), m.fn_rate),
        ("m_star".to_string(), m.m_star as f64),
    ]);
    if let Some(v) = m.mse_tau {
        out.insert("mse_tau".into(), v);
    }
    if let Some(v) = m.mse_q {
        out.insert("mse_q".into(), v);
    }
    Ok(out)
}

#[pymodule]
fn pygrblmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", grblmm::VERSION)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBoostConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTruth>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
