use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, generate, Design, Metrics, SimulationConfig, Truth};
use crate::data::LongitudinalDataset;
use crate::engine::{fit_path, BoostConfig, FitTrace, ModelState, StoppingRule};
use crate::error::{Error, Result};
use crate::stopping::{aic_curve, cv_risk, AicSelection, CvCurve, CvPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Stopped by cluster-wise cross-validation.
    Cv,
    /// Stopped by the corrected AIC.
    Aic,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cv => "cv",
            Method::Aic => "aic",
        }
    }
}

/// One full path with both stopping rules evaluated on it.
#[derive(Debug, Clone)]
pub struct BothFits {
    pub trace: FitTrace,
    pub cv: CvCurve,
    pub aic: AicSelection,
    pub cv_state: ModelState,
    pub aic_state: ModelState,
}

/// Fits once with hat tracking and stops it both ways. Same result as two
/// separate `run` calls with cv and aic stopping, at the cost of one path.
pub fn fit_both(data: &LongitudinalDataset, config: &BoostConfig, folds: usize) -> Result<BothFits> {
    let config = BoostConfig {
        stopping: StoppingRule::Cv { folds },
        ..config.clone()
    };
    config.validate_for(data.n_clusters())?;
    let plan = CvPlan::new(data.n_clusters(), folds, config.seed)?;
    let cv = cv_risk(data, &config, &plan)?;
    let path = fit_path(data, &config, true)?;
    let aic = aic_curve(
        path.trace.df_path.as_deref().unwrap_or_default(),
        &path.trace.sigma2_path,
        data.n_obs(),
    )?;
    let at = |m: usize| {
        path.trace
            .state_at(m)
            .ok_or_else(|| Error::Numerical(format!("stopping iteration {m} outside the trace")))
    };
    let cv_state = at(cv.m_star)?;
    let aic_state = at(aic.m_star)?;
    Ok(BothFits {
        trace: path.trace,
        cv,
        aic,
        cv_state,
        aic_state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub design: Design,
    pub p: usize,
    pub tau: f64,
}

/// Cartesian grid; empty axes fall back to the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub design: Vec<Design>,
    pub p: Vec<usize>,
    pub tau: Vec<f64>,
}

impl GridSpec {
    pub fn cells(&self, base: &SimulationConfig) -> Vec<GridCell> {
        let designs = if self.design.is_empty() { vec![base.design] } else { self.design.clone() };
        let ps = if self.p.is_empty() { vec![base.p] } else { self.p.clone() };
        let taus = if self.tau.is_empty() { vec![base.tau] } else { self.tau.clone() };
        let mut cells = Vec::new();
        for &design in &designs {
            for &tau in &taus {
                for &p in &ps {
                    cells.push(GridCell { design, p, tau });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub design: Design,
    pub n: usize,
    pub n_i: usize,
    pub p: usize,
    pub tau: f64,
    pub sigma: f64,
    pub replication: usize,
    pub method: Method,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub design: Design,
    pub p: usize,
    pub tau: f64,
    pub method: Method,
    /// Successful replications averaged here.
    pub replications: usize,
    pub mse_beta: f64,
    pub mse_gamma: f64,
    pub mse_sigma: f64,
    pub mse_tau: Option<f64>,
    pub mse_q: Option<f64>,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub m_star: f64,
    pub all_cov_psd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: GridCell,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rows: Vec<ReplicationRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<CellFailure>,
}

impl SimulationReport {
    pub fn aggregate(&self, cell: &GridCell, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.design == cell.design && a.p == cell.p && a.tau == cell.tau && a.method == method)
    }

    pub fn rows_for(&self, cell: &GridCell, method: Method) -> impl Iterator<Item = &ReplicationRow> + '_ {
        let cell = *cell;
        self.rows
            .iter()
            .filter(move |r| r.design == cell.design && r.p == cell.p && r.tau == cell.tau && r.method == method)
    }
}

fn replicate(cfg: &SimulationConfig, rep: usize, boost: &BoostConfig, folds: usize) -> Result<(Truth, BothFits)> {
    let (data, truth) = generate(cfg, rep)?;
    let boost = BoostConfig {
        seed: cfg.seed.wrapping_add(rep as u64),
        ..boost.clone()
    };
    let fits = fit_both(&data, &boost, folds)?;
    Ok((truth, fits))
}

/// Runs every replication of every cell with both stopping rules. A failed
/// replication is recorded and the rest of the grid continues. Results are
/// ordered by cell, replication, method regardless of scheduling.
pub fn bench_grid(base: &SimulationConfig, cells: &[GridCell], boost: &BoostConfig, folds: usize) -> Result<SimulationReport> {
    let mut configs = Vec::with_capacity(cells.len());
    for cell in cells {
        let cfg = SimulationConfig {
            design: cell.design,
            p: cell.p,
            tau: cell.tau,
            ..base.clone()
        };
        cfg.validate().map_err(|e| {
            Error::InvalidConfig(format!(
                "grid cell design={} p={} tau={}: {e}",
                cell.design.name(),
                cell.p,
                cell.tau
            ))
        })?;
        configs.push(cfg);
    }
    boost.validate()?;

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..base.replications).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<Result<Vec<ReplicationRow>>> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let cfg = &configs[c];
            let (truth, fits) = replicate(cfg, rep, boost, folds)?;
            let mut rows = Vec::with_capacity(2);
            for (method, state) in [(Method::Cv, &fits.cv_state), (Method::Aic, &fits.aic_state)] {
                rows.push(ReplicationRow {
                    design: cfg.design,
                    n: cfg.n,
                    n_i: cfg.n_i,
                    p: cfg.p,
                    tau: cfg.tau,
                    sigma: cfg.sigma,
                    replication: rep,
                    method,
                    metrics: evaluate(&truth, state)?,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut report = SimulationReport::default();
    for (&(c, rep), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => {
                log::warn!("replication {rep} of cell {:?} failed: {e}", cells[c]);
                report.failures.push(CellFailure {
                    cell: cells[c],
                    replication: rep,
                    message: e.to_string(),
                });
            }
        }
    }
    for cell in cells {
        for method in [Method::Cv, Method::Aic] {
            if let Some(agg) = aggregate(cell, method, report.rows_for(cell, method)) {
                if agg.fn_rate > 0.0 {
                    log::warn!(
                        "false negatives occurred in cell {:?} ({}): mean rate {}",
                        cell,
                        method.name(),
                        agg.fn_rate
                    );
                }
                report.aggregates.push(agg);
            }
        }
    }
    Ok(report)
}

fn aggregate<'a>(cell: &GridCell, method: Method, rows: impl Iterator<Item = &'a ReplicationRow>) -> Option<Aggregate> {
    let rows: Vec<&ReplicationRow> = rows.collect();
    if rows.is_empty() {
        return None;
    }
    let k = rows.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / k;
    let mean_opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Option<Vec<f64>> = rows.iter().map(|r| f(&r.metrics)).collect();
        v.map(|v| v.iter().sum::<f64>() / k)
    };
    Some(Aggregate {
        design: cell.design,
        p: cell.p,
        tau: cell.tau,
        method,
        replications: rows.len(),
        mse_beta: mean(&|m| m.mse_beta),
        mse_gamma: mean(&|m| m.mse_gamma),
        mse_sigma: mean(&|m| m.mse_sigma),
        mse_tau: mean_opt(&|m| m.mse_tau),
        mse_q: mean_opt(&|m| m.mse_q),
        fp_rate: mean(&|m| m.fp_rate),
        fn_rate: mean(&|m| m.fn_rate),
        m_star: mean(&|m| m.m_star as f64),
        all_cov_psd: rows.iter().all(|r| r.metrics.cov_psd),
    })
}

/// Seventeen significant digits, so values round-trip exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

const REPORT_HEADER: [&str; 17] = [
    "design", "n", "n_i", "p", "tau", "sigma", "replication", "method", "m_star", "mse_beta", "mse_gamma",
    "mse_sigma", "mse_tau", "mse_q", "fp_rate", "fn_rate", "cov_psd",
];

/// One row per replication and method.
pub fn write_report_csv(report: &SimulationReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        let m = &r.metrics;
        w.write_record([
            r.design.name().to_string(),
            r.n.to_string(),
            r.n_i.to_string(),
            r.p.to_string(),
            fmt_f64(r.tau),
            fmt_f64(r.sigma),
            r.replication.to_string(),
            r.method.name().to_string(),
            m.m_star.to_string(),
            fmt_f64(m.mse_beta),
            fmt_f64(m.mse_gamma),
            fmt_f64(m.mse_sigma),
            fmt_opt(m.mse_tau),
            fmt_opt(m.mse_q),
            fmt_f64(m.fp_rate),
            fmt_f64(m.fn_rate),
            m.cov_psd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell aggregates plus recorded failures.
pub fn write_aggregate_json(report: &SimulationReport, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a> {
        aggregates: &'a [Aggregate],
        failures: &'a [CellFailure],
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(
        &mut f,
        &Out {
            aggregates: &report.aggregates,
            failures: &report.failures,
        },
    )
    .map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
