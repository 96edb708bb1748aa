use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use grblmm::sim::{bench_grid, write_aggregate_json, write_report_csv, Design, GridSpec, SimulationConfig};
use grblmm::BoostConfig;

use crate::manifest::{ensure_dir, fingerprint, unix_now, RunManifest};
use crate::{CliError, EXIT_NUMERICAL};

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// random_intercepts or random_slopes.
    #[arg(long, default_value = "random_intercepts")]
    pub design: String,
    #[arg(long, default_value_t = 0.4)]
    pub tau: f64,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// JSON grid (file path or inline), e.g. {"tau":[0.4,1.6],"p":[10,500]}.
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of clusters.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Observations per cluster.
    #[arg(long, default_value_t = 10)]
    pub ni: usize,
    #[arg(long, default_value_t = 0.4)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub mstop: usize,
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    /// Cross-validation folds for the cv variant.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output directory for report.csv, aggregate.json and manifest.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn read_grid(spec: &str) -> Result<(GridSpec, Option<PathBuf>), CliError> {
    let (text, path) = if spec.trim_start().starts_with('{') {
        (spec.to_string(), None)
    } else {
        let path = PathBuf::from(spec);
        (std::fs::read_to_string(&path)?, Some(path))
    };
    let grid = serde_json::from_str(&text).map_err(|e| CliError::arg("arg.grid", format!("invalid grid: {e}")))?;
    Ok((grid, path))
}

#[derive(Serialize)]
struct ResolvedSim<'a> {
    args: &'a SimulateArgs,
    simulation: &'a SimulationConfig,
    grid: &'a GridSpec,
    boost: &'a BoostConfig,
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let started = unix_now();
    let design: Design = args.design.parse()?;
    let base = SimulationConfig {
        design,
        n: args.n,
        n_i: args.ni,
        p: args.p,
        tau: args.tau,
        sigma: args.sigma,
        replications: args.reps,
        seed: args.seed,
    };
    let (grid, grid_path) = match &args.grid {
        Some(g) => read_grid(g)?,
        None => (GridSpec::default(), None),
    };
    let cells = grid.cells(&base);
    let boost = BoostConfig::default().with_nu(args.nu).with_m_stop(args.mstop);
    log::info!("{} cells x {} replications", cells.len(), args.reps);
    let report = bench_grid(&base, &cells, &boost, args.k)?;

    ensure_dir(&args.out)?;
    let csv_path = args.out.join("report.csv");
    let json_path = args.out.join("aggregate.json");
    write_report_csv(&report, &csv_path)?;
    write_aggregate_json(&report, &json_path)?;
    for a in &report.aggregates {
        log::info!(
            "{} p={} tau={} {}: mse_beta={:.4} fp={:.3} fn={:.3} m*={:.1}",
            a.design.name(),
            a.p,
            a.tau,
            a.method.name(),
            a.mse_beta,
            a.fp_rate,
            a.fn_rate,
            a.m_star
        );
    }

    let inputs = match &grid_path {
        Some(p) => vec![fingerprint(p)?],
        None => Vec::new(),
    };
    RunManifest {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        core_version: grblmm::VERSION,
        config: ResolvedSim {
            args,
            simulation: &base,
            grid: &grid,
            boost: &boost,
        },
        inputs,
        seed: args.seed,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: vec![csv_path, json_path],
    }
    .write(&args.out.join("manifest.json"))?;

    if report.rows.is_empty() && !report.failures.is_empty() {
        return Err(CliError {
            code: "numerical.all_replications_failed".into(),
            message: format!("every replication failed; first: {}", report.failures[0].message),
            exit: EXIT_NUMERICAL,
        });
    }
    if !report.failures.is_empty() {
        log::warn!("{} replications failed; see aggregate.json", report.failures.len());
    }
    Ok(())
}
