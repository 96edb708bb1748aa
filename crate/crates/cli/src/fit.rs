use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use grblmm::artifact::write_trace_csv;
use grblmm::data::{ingest_csv, ColumnRoles, IngestOptions};
use grblmm::{run as fit_model, BoostConfig, FitArtifact, StoppingRule};

use crate::manifest::{ensure_dir, fingerprint, unix_now, RunManifest};
use crate::CliError;

/// AIC keeps an `N x N` hat matrix; refuse silently huge allocations.
pub const AIC_MAX_OBS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stop {
    Cv,
    Aic,
    None,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cluster_col: String,
    #[arg(long)]
    pub response_col: String,
    /// Comma-separated candidate covariates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub fixed_cols: Vec<String>,
    /// Random effects: `intercept` and/or `slope:<column>`, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "intercept")]
    pub random: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    #[arg(long, default_value_t = 1000)]
    pub mstop: usize,
    #[arg(long, value_enum, default_value_t = Stop::Cv)]
    pub stop: Stop,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standardize covariates to unit variance; coefficients are reported
    /// on the original scale.
    #[arg(long)]
    pub scale: bool,
    /// Allow AIC stopping above the observation guard.
    #[arg(long)]
    pub force_aic: bool,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    pub drop_incomplete: bool,
    /// Output directory for fit.json, trace.csv and manifest.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ResolvedFit<'a> {
    args: &'a FitArgs,
    boost: &'a BoostConfig,
    rows_used: usize,
    rows_rejected: &'a [usize],
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let started = unix_now();
    let stopping = match args.stop {
        Stop::Cv => StoppingRule::Cv { folds: args.k },
        Stop::Aic => StoppingRule::Aic,
        Stop::None => StoppingRule::None,
    };
    let config = BoostConfig::default()
        .with_nu(args.nu)
        .with_m_stop(args.mstop)
        .with_stopping(stopping)
        .with_seed(args.seed);
    config.validate()?;

    let roles = ColumnRoles {
        cluster: args.cluster_col.clone(),
        response: args.response_col.clone(),
        fixed: args.fixed_cols.clone(),
        random: args.random.clone(),
    };
    let input = fingerprint(&args.data)?;
    let (data, report) = ingest_csv(
        &args.data,
        &roles,
        IngestOptions {
            drop_incomplete: args.drop_incomplete,
        },
    )?;
    if !report.rejected_rows.is_empty() {
        log::warn!("dropped {} incomplete rows", report.rejected_rows.len());
    }
    if args.stop == Stop::Aic && data.n_obs() > AIC_MAX_OBS && !args.force_aic {
        return Err(CliError::arg(
            "arg.aic_guard",
            format!(
                "AIC stopping needs an N x N hat matrix; N = {} exceeds {AIC_MAX_OBS}; pass --force-aic or use --stop cv",
                data.n_obs()
            ),
        ));
    }

    let factors = args.scale.then(|| data.column_std());
    let fit_data = match &factors {
        Some(f) => data.scale_columns(f)?,
        None => data.clone(),
    };
    log::info!(
        "fitting {} observations in {} clusters, {} covariates, stopping by {}",
        fit_data.n_obs(),
        fit_data.n_clusters(),
        fit_data.n_fixed(),
        stopping.name()
    );
    let fit = fit_model(&fit_data, &config)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    log::info!("m* = {}", fit.m_star);

    ensure_dir(&args.out)?;
    let fit_path = args.out.join("fit.json");
    let trace_path = args.out.join("trace.csv");
    FitArtifact::from_fit(&fit_data, &fit, &config, factors.as_deref(), Some(roles)).write(&fit_path)?;
    write_trace_csv(&fit_data, &fit, factors.as_deref(), &trace_path)?;

    RunManifest {
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        core_version: grblmm::VERSION,
        config: ResolvedFit {
            args,
            boost: &config,
            rows_used: data.n_obs(),
            rows_rejected: &report.rejected_rows,
        },
        inputs: vec![input],
        seed: args.seed,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: vec![fit_path, trace_path],
    }
    .write(&args.out.join("manifest.json"))
}
