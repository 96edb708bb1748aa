use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use grblmm::data::ingest_prediction_csv;
use grblmm::FitArtifact;

use crate::manifest::{fingerprint, unix_now, RunManifest};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// fit.json written by `grblmm fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// New rows; covariate columns must match the fitted model.
    #[arg(long)]
    pub data: PathBuf,
    /// Cluster column, if the model file does not record one.
    #[arg(long)]
    pub cluster_col: Option<String>,
    /// Response column used for the prediction error, if present.
    #[arg(long)]
    pub response_col: Option<String>,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn run(args: &PredictArgs) -> Result<(), CliError> {
    let started = unix_now();
    let model = FitArtifact::read(&args.fit)?;
    let roles = model.roles.as_ref();
    let cluster = args
        .cluster_col
        .clone()
        .or_else(|| roles.map(|r| r.cluster.clone()))
        .ok_or_else(|| CliError::arg("arg.cluster_col", "model has no cluster column; pass --cluster-col"))?;
    let response = args.response_col.clone().or_else(|| roles.map(|r| r.response.clone()));
    let frame = ingest_prediction_csv(&args.data, &cluster, response.as_deref(), &model.covariate_names)?;
    let pred = model.predict(&frame.clusters, &frame.x)?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    use std::io::Write;
    let with_y = frame.y.is_some();
    writeln!(
        w,
        "row,cluster,prediction,used_random_effects{}",
        if with_y { ",response" } else { "" }
    )?;
    for (i, (label, eta)) in frame.clusters.iter().zip(&pred.eta).enumerate() {
        write!(w, "{},{},{},{}", i + 1, csv_field(label), fmt(*eta), pred.used_random[i])?;
        if let Some(y) = &frame.y {
            write!(w, ",{}", if y[i].is_finite() { fmt(y[i]) } else { String::new() })?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let unseen = pred.used_random.iter().filter(|u| !**u).count();
    if unseen > 0 {
        log::info!("{unseen} rows belong to clusters not seen in training; random effects set to zero");
    }
    let mut mse = None;
    if let Some(y) = &frame.y {
        let pairs: Vec<(f64, f64)> = y.iter().zip(&pred.eta).filter(|(y, _)| y.is_finite()).map(|(a, b)| (*a, *b)).collect();
        if !pairs.is_empty() {
            let v = pairs.iter().map(|(y, e)| (y - e).powi(2)).sum::<f64>() / pairs.len() as f64;
            log::info!("mean squared prediction error over {} rows: {v:.6}", pairs.len());
            mse = Some(v);
        }
    }

    #[derive(Serialize)]
    struct ResolvedPredict<'a> {
        args: &'a PredictArgs,
        cluster_col: &'a str,
        rows: usize,
        unseen_cluster_rows: usize,
        mse: Option<f64>,
    }
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    RunManifest {
        command: "predict",
        version: env!("CARGO_PKG_VERSION"),
        core_version: grblmm::VERSION,
        config: ResolvedPredict {
            args,
            cluster_col: &cluster,
            rows: frame.clusters.len(),
            unseen_cluster_rows: unseen,
            mse,
        },
        inputs: vec![fingerprint(&args.fit)?, fingerprint(&args.data)?],
        seed: model.config.seed,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: vec![args.out.clone()],
    }
    .write(&PathBuf::from(manifest_path))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
