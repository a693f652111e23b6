use std::process::ExitCode;

use lanedrive::detectors::DetectorSpec;
use lanedrive::metrics::{sweep_params, EvalFrame, SweepRow};
use lanedrive::scenario::Scenario;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::conventional::detect_annotated;
use crate::{internal, plot, pool, scenarios, write_run_record, write_text, CliError};

#[derive(Serialize)]
struct Row<'a> {
    detector: &'a str,
    alpha: f64,
    beta: f64,
    accuracy: String,
    f1: String,
    frames: usize,
    config_digest: &'a str,
}

pub fn run(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let detectors = scenarios::parse_detectors(&cfg.detectors)?;
    let list = scenarios::load_all(&cfg.scenarios)?;
    if cfg.alphas.is_empty() || cfg.betas.is_empty() {
        return Err(CliError::Usage("alphas and betas must be non-empty".into()));
    }
    write_run_record(cfg, "sweep")?;
    let digest = cfg.digest();
    let jobs: Vec<(&Scenario, &DetectorSpec)> = detectors.iter().flat_map(|d| list.iter().map(move |s| (s, d))).collect();
    let per_job: Vec<Result<Vec<EvalFrame>, String>> = pool(cfg)?.install(|| {
        jobs.par_iter()
            .map(|(s, d)| {
                let det = detect_annotated(s, d, cfg.timeout()).map_err(|e| format!("{} / {d}: {e}", s.id))?;
                det.into_iter()
                    .map(|(i, gt, preds)| {
                        Ok(EvalFrame {
                            preds: preds.map_err(|e| format!("{} / {d} frame {i}: {e}", s.id))?,
                            gt: gt.clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut grouped: Vec<(String, Vec<EvalFrame>)> = detectors.iter().map(|d| (d.to_string(), Vec::new())).collect();
    for (k, r) in per_job.into_iter().enumerate() {
        let frames = r.map_err(|e| CliError::Internal(format!("detection failed: {e}")))?;
        grouped[k / list.len()].1.extend(frames);
    }
    let path = cfg.output.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(internal)?;
    let mut acc_series = Vec::new();
    let mut f1_series = Vec::new();
    for (det, frames) in &grouped {
        if frames.is_empty() {
            return Err(CliError::Usage(format!("{det}: no annotated frames in the selected scenarios")));
        }
        let rows: Vec<SweepRow> = sweep_params(frames, &cfg.alphas, &cfg.betas).map_err(internal)?;
        for r in &rows {
            w.serialize(Row {
                detector: det,
                alpha: r.alpha,
                beta: r.beta,
                accuracy: format!("{:.6}", r.accuracy),
                f1: format!("{:.6}", r.f1),
                frames: frames.len(),
                config_digest: &digest,
            })
            .map_err(internal)?;
        }
        let mut acc: Vec<(f64, f64)> = rows.iter().map(|r| (r.alpha, r.accuracy)).collect();
        acc.dedup();
        acc_series.push((det.clone(), acc));
        let nearest = rows
            .iter()
            .map(|r| r.alpha)
            .min_by(|a, b| (a - cfg.metrics.alpha).abs().total_cmp(&(b - cfg.metrics.alpha).abs()))
            .expect("non-empty grid");
        f1_series.push((
            det.clone(),
            rows.iter().filter(|r| r.alpha == nearest).map(|r| (r.beta, r.f1)).collect(),
        ));
    }
    w.flush().map_err(internal)?;
    write_text(
        &cfg.output.join("sweep_accuracy.svg"),
        &plot::lines(&acc_series, "accuracy by alpha", "alpha (px)", "accuracy"),
    )?;
    write_text(
        &cfg.output.join("sweep_f1.svg"),
        &plot::lines(&f1_series, &format!("F1 by beta at alpha {}", cfg.metrics.alpha), "beta", "F1"),
    )?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}
