use std::process::ExitCode;

use lanedrive::detectors::DetectorSpec;
use lanedrive::driving::{e2e_ld, psld_rollout, DrivingError};
use lanedrive::scenario::{MetricReport, Scenario};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::scenarios::slug;
use crate::{create_dir, internal, pool, scenarios, summarize, write_rows, write_run_record, write_text, CliError};

#[derive(Serialize)]
struct PsldValues<'a> {
    scenario: &'a str,
    detector: &'a str,
    mode: lanedrive::driving::PsldMode,
    horizon: usize,
    values: &'a [f64],
}

fn job(s: &Scenario, spec: &DetectorSpec, cfg: &RunConfig, digest: &str) -> Result<Vec<MetricReport>, CliError> {
    let det = spec.to_string();
    let e2e_params = format!("t_e={}", cfg.sim.e2e_horizon);
    let psld_params = format!(
        "t_p={};mode={}",
        cfg.sim.psld_horizon,
        serde_json::to_value(cfg.mode).map_err(internal)?.as_str().unwrap_or_default()
    );
    let failed = |metric: &str, params: &str, note: String| {
        MetricReport::failed(&s.id, &det, metric, params, &note).with_digest(digest)
    };
    let mut d = match spec.build(cfg.timeout()) {
        Ok(d) => d,
        Err(e) => {
            return Ok(vec![
                failed("e2e_ld", &e2e_params, e.to_string()),
                failed("psld", &psld_params, e.to_string()),
            ])
        }
    };
    let traces = cfg.output.join("traces");
    let stem = format!("{}__{}", slug(&s.id), slug(&det));
    let mut rows = Vec::new();
    match e2e_ld(s, d.as_mut(), &cfg.sim) {
        Ok((v, trace)) => {
            trace
                .write_json(&traces.join(format!("{stem}__e2e.json")))
                .map_err(internal)?;
            rows.push(MetricReport::ok(&s.id, &det, "e2e_ld", &e2e_params, v).with_digest(digest));
        }
        Err(DrivingError::EvaluationFailure { reason, trace }) => {
            trace
                .write_json(&traces.join(format!("{stem}__e2e.json")))
                .map_err(internal)?;
            rows.push(failed("e2e_ld", &e2e_params, reason));
        }
        Err(e) => rows.push(failed("e2e_ld", &e2e_params, e.to_string())),
    }
    match psld_rollout(s, d.as_mut(), &cfg.sim, cfg.mode) {
        Ok(values) if !values.is_empty() => {
            let rec = PsldValues {
                scenario: &s.id,
                detector: &det,
                mode: cfg.mode,
                horizon: cfg.sim.psld_horizon,
                values: &values,
            };
            let json = serde_json::to_string_pretty(&rec).map_err(internal)?;
            write_text(&traces.join(format!("{stem}__psld.json")), &json)?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            rows.push(MetricReport::ok(&s.id, &det, "psld", &psld_params, mean).with_digest(digest));
        }
        Ok(_) => rows.push(failed("psld", &psld_params, "no frames to evaluate".into())),
        Err(e) => rows.push(failed("psld", &psld_params, e.to_string())),
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let detectors = scenarios::parse_detectors(&cfg.detectors)?;
    let list = scenarios::load_all(&cfg.scenarios)?;
    write_run_record(cfg, "eval-driving")?;
    create_dir(&cfg.output.join("traces"))?;
    let digest = cfg.digest();
    let jobs: Vec<(&Scenario, &DetectorSpec)> = list.iter().flat_map(|s| detectors.iter().map(move |d| (s, d))).collect();
    let results: Vec<Result<Vec<MetricReport>, CliError>> =
        pool(cfg)?.install(|| jobs.par_iter().map(|(s, d)| job(s, d, cfg, &digest)).collect());
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let path = write_rows(cfg, "driving.csv", &rows)?;
    summarize(&rows);
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}
