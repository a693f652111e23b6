use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use lanedrive::scenario::{read_report, Status};
use lanedrive::stats::{pearson, CorrelationResult, StatsError};
use serde::Serialize;

use crate::config::RunConfig;
use crate::scenarios::slug;
use crate::{create_dir, internal, plot, write_run_record, write_text, CliError};

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    /// Report CSVs; rows are joined on (scenario, detector).
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Metrics to correlate against `--y`; defaults to every other metric.
    #[arg(long = "x")]
    x: Vec<String>,
    #[arg(long = "y", default_value = "e2e_ld")]
    y: String,
}

type Key = (String, String);

#[derive(Serialize)]
struct Row<'a> {
    x: &'a str,
    y: &'a str,
    n: usize,
    r: String,
    p: String,
    label: String,
    config_digest: &'a str,
}

/// Metric values keyed by (scenario, detector), successful rows only.
fn pivot(args: &CorrelateArgs) -> Result<BTreeMap<String, BTreeMap<Key, f64>>, CliError> {
    let mut table: BTreeMap<String, BTreeMap<Key, f64>> = BTreeMap::new();
    for p in &args.reports {
        if !p.exists() {
            return Err(CliError::Usage(format!("report not found: {}", p.display())));
        }
        let rows = read_report(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        for r in rows {
            let (Status::Ok, Some(v)) = (r.status, r.value) else { continue };
            let key = (r.scenario.clone(), r.detector.clone());
            if table.entry(r.metric.clone()).or_default().insert(key, v).is_some() {
                return Err(CliError::Usage(format!(
                    "{}: metric {} appears twice for {} / {}",
                    p.display(),
                    r.metric,
                    r.scenario,
                    r.detector
                )));
            }
        }
    }
    Ok(table)
}

pub fn run(cfg: &RunConfig, args: &CorrelateArgs) -> Result<ExitCode, CliError> {
    let table = pivot(args)?;
    let ys = table
        .get(&args.y)
        .ok_or_else(|| CliError::Usage(format!("no successful rows for metric {:?}", args.y)))?;
    let xs: Vec<String> = if args.x.is_empty() {
        table.keys().filter(|m| **m != args.y).cloned().collect()
    } else {
        args.x.clone()
    };
    if xs.is_empty() {
        return Err(CliError::Usage("nothing to correlate against".into()));
    }
    write_run_record(cfg, "correlate")?;
    create_dir(&cfg.output)?;
    let digest = cfg.digest();
    let mut out = Vec::new();
    for x in &xs {
        let col = table
            .get(x)
            .ok_or_else(|| CliError::Usage(format!("no successful rows for metric {x:?}")))?;
        let keys: BTreeSet<&Key> = col.keys().filter(|k| ys.contains_key(*k)).collect();
        let pts: Vec<(f64, f64)> = keys.iter().map(|k| (col[*k], ys[*k])).collect();
        let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        let c: CorrelationResult = pearson(&a, &b).map_err(|e| match e {
            StatsError::InsufficientData(n) => {
                CliError::Usage(format!("{x} vs {}: insufficient data, {n} joined rows (need 3)", args.y))
            }
            other => CliError::Usage(format!("{x} vs {}: {other}", args.y)),
        })?;
        let title = format!("{x} vs {}: r = {:.3} {}", args.y, c.r, c.label);
        let svg = plot::scatter(&pts, &title, x, &args.y);
        write_text(&cfg.output.join(format!("scatter_{}_vs_{}.svg", slug(x), slug(&args.y))), &svg)?;
        eprintln!("{x} vs {}: n = {}, r = {:.4}, p = {:.3e} {}", args.y, c.n, c.r, c.p, c.label);
        out.push((x.clone(), c));
    }
    let path = cfg.output.join("correlation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(internal)?;
    for (x, c) in &out {
        w.serialize(Row {
            x,
            y: &args.y,
            n: c.n,
            r: format!("{:.6}", c.r),
            p: format!("{:.6e}", c.p),
            label: c.label.to_string(),
            config_digest: &digest,
        })
        .map_err(internal)?;
    }
    w.flush().map_err(internal)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}
