use std::process::ExitCode;
use std::time::Duration;

use lanedrive::detectors::{DetectionContext, DetectorSpec, LazyFrame};
use lanedrive::geometry::PoseDelta;
use lanedrive::metrics::{bev_distance, f1, match_lines, Norm};
use lanedrive::scenario::{LaneAnnotation, MetricReport, Scenario};
use nalgebra::Point2;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{pool, scenarios, summarize, write_rows, write_run_record, CliError};

type Polyline = Vec<Point2<f64>>;

/// Detections for every annotated frame, `Err` per frame on detector errors.
pub fn detect_annotated<'s>(
    s: &'s Scenario,
    spec: &DetectorSpec,
    timeout: Duration,
) -> Result<Vec<(usize, &'s LaneAnnotation, Result<Vec<Polyline>, String>)>, String> {
    let mut det = spec.build(timeout).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (i, f) in s.frames.iter().enumerate() {
        let Some(gt) = &f.annotation else { continue };
        let frame = LazyFrame::new(&f.image, &s.homography, PoseDelta::ZERO);
        let ctx = DetectionContext {
            scenario: s,
            frame_index: i,
            pose_delta: PoseDelta::ZERO,
        };
        let r = det
            .detect(&frame, &ctx)
            .and_then(|d| d.validate(s.image_width, s.image_height).map(|_| d))
            .map(|d| d.polylines())
            .map_err(|e| e.to_string());
        out.push((i, gt, r));
    }
    Ok(out)
}

const METRICS: [&str; 6] = ["accuracy", "precision", "recall", "f1", "bev_l1", "bev_l2"];

/// Per-metric values for one frame; BEV entries are `None` when no
/// prediction overlaps any ground-truth line.
fn frame_metrics(
    preds: &[Polyline],
    gt: &LaneAnnotation,
    s: &Scenario,
    cfg: &RunConfig,
) -> Result<[Option<f64>; 6], String> {
    let m = match_lines(preds, gt, &cfg.metrics).map_err(|e| e.to_string())?;
    let n_gt = gt.lanes.len();
    let accuracy = (0..n_gt)
        .map(|g| m.accuracy.iter().map(|row| row[g]).fold(0.0, f64::max))
        .sum::<f64>()
        / n_gt as f64;
    let score = f1(preds, gt, &cfg.metrics).map_err(|e| e.to_string())?;
    // Each ground-truth line is paired with the prediction closest to it on
    // the ground plane.
    let mut bev = [Vec::new(), Vec::new()];
    for g in 0..n_gt {
        let gl = gt.lane_points(g);
        let dist = |p: &Polyline, norm| bev_distance(p, &gl, &s.homography, norm, cfg.sim.lookahead).ok();
        let best = preds
            .iter()
            .filter_map(|p| Some((p, dist(p, Norm::L1)?)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((p, l1)) = best {
            bev[0].push(l1);
            bev[1].extend(dist(p, Norm::L2));
        }
    }
    let mean = |v: &Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok([
        Some(accuracy),
        Some(score.precision),
        Some(score.recall),
        Some(score.f1),
        mean(&bev[0]),
        mean(&bev[1]),
    ])
}

struct JobRows {
    frames: Vec<MetricReport>,
    aggregate: Vec<MetricReport>,
}

fn job(s: &Scenario, spec: &DetectorSpec, cfg: &RunConfig, digest: &str) -> JobRows {
    let det = spec.to_string();
    let params = format!("alpha={};beta={}", cfg.metrics.alpha, cfg.metrics.beta);
    let row = |metric: &str, p: &str, v: Option<f64>, note: &str| match v {
        Some(v) => MetricReport::ok(&s.id, &det, metric, p, v).with_digest(digest),
        None => MetricReport::failed(&s.id, &det, metric, p, note).with_digest(digest),
    };
    let detections = match detect_annotated(s, spec, cfg.timeout()) {
        Ok(d) => d,
        Err(e) => {
            return JobRows {
                frames: Vec::new(),
                aggregate: METRICS.iter().map(|m| row(m, &params, None, &e)).collect(),
            }
        }
    };
    let mut frames = Vec::new();
    let mut sums = [(0.0, 0usize); 6];
    let mut errors = 0usize;
    for (i, gt, preds) in &detections {
        let p = format!("frame={i};{params}");
        let values = match preds {
            Ok(pr) => frame_metrics(pr, gt, s, cfg),
            Err(e) => Err(e.clone()),
        };
        match values {
            Ok(vals) => {
                for (k, v) in vals.iter().enumerate() {
                    if let Some(v) = v {
                        sums[k].0 += v;
                        sums[k].1 += 1;
                    }
                    frames.push(row(METRICS[k], &p, v.as_ref().copied(), "no overlapping line"));
                }
            }
            Err(e) => {
                errors += 1;
                frames.extend(METRICS.iter().map(|m| row(m, &p, None, &e)));
            }
        }
    }
    let note = if errors > 0 {
        format!("{errors} of {} frames failed", detections.len())
    } else {
        String::new()
    };
    let aggregate = METRICS
        .iter()
        .zip(sums)
        .map(|(m, (sum, n))| {
            if n == 0 {
                row(m, &params, None, if note.is_empty() { "no overlapping line in any frame" } else { &note })
            } else {
                row(m, &params, Some(sum / n as f64), "").with_note(note.clone())
            }
        })
        .collect();
    JobRows { frames, aggregate }
}

pub fn run(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let detectors = scenarios::parse_detectors(&cfg.detectors)?;
    let list = scenarios::load_all(&cfg.scenarios)?;
    write_run_record(cfg, "eval-conventional")?;
    let digest = cfg.digest();
    let jobs: Vec<(&Scenario, &DetectorSpec)> = list.iter().flat_map(|s| detectors.iter().map(move |d| (s, d))).collect();
    let results: Vec<JobRows> = pool(cfg)?.install(|| jobs.par_iter().map(|(s, d)| job(s, d, cfg, &digest)).collect());
    let frames: Vec<MetricReport> = results.iter().flat_map(|r| r.frames.iter().cloned()).collect();
    let aggregate: Vec<MetricReport> = results.into_iter().flat_map(|r| r.aggregate).collect();
    if !frames.is_empty() {
        write_rows(cfg, "conventional_frames.csv", &frames)?;
    }
    let path = write_rows(cfg, "conventional.csv", &aggregate)?;
    summarize(&aggregate);
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}
