//! TuSimple accuracy and F1, parameter sweeps and BEV line distances.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MetricParams;
use crate::geometry::{project_lanes_to_bev, GeometryError, GroundHomography};
use crate::scenario::{LaneAnnotation, SENTINEL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground-truth lane {0} has no annotated rows")]
    UndefinedAccuracy(usize),
    #[error("frame has no ground-truth lanes")]
    NoGroundTruth,
    #[error("sweep grids must be non-empty")]
    EmptyGrid,
    #[error("lines overlap on fewer than 2 sample positions within range")]
    InsufficientOverlap,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Samples an image polyline (points `(x, row)`) at `rows` by linear
/// interpolation; rows outside its vertical span are `None`.
pub fn sample_at_rows(pred: &[Point2<f64>], rows: &[u32]) -> Vec<Option<f64>> {
    let mut pts: Vec<Point2<f64>> = pred.to_vec();
    pts.sort_by(|a, b| a.y.total_cmp(&b.y));
    rows.iter()
        .map(|&r| {
            let r = f64::from(r);
            let k = pts.partition_point(|p| p.y < r);
            if k < pts.len() && pts[k].y == r {
                return Some(pts[k].x);
            }
            if k == 0 || k >= pts.len() {
                return None;
            }
            let a = pts[k - 1];
            let b = pts[k];
            let t = (r - a.y) / (b.y - a.y);
            Some(a.x + t * (b.x - a.x))
        })
        .collect()
}

/// Fraction of annotated rows where the prediction lies within `alpha`
/// pixels of the ground truth.
pub fn line_accuracy(
    pred: &[Point2<f64>],
    gt: &[f64],
    h_samples: &[u32],
    alpha: f64,
) -> Result<f64, MetricError> {
    let sampled = sample_at_rows(pred, h_samples);
    accuracy_from_samples(&sampled, gt, alpha).ok_or(MetricError::UndefinedAccuracy(0))
}

fn accuracy_from_samples(sampled: &[Option<f64>], gt: &[f64], alpha: f64) -> Option<f64> {
    let mut rows = 0usize;
    let mut hits = 0usize;
    for (s, g) in sampled.iter().zip(gt) {
        if *g == SENTINEL {
            continue;
        }
        rows += 1;
        if let Some(x) = s {
            if (x - g).abs() <= alpha {
                hits += 1;
            }
        }
    }
    (rows > 0).then(|| hits as f64 / rows as f64)
}

/// Line-pair accuracies and the resulting assignments for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `accuracy[p][g]` for predicted line `p` against ground-truth line `g`.
    pub accuracy: Vec<Vec<f64>>,
    /// Best ground-truth line of each prediction.
    pub best_gt: Vec<Option<usize>>,
    /// One-to-one pairing maximizing the number of pairs at or above `beta`.
    pub assignment: Vec<Option<usize>>,
    pub true_positive: Vec<bool>,
}

fn pair_accuracies(
    preds: &[Vec<Point2<f64>>],
    gt: &LaneAnnotation,
    alpha: f64,
) -> Result<Vec<Vec<f64>>, MetricError> {
    if gt.lanes.is_empty() {
        return Err(MetricError::NoGroundTruth);
    }
    if let Some(g) = gt.lanes.iter().position(|l| l.iter().all(|x| *x == SENTINEL)) {
        return Err(MetricError::UndefinedAccuracy(g));
    }
    Ok(preds
        .iter()
        .map(|p| {
            let s = sample_at_rows(p, &gt.h_samples);
            gt.lanes
                .iter()
                .map(|g| accuracy_from_samples(&s, g, alpha).expect("checked above"))
                .collect()
        })
        .collect())
}

/// Maximum-cardinality matching on the pairs admitted by `admit`, by
/// augmenting paths. Returns the gt index matched to each prediction.
fn max_matching(n_pred: usize, n_gt: usize, admit: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    fn augment(
        p: usize,
        n_gt: usize,
        admit: &dyn Fn(usize, usize) -> bool,
        seen: &mut [bool],
        gt_of: &mut [Option<usize>],
        pred_of: &mut [Option<usize>],
    ) -> bool {
        for g in 0..n_gt {
            if !admit(p, g) || seen[g] {
                continue;
            }
            seen[g] = true;
            let free = match pred_of[g] {
                None => true,
                Some(q) => augment(q, n_gt, admit, seen, gt_of, pred_of),
            };
            if free {
                pred_of[g] = Some(p);
                gt_of[p] = Some(g);
                return true;
            }
        }
        false
    }
    let mut gt_of = vec![None; n_pred];
    let mut pred_of = vec![None; n_gt];
    for p in 0..n_pred {
        let mut seen = vec![false; n_gt];
        augment(p, n_gt, &admit, &mut seen, &mut gt_of, &mut pred_of);
    }
    gt_of
}

pub fn match_lines(
    preds: &[Vec<Point2<f64>>],
    gt: &LaneAnnotation,
    params: &MetricParams,
) -> Result<MatchResult, MetricError> {
    let accuracy = pair_accuracies(preds, gt, params.alpha)?;
    Ok(match_from_accuracies(accuracy, gt.lanes.len(), params.beta))
}

fn match_from_accuracies(accuracy: Vec<Vec<f64>>, n_gt: usize, beta: f64) -> MatchResult {
    let best_gt = accuracy
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (g, a)| match best {
                    Some((_, b)) if b >= *a => best,
                    _ => Some((g, *a)),
                })
                .map(|b| b.0)
        })
        .collect();
    let assignment = max_matching(accuracy.len(), n_gt, |p, g| accuracy[p][g] >= beta);
    let true_positive = assignment.iter().map(Option::is_some).collect();
    MatchResult {
        accuracy,
        best_gt,
        assignment,
        true_positive,
    }
}

/// Mean over ground-truth lines of the accuracy of each line's best
/// prediction (0 when there is none).
pub fn frame_accuracy(
    preds: &[Vec<Point2<f64>>],
    gt: &LaneAnnotation,
    alpha: f64,
) -> Result<f64, MetricError> {
    let acc = pair_accuracies(preds, gt, alpha)?;
    Ok(frame_accuracy_from(&acc, gt.lanes.len()))
}

fn frame_accuracy_from(acc: &[Vec<f64>], n_gt: usize) -> f64 {
    let total: f64 = (0..n_gt)
        .map(|g| acc.iter().map(|row| row[g]).fold(0.0, f64::max))
        .sum();
    total / n_gt as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
}

impl F1Score {
    fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
        let recall = tp as f64 / n_gt as f64;
        let f1 = if precision == 0.0 || recall == 0.0 {
            0.0
        } else {
            2.0 / (1.0 / precision + 1.0 / recall)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
        }
    }
}

/// Precision, recall and F1 where a true positive is a one-to-one pair with
/// accuracy at or above `beta`.
pub fn f1(
    preds: &[Vec<Point2<f64>>],
    gt: &LaneAnnotation,
    params: &MetricParams,
) -> Result<F1Score, MetricError> {
    let m = match_lines(preds, gt, params)?;
    let tp = m.true_positive.iter().filter(|t| **t).count();
    Ok(F1Score::from_counts(tp, preds.len(), gt.lanes.len()))
}

/// Detections and ground truth for one annotated frame.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub preds: Vec<Vec<Point2<f64>>>,
    pub gt: LaneAnnotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// α ∈ {5, 10, …, 50} pixels.
pub fn default_alphas() -> Vec<f64> {
    (1..=10).map(|k| 5.0 * k as f64).collect()
}

/// β ∈ {0.50, 0.55, …, 0.90}.
pub fn default_betas() -> Vec<f64> {
    (0..9).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Mean frame accuracy and mean frame F1 for every (alpha, beta) pair,
/// sorted by alpha then beta.
pub fn sweep_params(
    frames: &[EvalFrame],
    alphas: &[f64],
    betas: &[f64],
) -> Result<Vec<SweepRow>, MetricError> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(MetricError::EmptyGrid);
    }
    let mut a_sorted = alphas.to_vec();
    a_sorted.sort_by(f64::total_cmp);
    let mut b_sorted = betas.to_vec();
    b_sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(a_sorted.len() * b_sorted.len());
    for &alpha in &a_sorted {
        let accs = frames
            .iter()
            .map(|f| pair_accuracies(&f.preds, &f.gt, alpha))
            .collect::<Result<Vec<_>, _>>()?;
        let n = frames.len().max(1) as f64;
        let accuracy = accs
            .iter()
            .zip(frames)
            .map(|(a, f)| frame_accuracy_from(a, f.gt.lanes.len()))
            .sum::<f64>()
            / n;
        for &beta in &b_sorted {
            let f1_mean = accs
                .iter()
                .zip(frames)
                .map(|(a, f)| {
                    let m = match_from_accuracies(a.clone(), f.gt.lanes.len(), beta);
                    let tp = m.true_positive.iter().filter(|t| **t).count();
                    F1Score::from_counts(tp, f.preds.len(), f.gt.lanes.len()).f1
                })
                .sum::<f64>()
                / n;
            rows.push(SweepRow {
                alpha,
                beta,
                accuracy,
                f1: f1_mean,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

/// Distance between two ground-plane polylines sampled at whole-meter x
/// over their common extent within `[0, max_range]`.
pub fn bev_distance_ground(
    pred: &[Point2<f64>],
    gt: &[Point2<f64>],
    norm: Norm,
    max_range: f64,
) -> Result<f64, MetricError> {
    let sort = |l: &[Point2<f64>]| {
        let mut v: Vec<Point2<f64>> = l.iter().copied().filter(|p| p.x.is_finite()).collect();
        v.sort_by(|a, b| a.x.total_cmp(&b.x));
        v.dedup_by(|a, b| a.x == b.x);
        v
    };
    let p = sort(pred);
    let g = sort(gt);
    if p.len() < 2 || g.len() < 2 {
        return Err(MetricError::InsufficientOverlap);
    }
    let lo = p[0].x.max(g[0].x).max(0.0).ceil();
    let hi = p[p.len() - 1].x.min(g[g.len() - 1].x).min(max_range).floor();
    if hi - lo < 1.0 {
        return Err(MetricError::InsufficientOverlap);
    }
    let interp = |l: &[Point2<f64>], x: f64| {
        let k = l.partition_point(|q| q.x <= x).clamp(1, l.len() - 1);
        let (a, b) = (l[k - 1], l[k]);
        a.y + (x - a.x) / (b.x - a.x) * (b.y - a.y)
    };
    let n = (hi - lo) as usize + 1;
    let mut acc = 0.0;
    for k in 0..n {
        let x = lo + k as f64;
        let d = interp(&p, x) - interp(&g, x);
        acc += match norm {
            Norm::L1 => d.abs(),
            Norm::L2 => d * d,
        };
    }
    let mean = acc / n as f64;
    Ok(match norm {
        Norm::L1 => mean,
        Norm::L2 => mean.sqrt(),
    })
}

/// BEV distance between two image-space lane polylines.
pub fn bev_distance(
    pred: &[Point2<f64>],
    gt: &[Point2<f64>],
    h: &GroundHomography,
    norm: Norm,
    max_range: f64,
) -> Result<f64, MetricError> {
    let p = project_lanes_to_bev(&[pred.to_vec()], h)?;
    let g = project_lanes_to_bev(&[gt.to_vec()], h)?;
    bev_distance_ground(&p.lanes[0], &g.lanes[0], norm, max_range)
}
