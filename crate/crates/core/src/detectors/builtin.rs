use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{DetectionContext, DetectionResult, Detector, DetectorError, LazyFrame};
use crate::geometry::{GroundHomography, PoseDelta};
use crate::scenario::Scenario;

/// Farthest ground point used when building lane lines, meters.
pub const MAX_RANGE: f64 = 60.0;
/// Nearest ground point kept; closer points are behind or under the camera.
const MIN_RANGE: f64 = 0.5;

/// Detectors computed from the scenario's lane center instead of pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum Synthetic {
    GroundTruth,
    Biased(f64),
    BiasedPixels(f64),
    Noisy { sigma: f64, seed: u64 },
    Curved { curvature: f64, onset: f64 },
    Straightener,
}

/// The stretch of `pts` around the point nearest the origin over which x
/// increases, clipped to the usable range.
fn forward_stretch(pts: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let Some((k, _)) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.coords.norm_squared().total_cmp(&b.1.coords.norm_squared()))
    else {
        return Vec::new();
    };
    let mut lo = k;
    while lo > 0 && pts[lo - 1].x < pts[lo].x {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < pts.len() && pts[hi + 1].x > pts[hi].x {
        hi += 1;
    }
    let mut out: Vec<Point2<f64>> = Vec::new();
    for (i, p) in pts[lo..=hi].iter().enumerate() {
        if p.x < MIN_RANGE {
            // Keep the crossing so near rows can still be interpolated.
            if pts.get(lo + i + 1).is_some_and(|n| n.x >= MIN_RANGE) {
                let n = pts[lo + i + 1];
                let t = (MIN_RANGE - p.x) / (n.x - p.x);
                out.push(p + (n - p) * t);
            }
            continue;
        }
        if p.x > MAX_RANGE {
            if let Some(q) = out.last().copied() {
                let t = (MAX_RANGE - q.x) / (p.x - q.x);
                out.push(q + (p - q) * t);
            }
            break;
        }
        out.push(*p);
    }
    out
}

/// Left and right ego lines on the ground plane, in the frame of the
/// simulated vehicle at `frame_index` displaced by `delta`.
pub fn ground_truth_bev(
    scenario: &Scenario,
    frame_index: usize,
    delta: &PoseDelta,
) -> Result<[Vec<Point2<f64>>; 2], DetectorError> {
    let center = scenario.center.as_ref().ok_or(DetectorError::NoCenter)?;
    let pose = scenario.log.pose(frame_index).offset_by(delta);
    let half = scenario.lane_width / 2.0;
    let side = |offset: f64| {
        let world = center.offset_points(offset);
        let local: Vec<Point2<f64>> = world.iter().map(|p| pose.to_local(*p)).collect();
        forward_stretch(&local)
    };
    Ok([side(half), side(-half)])
}

/// Projects ground-plane lines into the image and samples them at `rows`;
/// samples outside `[0, width)` are dropped. Output points are `(u, row)`
/// in increasing row order.
pub fn project_bev_lines(
    lines: &[Vec<Point2<f64>>],
    h: &GroundHomography,
    rows: &[u32],
    width: u32,
) -> Vec<Vec<Point2<f64>>> {
    lines
        .iter()
        .map(|line| {
            let img: Vec<Point2<f64>> = line.iter().filter_map(|p| h.ground_to_image(*p).ok()).collect();
            rows.iter()
                .filter_map(|&r| {
                    let r = f64::from(r);
                    // Lines run away from the camera, so v decreases along them.
                    let seg = img.windows(2).find(|w| w[0].y >= r && w[1].y <= r && w[0].y > w[1].y)?;
                    let t = (seg[0].y - r) / (seg[0].y - seg[1].y);
                    let u = seg[0].x + t * (seg[1].x - seg[0].x);
                    (u >= 0.0 && u < f64::from(width)).then(|| Point2::new(u, r))
                })
                .collect()
        })
        .collect()
}

fn bend(line: &[Point2<f64>], curvature: f64, onset: f64) -> Vec<Point2<f64>> {
    line.iter()
        .filter_map(|p| {
            let d = p.x - onset;
            if d <= 0.0 || curvature == 0.0 {
                return Some(*p);
            }
            let kd = curvature.abs() * d;
            if kd >= 1.0 {
                return None;
            }
            let off = (1.0 - (1.0 - kd * kd).sqrt()) / curvature.abs();
            Some(Point2::new(p.x, p.y + off * curvature.signum()))
        })
        .collect()
}

fn straight_fit(line: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let n = line.len() as f64;
    if line.len() < 2 {
        return line.to_vec();
    }
    let mx = line.iter().map(|p| p.x).sum::<f64>() / n;
    let my = line.iter().map(|p| p.y).sum::<f64>() / n;
    let sxx: f64 = line.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = line.iter().map(|p| (p.x - mx) * (p.y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    line.iter().map(|p| Point2::new(p.x, my + b * (p.x - mx))).collect()
}

fn noise_rng(seed: u64, scenario: &str, frame: usize, lane: usize, point: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((scenario.len() as u64).to_le_bytes());
    h.update(scenario.as_bytes());
    h.update((frame as u64).to_le_bytes());
    h.update((lane as u64).to_le_bytes());
    h.update((point as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl Synthetic {
    /// Detection for a frame of `scenario` seen from the displaced pose.
    pub fn lines(
        &self,
        scenario: &Scenario,
        frame_index: usize,
        delta: &PoseDelta,
    ) -> Result<Vec<Vec<Point2<f64>>>, DetectorError> {
        let bev = ground_truth_bev(scenario, frame_index, delta)?;
        let bev: Vec<Vec<Point2<f64>>> = match self {
            Synthetic::Biased(b) => bev
                .iter()
                .map(|l| l.iter().map(|p| Point2::new(p.x, p.y + b)).collect())
                .collect(),
            Synthetic::Curved { curvature, onset } => bev.iter().map(|l| bend(l, *curvature, *onset)).collect(),
            Synthetic::Straightener => bev
                .iter()
                .map(|l| {
                    let visible: Vec<Point2<f64>> = l.iter().copied().filter(|p| p.x <= 60.0).collect();
                    straight_fit(&visible)
                })
                .collect(),
            _ => bev.to_vec(),
        };
        let w = scenario.image_width;
        let mut lines = project_bev_lines(&bev, &scenario.homography, &scenario.h_samples, w);
        match self {
            Synthetic::BiasedPixels(px) => {
                for l in &mut lines {
                    for p in l.iter_mut() {
                        p.x += px;
                    }
                }
            }
            Synthetic::Noisy { sigma, seed } if *sigma != 0.0 => {
                for (li, l) in lines.iter_mut().enumerate() {
                    for p in l.iter_mut() {
                        let mut rng = noise_rng(*seed, &scenario.id, frame_index, li, p.y as usize);
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p.x += sigma * z;
                    }
                }
            }
            _ => {}
        }
        for l in &mut lines {
            l.retain(|p| p.x >= 0.0 && p.x < f64::from(w));
        }
        lines.retain(|l| !l.is_empty());
        Ok(lines)
    }
}

impl Detector for Synthetic {
    fn name(&self) -> String {
        match self {
            Synthetic::GroundTruth => "ground_truth".into(),
            Synthetic::Biased(b) => format!("biased:{b}"),
            Synthetic::BiasedPixels(p) => format!("biased_px:{p}"),
            Synthetic::Noisy { sigma, seed } => format!("noisy:{sigma}:{seed}"),
            Synthetic::Curved { curvature, onset } => format!("curved:{curvature}:{onset}"),
            Synthetic::Straightener => "straightener".into(),
        }
    }

    fn detect(&mut self, _frame: &LazyFrame<'_>, ctx: &DetectionContext<'_>) -> Result<DetectionResult, DetectorError> {
        let lines = self.lines(ctx.scenario, ctx.frame_index, &ctx.pose_delta)?;
        Ok(DetectionResult::from_polylines(lines))
    }
}
