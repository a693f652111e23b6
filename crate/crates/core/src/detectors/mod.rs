//! Detector contract, synthetic detectors, the external-detector protocol
//! and the desired path derived from detections.

mod builtin;
pub mod protocol;

pub use builtin::{ground_truth_bev, project_bev_lines, Synthetic};
pub use protocol::{protocol_check, serve, ConformanceReport, Endpoint, ExternalDetector, MockServer, Responder};

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use image::RgbImage;
use nalgebra::{DMatrix, DVector, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AnchorSet, PolynomialLanes, ProbabilityMaps};
use crate::control::PathWaypoints;
use crate::geometry::{synthesize_frame, GroundHomography, PoseDelta};
use crate::scenario::{select_ego, ImageSource, Scenario, Side, SideMissing};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("detector unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {message} (payload: {excerpt})")]
    Protocol { message: String, excerpt: String },
    #[error("invalid detection: {0}")]
    Validation(String),
    #[error("detector reported an error: {0}")]
    Remote(String),
    #[error("no usable ego lane line")]
    NoPath,
    #[error("frame unavailable: {0}")]
    Frame(String),
    #[error("scenario has no lane center")]
    NoCenter,
    #[error("invalid detector spec {0:?}")]
    BadSpec(String),
}

pub(crate) fn excerpt(s: &str) -> String {
    s.chars().take(120).collect()
}

/// One detected lane line in image coordinates `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedLane {
    pub points: Vec<Point2<f64>>,
    pub score: f64,
}

/// Raw model output kept for the attack objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RawOutput {
    Probmap(ProbabilityMaps),
    Poly(PolynomialLanes),
    Anchor(AnchorSet),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResult {
    pub lanes: Vec<DetectedLane>,
    pub raw: Option<RawOutput>,
    pub latency_ms: Option<f64>,
}

impl DetectionResult {
    pub fn from_polylines(lines: Vec<Vec<Point2<f64>>>) -> Self {
        Self {
            lanes: lines
                .into_iter()
                .filter(|l| !l.is_empty())
                .map(|points| DetectedLane { points, score: 1.0 })
                .collect(),
            raw: None,
            latency_ms: None,
        }
    }

    pub fn polylines(&self) -> Vec<Vec<Point2<f64>>> {
        self.lanes.iter().map(|l| l.points.clone()).collect()
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), DetectorError> {
        for (i, l) in self.lanes.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.score) {
                return Err(DetectorError::Validation(format!(
                    "lane {i} confidence {} outside [0, 1]",
                    l.score
                )));
            }
            for p in &l.points {
                let inside = p.x >= 0.0 && p.x < f64::from(width) && p.y >= 0.0 && p.y < f64::from(height);
                if !inside {
                    return Err(DetectorError::Validation(format!(
                        "lane {i} point ({}, {}) outside the {width}x{height} frame",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A frame that is synthesized only when a detector looks at its pixels.
pub struct LazyFrame<'a> {
    source: &'a ImageSource,
    homography: &'a GroundHomography,
    delta: PoseDelta,
    cell: OnceCell<Result<RgbImage, String>>,
}

impl<'a> LazyFrame<'a> {
    pub fn new(source: &'a ImageSource, homography: &'a GroundHomography, delta: PoseDelta) -> Self {
        Self {
            source,
            homography,
            delta,
            cell: OnceCell::new(),
        }
    }

    pub fn delta(&self) -> PoseDelta {
        self.delta
    }

    /// The recorded frame warped to the simulated pose.
    pub fn image(&self) -> Result<&RgbImage, DetectorError> {
        self.cell
            .get_or_init(|| {
                let src = self.source.load().map_err(|e| e.to_string())?;
                Ok(if self.delta.is_zero() {
                    src
                } else {
                    synthesize_frame(&src, self.homography, &self.delta)
                })
            })
            .as_ref()
            .map_err(|e| DetectorError::Frame(e.clone()))
    }
}

#[derive(Clone, Copy)]
pub struct DetectionContext<'a> {
    pub scenario: &'a Scenario,
    pub frame_index: usize,
    /// Simulated camera pose relative to the recorded one.
    pub pose_delta: PoseDelta,
}

pub trait Detector: Send {
    fn name(&self) -> String;
    fn detect(&mut self, frame: &LazyFrame<'_>, ctx: &DetectionContext<'_>) -> Result<DetectionResult, DetectorError>;
}

/// Detector selection as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    GroundTruth,
    /// Lateral shift in meters on the ground plane, positive left.
    Biased { meters: f64 },
    /// Horizontal image shift in pixels, positive right.
    BiasedPixels { pixels: f64 },
    Noisy { sigma: f64, seed: u64 },
    Curved { curvature: f64, onset: f64 },
    Straightener,
    /// Child process speaking the protocol on stdio.
    Command { argv: Vec<String> },
    Tcp { address: String },
}

impl DetectorSpec {
    pub fn build(&self, timeout: Duration) -> Result<Box<dyn Detector>, DetectorError> {
        let synth = |s| Ok(Box::new(s) as Box<dyn Detector>);
        match self {
            DetectorSpec::GroundTruth => synth(Synthetic::GroundTruth),
            DetectorSpec::Biased { meters } => synth(Synthetic::Biased(*meters)),
            DetectorSpec::BiasedPixels { pixels } => synth(Synthetic::BiasedPixels(*pixels)),
            DetectorSpec::Noisy { sigma, seed } => synth(Synthetic::Noisy { sigma: *sigma, seed: *seed }),
            DetectorSpec::Curved { curvature, onset } => synth(Synthetic::Curved {
                curvature: *curvature,
                onset: *onset,
            }),
            DetectorSpec::Straightener => synth(Synthetic::Straightener),
            DetectorSpec::Command { argv } => {
                Ok(Box::new(ExternalDetector::connect(&Endpoint::Command(argv.clone()), timeout)?))
            }
            DetectorSpec::Tcp { address } => {
                Ok(Box::new(ExternalDetector::connect(&Endpoint::Tcp(address.clone()), timeout)?))
            }
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, DetectorSpec::Command { .. } | DetectorSpec::Tcp { .. })
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorSpec::GroundTruth => write!(f, "ground_truth"),
            DetectorSpec::Biased { meters } => write!(f, "biased:{meters}"),
            DetectorSpec::BiasedPixels { pixels } => write!(f, "biased_px:{pixels}"),
            DetectorSpec::Noisy { sigma, seed } => write!(f, "noisy:{sigma}:{seed}"),
            DetectorSpec::Curved { curvature, onset } => write!(f, "curved:{curvature}:{onset}"),
            DetectorSpec::Straightener => write!(f, "straightener"),
            DetectorSpec::Command { argv } => write!(f, "cmd:{}", argv.join(" ")),
            DetectorSpec::Tcp { address } => write!(f, "tcp:{address}"),
        }
    }
}

/// Parses `ground_truth`, `biased:<m>`, `biased_px:<px>`, `noisy:<sigma>:<seed>`,
/// `curved:<kappa>:<onset>`, `straightener`, `cmd:<program args...>` and
/// `tcp:<host:port>`.
impl FromStr for DetectorSpec {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DetectorError::BadSpec(s.to_string());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>, DetectorError> {
            rest.split(':').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
        };
        let spec = match kind.trim() {
            "ground_truth" | "gt" if rest.is_empty() => DetectorSpec::GroundTruth,
            "straightener" if rest.is_empty() => DetectorSpec::Straightener,
            "biased" => match nums()?.as_slice() {
                [m] => DetectorSpec::Biased { meters: *m },
                _ => return Err(bad()),
            },
            "biased_px" => match nums()?.as_slice() {
                [p] => DetectorSpec::BiasedPixels { pixels: *p },
                _ => return Err(bad()),
            },
            "noisy" => {
                let (sigma, seed) = rest.split_once(':').ok_or_else(bad)?;
                DetectorSpec::Noisy {
                    sigma: sigma.parse().map_err(|_| bad())?,
                    seed: seed.parse().map_err(|_| bad())?,
                }
            }
            "curved" => match nums()?.as_slice() {
                [k, x] => DetectorSpec::Curved { curvature: *k, onset: *x },
                _ => return Err(bad()),
            },
            "cmd" => {
                let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    return Err(bad());
                }
                DetectorSpec::Command { argv }
            }
            "tcp" if !rest.is_empty() => DetectorSpec::Tcp { address: rest.to_string() },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Settings for turning detections into a desired path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub lookahead: f64,
    pub lane_width: f64,
    /// Image column separating ego-left from ego-right lines.
    pub center_x: f64,
    /// Polynomial degree of the fitted path; 0 leaves the samples as is.
    pub fit_degree: usize,
}

impl PathOptions {
    pub fn for_scenario(s: &Scenario, lookahead: f64, lane_width: f64) -> Self {
        Self {
            lookahead,
            lane_width,
            center_x: f64::from(s.image_width) / 2.0,
            fit_degree: 0,
        }
    }

    pub fn with_fit_degree(self, fit_degree: usize) -> Self {
        Self { fit_degree, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredPath {
    pub waypoints: PathWaypoints,
    /// Set when only one ego line was usable; names the missing side.
    pub fallback: Option<Side>,
}

/// Ground-plane lane line sorted by x with duplicate x removed.
fn bev_line(lane: &[Point2<f64>], h: &GroundHomography) -> Option<Vec<Point2<f64>>> {
    let mut pts: Vec<Point2<f64>> = lane.iter().filter_map(|p| h.image_to_ground(*p).ok()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    pts.dedup_by(|a, b| (a.x - b.x).abs() < 1e-9);
    (pts.len() >= 2).then_some(pts)
}

/// Linear interpolation by x, extended along the end segments.
fn y_at(line: &[Point2<f64>], x: f64) -> f64 {
    let k = line.partition_point(|p| p.x <= x).clamp(1, line.len() - 1);
    let (a, b) = (line[k - 1], line[k]);
    a.y + (x - a.x) / (b.x - a.x) * (b.y - a.y)
}

/// Lane-center waypoints at 1 m spacing from `x = 0` to the lookahead,
/// averaged from the ego lines of `det`.
/// Least-squares polynomial `y(x)` evaluated back at the sample x values.
fn poly_fit(pts: &[Point2<f64>], degree: usize, scale: f64) -> Vec<Point2<f64>> {
    let degree = degree.min(pts.len().saturating_sub(1));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let a = DMatrix::from_fn(pts.len(), degree + 1, |i, j| (pts[i].x / scale).powi(j as i32));
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.y));
    let Ok(c) = a.clone().svd(true, true).solve(&b, 1e-12) else {
        return pts.to_vec();
    };
    let y = a * c;
    pts.iter().zip(y.iter()).map(|(p, y)| Point2::new(p.x, *y)).collect()
}

pub fn desired_path(
    det: &DetectionResult,
    h: &GroundHomography,
    opts: &PathOptions,
) -> Result<DesiredPath, DetectorError> {
    let bev: Vec<Option<Vec<Point2<f64>>>> = det.lanes.iter().map(|l| bev_line(&l.points, h)).collect();
    // The bottom-most image point is the one nearest the vehicle.
    let bottoms: Vec<Option<f64>> = det
        .lanes
        .iter()
        .zip(&bev)
        .map(|(l, b)| {
            b.as_ref()?;
            l.points.iter().max_by(|a, b| a.y.total_cmp(&b.y)).map(|p| p.x)
        })
        .collect();
    let (left, right, fallback) = match select_ego(&bottoms, opts.center_x) {
        Ok(e) => (Some(e.left), Some(e.right), None),
        Err(SideMissing { other: None, .. }) => return Err(DetectorError::NoPath),
        Err(SideMissing { side: Side::Left, other }) => (None, other, Some(Side::Left)),
        Err(SideMissing { side: Side::Right, other }) => (other, None, Some(Side::Right)),
    };
    let line = |i: Option<usize>| i.and_then(|i| bev[i].as_deref());
    let (l, r) = (line(left), line(right));
    let half = opts.lane_width / 2.0;
    let n = opts.lookahead.floor() as usize;
    let pts: Vec<Point2<f64>> = (0..=n)
        .map(|k| {
            let x = k as f64;
            let y = match (l, r) {
                (Some(l), Some(r)) => 0.5 * (y_at(l, x) + y_at(r, x)),
                (Some(l), None) => y_at(l, x) - half,
                (None, Some(r)) => y_at(r, x) + half,
                (None, None) => unreachable!("at least one side selected"),
            };
            Point2::new(x, y)
        })
        .collect();
    let pts = if opts.fit_degree > 0 { poly_fit(&pts, opts.fit_degree, opts.lookahead) } else { pts };
    let waypoints = PathWaypoints::new(pts).map_err(|e| DetectorError::Validation(e.to_string()))?;
    Ok(DesiredPath { waypoints, fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PinholeCamera;

    fn image_line(cam: &PinholeCamera, y: f64) -> Vec<Point2<f64>> {
        (4..40)
            .map(|x| cam.project(Point2::new(x as f64, y)).unwrap())
            .collect()
    }

    fn opts() -> PathOptions {
        PathOptions {
            lookahead: 50.0,
            lane_width: 3.7,
            center_x: 640.0,
            fit_degree: 0,
        }
    }

    #[test]
    fn symmetric_lines_center_at_zero() {
        let cam = PinholeCamera::tusimple_like();
        let det = DetectionResult::from_polylines(vec![image_line(&cam, 1.85), image_line(&cam, -1.85)]);
        let p = desired_path(&det, &cam.homography(), &opts()).unwrap();
        assert!(p.fallback.is_none());
        assert_eq!(p.waypoints.points().len(), 51);
        for q in p.waypoints.points() {
            assert!(q.y.abs() < 1e-3, "{q}");
        }
    }

    #[test]
    fn single_left_line_falls_back() {
        let cam = PinholeCamera::tusimple_like();
        let det = DetectionResult::from_polylines(vec![image_line(&cam, 1.85)]);
        let p = desired_path(&det, &cam.homography(), &opts()).unwrap();
        assert_eq!(p.fallback, Some(Side::Right));
        for q in p.waypoints.points() {
            assert!(q.y.abs() < 1e-3);
        }
    }

    #[test]
    fn no_lanes_is_no_path() {
        let cam = PinholeCamera::tusimple_like();
        let r = desired_path(&DetectionResult::default(), &cam.homography(), &opts());
        assert_eq!(r.unwrap_err(), DetectorError::NoPath);
    }

    #[test]
    fn lateral_shift_is_equivariant() {
        let cam = PinholeCamera::tusimple_like();
        let h = cam.homography();
        let base = desired_path(
            &DetectionResult::from_polylines(vec![image_line(&cam, 1.6), image_line(&cam, -2.0)]),
            &h,
            &opts(),
        )
        .unwrap();
        let c = 0.37;
        let moved = desired_path(
            &DetectionResult::from_polylines(vec![image_line(&cam, 1.6 + c), image_line(&cam, -2.0 + c)]),
            &h,
            &opts(),
        )
        .unwrap();
        for (a, b) in base.waypoints.points().iter().zip(moved.waypoints.points()) {
            assert!((b.y - a.y - c).abs() < 1e-6);
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["ground_truth", "biased:0.3", "biased_px:25", "noisy:2:7", "curved:0.02:15", "straightener", "tcp:127.0.0.1:9000"] {
            let spec: DetectorSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("biased".parse::<DetectorSpec>().is_err());
        assert!("noisy:2".parse::<DetectorSpec>().is_err());
    }

    #[test]
    fn confidence_bounds() {
        let mut det = DetectionResult::from_polylines(vec![vec![Point2::new(10.0, 10.0)]]);
        assert!(det.validate(100, 100).is_ok());
        det.lanes[0].score = 1.2;
        assert!(det.validate(100, 100).is_err());
    }
}
