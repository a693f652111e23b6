//! Scenario ingestion: TuSimple annotations, scenario manifests, ego-line
//! selection and CSV metric reports.

mod manifest;
mod report;
mod tusimple;

pub use manifest::{load_scenario, write_scenario, CenterSpec, FrameEntry, ScenarioManifest};
pub use report::{read_report, write_report, MetricReport, Status};
pub use tusimple::{load_tusimple, write_tusimple, TuSimpleRecord};

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driving::CenterPath;
use crate::geometry::{GroundHomography, Pose};

/// x value marking "no point at this row".
pub const SENTINEL: f64 = -2.0;

/// Rows annotated by the TuSimple benchmark at 1280×720.
pub fn tusimple_h_samples() -> Vec<u32> {
    (160..=710).step_by(10).collect()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("{frames} frames but {log} log rows")]
    LengthMismatch { frames: usize, log: usize },
    #[error("homography is not invertible: {0}")]
    SingularHomography(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("report has no rows")]
    EmptyReport,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// TuSimple-convention lane annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAnnotation {
    pub h_samples: Vec<u32>,
    pub lanes: Vec<Vec<f64>>,
}

impl LaneAnnotation {
    pub fn new(h_samples: Vec<u32>, lanes: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let a = Self { h_samples, lanes };
        a.validate(None)?;
        Ok(a)
    }

    pub fn validate(&self, image_width: Option<u32>) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidAnnotation(m));
        if self.h_samples.windows(2).any(|w| w[1] <= w[0]) {
            return bad("h_samples must be strictly increasing".into());
        }
        for (l, lane) in self.lanes.iter().enumerate() {
            if lane.len() != self.h_samples.len() {
                return bad(format!(
                    "lane {l} has {} points for {} rows",
                    lane.len(),
                    self.h_samples.len()
                ));
            }
            for &x in lane {
                if x == SENTINEL {
                    continue;
                }
                let upper = image_width.map_or(f64::INFINITY, f64::from);
                if !x.is_finite() || x < 0.0 || x >= upper {
                    return bad(format!("lane {l} has out-of-range x {x}"));
                }
            }
        }
        Ok(())
    }

    /// Non-sentinel points of lane `idx` as `(x, row)`.
    pub fn lane_points(&self, idx: usize) -> Vec<Point2<f64>> {
        self.lanes[idx]
            .iter()
            .zip(&self.h_samples)
            .filter(|(x, _)| **x != SENTINEL)
            .map(|(x, r)| Point2::new(*x, f64::from(*r)))
            .collect()
    }

    pub fn polylines(&self) -> Vec<Vec<Point2<f64>>> {
        (0..self.lanes.len()).map(|i| self.lane_points(i)).collect()
    }
}

/// Frame pixels, loaded on demand.
#[derive(Clone)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<RgbImage>),
    Procedural {
        renderer: Arc<dyn FrameRenderer>,
        index: usize,
    },
}

/// Deterministic frame generator for synthetic scenarios.
pub trait FrameRenderer: Send + Sync {
    fn render(&self, index: usize) -> RgbImage;
}

impl fmt::Debug for ImageSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageSource::Path(p) => write!(f, "Path({})", p.display()),
            ImageSource::Memory(img) => write!(f, "Memory({}x{})", img.width(), img.height()),
            ImageSource::Procedural { index, .. } => write!(f, "Procedural({index})"),
        }
    }
}

impl ImageSource {
    pub fn load(&self) -> Result<RgbImage, ScenarioError> {
        match self {
            ImageSource::Path(p) => {
                if !p.exists() {
                    return Err(ScenarioError::MissingFile(p.clone()));
                }
                image::open(p)
                    .map(|i| i.to_rgb8())
                    .map_err(|e| ScenarioError::Image {
                        path: p.clone(),
                        message: e.to_string(),
                    })
            }
            ImageSource::Memory(img) => Ok(img.as_ref().clone()),
            ImageSource::Procedural { renderer, index } => Ok(renderer.render(*index)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub timestamp: f64,
    pub image: ImageSource,
    pub annotation: Option<LaneAnnotation>,
}

/// One driving-log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
}

impl LogEntry {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrivingLog {
    pub entries: Vec<LogEntry>,
}

impl DrivingLog {
    pub fn new(entries: Vec<LogEntry>) -> Result<Self, ScenarioError> {
        for (i, e) in entries.iter().enumerate() {
            let vals = [e.x, e.y, e.heading, e.speed, e.steering];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::Invalid(format!("log row {i} is not finite")));
            }
            if e.speed < 0.0 {
                return Err(ScenarioError::Invalid(format!("log row {i} has negative speed")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pose(&self, i: usize) -> Pose {
        self.entries[i].pose()
    }

    /// Recorded speed, holding the last row past the end.
    pub fn speed(&self, i: usize) -> f64 {
        self.entries[i.min(self.entries.len() - 1)].speed
    }
}

/// One evaluation unit: frames, log, camera geometry and lane center.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub frames: Vec<FrameRecord>,
    pub log: DrivingLog,
    pub homography: GroundHomography,
    pub center: Option<CenterPath>,
    pub lane_width: f64,
    /// Rows at which detectors sample lanes.
    pub h_samples: Vec<u32>,
}

impl Scenario {
    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.frames.len() != self.log.len() {
            return Err(ScenarioError::LengthMismatch {
                frames: self.frames.len(),
                log: self.log.len(),
            });
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(ScenarioError::Invalid("image size must be positive".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(ScenarioError::Invalid("lane_width must be positive".into()));
        }
        for w in self.frames.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(ScenarioError::Invalid(format!(
                    "timestamps decrease at frame {}",
                    w[1].frame_index
                )));
            }
        }
        for f in &self.frames {
            if let Some(a) = &f.annotation {
                a.validate(Some(self.image_width))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Which ego line is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no ego lane line on the {side} side")]
pub struct SideMissing {
    pub side: Side,
    /// Index of the line found on the other side, if any.
    pub other: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgoLines {
    pub left: usize,
    pub right: usize,
}

/// Picks ego lines from each lane's x at its lowest annotated row: left is
/// the largest value below `center_x`, right the smallest value at or above
/// it. `bottom_x[i]` is `None` for lanes without points.
pub fn select_ego(bottom_x: &[Option<f64>], center_x: f64) -> Result<EgoLines, SideMissing> {
    let mut left: Option<(usize, f64)> = None;
    let mut right: Option<(usize, f64)> = None;
    for (i, x) in bottom_x.iter().enumerate() {
        let Some(x) = *x else { continue };
        if x < center_x {
            if left.map_or(true, |(_, b)| x > b) {
                left = Some((i, x));
            }
        } else if right.map_or(true, |(_, b)| x < b) {
            right = Some((i, x));
        }
    }
    match (left, right) {
        (Some((l, _)), Some((r, _))) => Ok(EgoLines { left: l, right: r }),
        (None, r) => Err(SideMissing {
            side: Side::Left,
            other: r.map(|p| p.0),
        }),
        (l, None) => Err(SideMissing {
            side: Side::Right,
            other: l.map(|p| p.0),
        }),
    }
}

/// x of each lane at its bottom-most annotated row.
pub fn bottom_xs(annotation: &LaneAnnotation) -> Vec<Option<f64>> {
    annotation
        .lanes
        .iter()
        .map(|lane| {
            lane.iter()
                .zip(&annotation.h_samples)
                .filter(|(x, _)| **x != SENTINEL)
                .max_by_key(|(_, r)| **r)
                .map(|(x, _)| *x)
        })
        .collect()
}

/// Ego-line selection on an annotation.
pub fn select_ego_lines(annotation: &LaneAnnotation, center_x: f64) -> Result<EgoLines, SideMissing> {
    select_ego(&bottom_xs(annotation), center_x)
}
