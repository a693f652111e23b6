use std::fs;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::{
    tusimple_h_samples, DrivingLog, FrameRecord, ImageSource, LaneAnnotation, LogEntry, Scenario,
    ScenarioError,
};
use crate::driving::{CenterPath, Segment};
use crate::geometry::{GroundHomography, Pose};

pub const FORMAT_VERSION: u32 = 1;

/// On-disk scenario description (`scenario.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub format_version: u32,
    pub id: String,
    pub image_width: u32,
    pub image_height: u32,
    /// Image-to-ground matrix, row-major.
    pub homography: [f64; 9],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_samples: Option<Vec<u32>>,
    pub frames: Vec<FrameEntry>,
    pub log: Vec<LogEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<CenterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: f64,
    /// Path relative to the manifest directory.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<LaneAnnotation>,
}

/// Lane-center source. When absent, callers generate one from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterSpec {
    Waypoints {
        points: Vec<[f64; 2]>,
    },
    Segments {
        origin: Pose,
        segments: Vec<Segment>,
        #[serde(default = "one_meter")]
        spacing: f64,
    },
}

fn one_meter() -> f64 {
    1.0
}

impl CenterSpec {
    pub fn build(&self) -> Result<CenterPath, ScenarioError> {
        let r = match self {
            CenterSpec::Waypoints { points } => {
                CenterPath::new(points.iter().map(|p| Point2::new(p[0], p[1])).collect())
            }
            CenterSpec::Segments {
                origin,
                segments,
                spacing,
            } => CenterPath::from_segments(*origin, segments, *spacing),
        };
        r.map_err(|e| ScenarioError::Invalid(format!("center: {e}")))
    }
}

/// Loads and validates `scenario.json` (or the manifest file given).
pub fn load_scenario(manifest: &Path) -> Result<Scenario, ScenarioError> {
    let path = if manifest.is_dir() {
        manifest.join("scenario.json")
    } else {
        manifest.to_path_buf()
    };
    if !path.exists() {
        return Err(ScenarioError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    let m: ScenarioManifest = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    from_manifest(m, base)
}

fn from_manifest(m: ScenarioManifest, base: &Path) -> Result<Scenario, ScenarioError> {
    if m.format_version != FORMAT_VERSION {
        return Err(ScenarioError::UnsupportedVersion(m.format_version));
    }
    if m.frames.len() != m.log.len() {
        return Err(ScenarioError::LengthMismatch {
            frames: m.frames.len(),
            log: m.log.len(),
        });
    }
    if m.homography.iter().any(|v| !v.is_finite()) {
        return Err(ScenarioError::Invalid("homography has non-finite entries".into()));
    }
    let homography = GroundHomography::from_row_major(&m.homography)
        .map_err(|e| ScenarioError::SingularHomography(e.to_string()))?;
    let mut frames = Vec::with_capacity(m.frames.len());
    for f in m.frames {
        let p = base.join(&f.image);
        if !p.exists() {
            return Err(ScenarioError::MissingFile(p));
        }
        frames.push(FrameRecord {
            frame_index: f.index,
            timestamp: f.timestamp,
            image: ImageSource::Path(p),
            annotation: f.annotation,
        });
    }
    let center = m.center.as_ref().map(CenterSpec::build).transpose()?;
    let s = Scenario {
        id: m.id,
        image_width: m.image_width,
        image_height: m.image_height,
        frames,
        log: DrivingLog::new(m.log)?,
        homography,
        center,
        lane_width: m.lane_width.unwrap_or(3.7),
        h_samples: m.h_samples.unwrap_or_else(tusimple_h_samples),
    };
    s.validate()?;
    Ok(s)
}

/// Writes a scenario as a manifest directory with one PNG per frame.
pub fn write_scenario(s: &Scenario, dir: &Path) -> Result<(), ScenarioError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScenarioError::Io { path, source }
    };
    fs::create_dir_all(dir.join("frames")).map_err(io(dir))?;
    let mut frames = Vec::with_capacity(s.frames.len());
    for f in &s.frames {
        let rel = format!("frames/{:05}.png", f.frame_index);
        let p = dir.join(&rel);
        f.image.load()?.save(&p).map_err(|e| ScenarioError::Image {
            path: p.clone(),
            message: e.to_string(),
        })?;
        frames.push(FrameEntry {
            index: f.frame_index,
            timestamp: f.timestamp,
            image: rel,
            annotation: f.annotation.clone(),
        });
    }
    let m = ScenarioManifest {
        format_version: FORMAT_VERSION,
        id: s.id.clone(),
        image_width: s.image_width,
        image_height: s.image_height,
        homography: s.homography.to_row_major(),
        lane_width: Some(s.lane_width),
        h_samples: Some(s.h_samples.clone()),
        frames,
        log: s.log.entries.clone(),
        center: s.center.as_ref().map(|c| CenterSpec::Waypoints {
            points: c.points().iter().map(|p| [p.x, p.y]).collect(),
        }),
    };
    let p = dir.join("scenario.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&p, text).map_err(io(&p))
}
