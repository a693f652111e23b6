use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameRecord, ImageSource, LaneAnnotation, ScenarioError, SENTINEL};

/// One TuSimple line-JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuSimpleRecord {
    pub lanes: Vec<Vec<f64>>,
    pub h_samples: Vec<u32>,
    pub raw_file: String,
}

/// Reads a TuSimple label file. `raw_file` paths are resolved against the
/// label file's directory.
pub fn load_tusimple(path: &Path) -> Result<Vec<FrameRecord>, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TuSimpleRecord =
            serde_json::from_str(line).map_err(|e| ScenarioError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let annotation = LaneAnnotation {
            h_samples: rec.h_samples,
            lanes: rec.lanes,
        };
        annotation
            .validate(None)
            .map_err(|e| ScenarioError::InvalidRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        out.push(FrameRecord {
            frame_index: out.len(),
            timestamp: 0.0,
            image: ImageSource::Path(base.join(&rec.raw_file)),
            annotation: Some(annotation),
        });
    }
    Ok(out)
}

/// Writes records in TuSimple line-JSON form.
pub fn write_tusimple(records: &[TuSimpleRecord], path: &Path) -> Result<(), ScenarioError> {
    let io = |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(&TuSimpleLine::from(r)).expect("plain data serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

// Integral x values are written without a fractional part, as in the
// published label files.
#[derive(Serialize)]
struct TuSimpleLine<'a> {
    lanes: Vec<Vec<serde_json::Number>>,
    h_samples: &'a [u32],
    raw_file: &'a str,
}

impl<'a> From<&'a TuSimpleRecord> for TuSimpleLine<'a> {
    fn from(r: &'a TuSimpleRecord) -> Self {
        let num = |x: f64| {
            if x.fract() == 0.0 && x.abs() < 1e15 {
                serde_json::Number::from(x as i64)
            } else {
                serde_json::Number::from_f64(x).unwrap_or_else(|| serde_json::Number::from(SENTINEL as i64))
            }
        };
        Self {
            lanes: r.lanes.iter().map(|l| l.iter().map(|x| num(*x)).collect()).collect(),
            h_samples: &r.h_samples,
            raw_file: &r.raw_file,
        }
    }
}
