use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One metric value for one (scenario, detector, configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenario: String,
    pub detector: String,
    pub metric: String,
    /// Free-form `key=value;...` parameter string.
    pub params: String,
    pub value: Option<f64>,
    pub status: Status,
    pub note: String,
    /// Digest of the effective configuration that produced the row.
    pub config_digest: String,
}

impl MetricReport {
    pub fn ok(scenario: &str, detector: &str, metric: &str, params: &str, value: f64) -> Self {
        Self {
            scenario: scenario.into(),
            detector: detector.into(),
            metric: metric.into(),
            params: params.into(),
            value: Some(value),
            status: Status::Ok,
            note: String::new(),
            config_digest: String::new(),
        }
    }

    pub fn failed(scenario: &str, detector: &str, metric: &str, params: &str, note: &str) -> Self {
        Self {
            value: None,
            status: Status::Failed,
            note: note.into(),
            ..Self::ok(scenario, detector, metric, params, 0.0)
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    scenario: String,
    detector: String,
    metric: String,
    params: String,
    value: String,
    status: Status,
    note: String,
    config_digest: String,
}

/// Writes rows as CSV with values in fixed 6-decimal notation.
pub fn write_report(rows: &[MetricReport], path: &Path) -> Result<(), ScenarioError> {
    if rows.is_empty() {
        return Err(ScenarioError::EmptyReport);
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(Row {
            scenario: r.scenario.clone(),
            detector: r.detector.clone(),
            metric: r.metric.clone(),
            params: r.params.clone(),
            value: r.value.map(|v| format!("{v:.6}")).unwrap_or_default(),
            status: r.status,
            note: r.note.clone(),
            config_digest: r.config_digest.clone(),
        })?;
    }
    w.flush().map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Vec<MetricReport>, ScenarioError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let value = if row.value.is_empty() {
            None
        } else {
            Some(row.value.parse::<f64>().map_err(|e| ScenarioError::Parse {
                line: i + 2,
                message: e.to_string(),
            })?)
        };
        out.push(MetricReport {
            scenario: row.scenario,
            detector: row.detector,
            metric: row.metric,
            params: row.params,
            value,
            status: row.status,
            note: row.note,
            config_digest: row.config_digest,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_gives_two_lines() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("r.csv");
        write_report(&[MetricReport::ok("s", "gt", "accuracy", "alpha=20", 1.0 / 3.0)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("0.333333"));
    }

    #[test]
    fn round_trip_within_tolerance() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("r.csv");
        let rows = vec![
            MetricReport::ok("a,b", "biased(0.3)", "e2e_ld", "t_e=20", 0.123456789),
            MetricReport::failed("c", "ext", "psld", "t_p=10", "detector unavailable"),
        ];
        write_report(&rows, &p).unwrap();
        let back = read_report(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].scenario, "a,b");
        assert!((back[0].value.unwrap() - 0.123456789).abs() < 1e-6);
        assert_eq!(back[1].value, None);
        assert_eq!(back[1].status, Status::Failed);
    }

    #[test]
    fn refuses_empty() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_report(&[], &d.path().join("r.csv")),
            Err(ScenarioError::EmptyReport)
        ));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let r = write_report(
            &[MetricReport::ok("s", "d", "m", "", 0.0)],
            Path::new("/nonexistent-dir/x/r.csv"),
        );
        assert!(r.is_err());
    }
}
