//! Run configuration: a TOML document, then `--set key=value` overrides.

use std::path::{Path, PathBuf};

use lanedrive::config::{config_digest, MetricParams, SimConfig};
use lanedrive::driving::PsldMode;
use lanedrive::metrics::{default_alphas, default_betas};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario directories, manifest files, or `fixture:<id>` / `fixtures:<set>`.
    pub scenarios: Vec<String>,
    /// Detector specs; `suite` expands to the correlation-suite detectors.
    pub detectors: Vec<String>,
    pub output: PathBuf,
    /// PSLD rollout style.
    pub mode: PsldMode,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// External detector timeout, seconds.
    pub timeout_secs: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub metrics: MetricParams,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["fixtures:straight".into()],
            detectors: vec!["ground_truth".into()],
            output: PathBuf::from("out"),
            mode: PsldMode::Benign,
            workers: 0,
            timeout_secs: 10.0,
            alphas: default_alphas(),
            betas: default_betas(),
            metrics: MetricParams::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies `key=value` overrides, where keys
    /// are dotted paths such as `sim.e2e_horizon` and values are TOML.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sim.validate().map_err(|e| CliError::Usage(format!("sim.{e}")))?;
        self.metrics.validate().map_err(|e| CliError::Usage(format!("metrics.{e}")))?;
        if self.detectors.is_empty() {
            return Err(CliError::Usage("detectors: need at least one".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(CliError::Usage("timeout_secs: must be > 0".into()));
        }
        Ok(())
    }

    /// Digest of everything that can change results; output location and
    /// worker count are left out.
    pub fn digest(&self) -> String {
        let semantic = RunConfig {
            output: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        config_digest(&semantic)
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.timeout_secs)
    }
}

fn parse_value(raw: &str) -> Value {
    // A bare TOML value, else a plain string.
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in {key:?}")))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("{key}: {p} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// `run.json` written next to every report.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_digest: String,
    pub config: &'a RunConfig,
}

impl<'a> RunRecord<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig) -> Self {
        Self {
            tool: "lanedrive",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_digest: config.digest(),
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "sim.e2e_horizon=30".into(),
                "metrics.alpha = 10".into(),
                "detectors=[\"biased:0.2\", \"suite\"]".into(),
                "output=somewhere".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.sim.e2e_horizon, 30);
        assert_eq!(cfg.metrics.alpha, 10.0);
        assert_eq!(cfg.detectors, vec!["biased:0.2", "suite"]);
        assert_eq!(cfg.output, PathBuf::from("somewhere"));
        assert_eq!(cfg.sim.psld_horizon, 10);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "workers = 2\n[sim]\npsld_horizon = 5\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["sim.psld_horizon=7".into()]).unwrap();
        assert_eq!((cfg.workers, cfg.sim.psld_horizon), (2, 7));
    }

    #[test]
    fn bad_keys_and_values_are_usage_errors() {
        for o in ["nonsense=1", "sim.e2e_horizon=0", "metrics.beta=2.0", "sim=3", "justakey"] {
            assert!(matches!(RunConfig::load(None, &[o.into()]), Err(CliError::Usage(_))), "{o}");
        }
    }

    #[test]
    fn digest_ignores_output_and_workers() {
        let a = RunConfig::default();
        let b = RunConfig {
            output: "elsewhere".into(),
            workers: 7,
            ..RunConfig::default()
        };
        let c = RunConfig {
            mode: PsldMode::Attack,
            ..RunConfig::default()
        };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
