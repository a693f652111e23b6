//! Simulation and metric parameters shared across the crate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::ControllerConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// First 16 hex digits of the SHA-256 of `value`'s JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// TuSimple thresholds: `alpha` pixels for point hits, `beta` line accuracy
/// for a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            beta: 0.85,
        }
    }
}

impl MetricParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ConfigError> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Closed-loop simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// End-to-end horizon in frames.
    pub e2e_horizon: usize,
    /// Per-frame simulated deviation horizon in frames.
    pub psld_horizon: usize,
    /// Meters.
    pub wheelbase: f64,
    pub control_hz: u32,
    pub actuation_hz: u32,
    /// Maximum steering change per actuation message, radians.
    pub steering_rate_limit: f64,
    /// Absolute steering bound, radians.
    pub max_steer: f64,
    /// Desired-path length built from detections, meters.
    pub lookahead: f64,
    /// Lane width for the one-sided fallback and ground-truth replay, meters.
    pub lane_width: f64,
    /// Fraction of control steps allowed without a usable path.
    pub max_no_path_fraction: f64,
    /// Degree of the least-squares polynomial the desired path is fit to
    /// before it reaches the controller; 0 keeps the pointwise average.
    pub path_fit_degree: usize,
    pub controller: ControllerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            e2e_horizon: 20,
            psld_horizon: 10,
            wheelbase: 2.65,
            control_hz: 20,
            actuation_hz: 100,
            steering_rate_limit: 0.25_f64.to_radians(),
            max_steer: 30.0_f64.to_radians(),
            lookahead: 50.0,
            lane_width: 3.7,
            max_no_path_fraction: 0.25,
            path_fit_degree: 0,
            controller: ControllerConfig::default(),
        }
    }
}

impl SimConfig {
    /// Actuation substeps per control period.
    pub fn substeps(&self) -> u32 {
        self.actuation_hz / self.control_hz.max(1)
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.e2e_horizon < 1 {
            return Err(invalid("e2e_horizon", "must be >= 1"));
        }
        if self.psld_horizon < 1 {
            return Err(invalid("psld_horizon", "must be >= 1"));
        }
        if !(self.wheelbase > 0.0) {
            return Err(invalid("wheelbase", "must be > 0"));
        }
        if self.control_hz == 0 || self.actuation_hz == 0 {
            return Err(invalid("control_hz", "rates must be positive"));
        }
        if self.actuation_hz % self.control_hz != 0 {
            return Err(invalid(
                "actuation_hz",
                format!(
                    "{} is not an integer multiple of control_hz {}",
                    self.actuation_hz, self.control_hz
                ),
            ));
        }
        if !(self.steering_rate_limit > 0.0) {
            return Err(invalid("steering_rate_limit", "must be > 0"));
        }
        if !(self.max_steer > 0.0) {
            return Err(invalid("max_steer", "must be > 0"));
        }
        if !(self.lookahead >= 2.0) {
            return Err(invalid("lookahead", "must be >= 2 m"));
        }
        if !(self.lane_width > 0.0) {
            return Err(invalid("lane_width", "must be > 0"));
        }
        if self.path_fit_degree > 8 {
            return Err(invalid("path_fit_degree", "must be <= 8"));
        }
        if !(0.0..=1.0).contains(&self.max_no_path_fraction) {
            return Err(invalid("max_no_path_fraction", "must be in [0, 1]"));
        }
        self.controller.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_content() {
        let a = SimConfig::default();
        let b = SimConfig {
            psld_horizon: 11,
            ..SimConfig::default()
        };
        assert_eq!(config_digest(&a), config_digest(&a.clone()));
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 16);
    }

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
        MetricParams::default().validate().unwrap();
        assert_eq!(SimConfig::default().substeps(), 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(MetricParams::new(0.0, 0.5).is_err());
        assert!(MetricParams::new(5.0, 0.0).is_err());
        assert!(MetricParams::new(5.0, 1.0).is_ok());
        let cfg = SimConfig {
            actuation_hz: 90,
            control_hz: 20,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            psld_horizon: 0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
