//! Kinematic bicycle model and the rate-limited steering actuation loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::geometry::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("steering command is not finite: {0}")]
    NonFiniteCommand(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Planar bicycle-model state, referenced at the rear axle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Forward position, meters.
    pub x: f64,
    /// Lateral position, meters (positive left).
    pub y: f64,
    /// Heading, radians.
    pub psi: f64,
    /// Front-wheel steering angle, radians (positive left).
    pub delta: f64,
    /// Speed, m/s.
    pub v: f64,
}

impl VehicleState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.psi)
    }

    pub fn at_pose(pose: Pose, delta: f64, v: f64) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            psi: pose.heading,
            delta,
            v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.psi.is_finite()
            && self.delta.is_finite()
            && self.v.is_finite()
    }
}

/// Advances the kinematic bicycle model by `dt` with the steering angle held,
/// integrating the resulting constant-curvature arc exactly.
pub fn kinematic_step(s: &VehicleState, dt: f64, wheelbase: f64) -> VehicleState {
    let omega = s.v / wheelbase * s.delta.tan();
    let psi = s.psi + omega * dt;
    let (x, y) = if (omega * dt).abs() < 1e-9 {
        // Second-order expansion avoids cancellation for tiny turns.
        let mid = s.psi + 0.5 * omega * dt;
        (s.x + s.v * dt * mid.cos(), s.y + s.v * dt * mid.sin())
    } else {
        let r = s.v / omega;
        (s.x + r * (psi.sin() - s.psi.sin()), s.y + r * (s.psi.cos() - psi.cos()))
    };
    VehicleState { x, y, psi, ..*s }
}

/// Moves `current` toward `target` by at most `limit`.
pub fn rate_limited(current: f64, target: f64, limit: f64) -> f64 {
    current + (target - current).clamp(-limit, limit)
}

/// Applies one control period of steering toward `delta_cmd`.
///
/// Each of the `actuation_hz / control_hz` substeps first moves the steering
/// angle by at most the per-message limit, then integrates the bicycle model
/// over `1 / actuation_hz` seconds.
pub fn actuate(
    s: &VehicleState,
    delta_cmd: f64,
    cfg: &SimConfig,
) -> Result<VehicleState, DynamicsError> {
    if !delta_cmd.is_finite() {
        return Err(DynamicsError::NonFiniteCommand(delta_cmd));
    }
    let substeps = cfg.substeps();
    let dt = 1.0 / cfg.actuation_hz as f64;
    let mut state = *s;
    for _ in 0..substeps {
        state.delta = rate_limited(state.delta, delta_cmd, cfg.steering_rate_limit)
            .clamp(-cfg.max_steer, cfg.max_steer);
        state = kinematic_step(&state, dt, cfg.wheelbase);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn straight_step() {
        let s = VehicleState {
            v: 10.0,
            ..Default::default()
        };
        let n = kinematic_step(&s, 0.05, 2.65);
        assert_abs_diff_eq!(n.x, 0.5, epsilon = 1e-15);
        assert_eq!(n.y, 0.0);
        assert_eq!(n.psi, 0.0);
    }

    #[test]
    fn zero_dt_is_identity() {
        let s = VehicleState {
            x: 1.0,
            y: 2.0,
            psi: 0.3,
            delta: 0.05,
            v: 12.0,
        };
        assert_eq!(kinematic_step(&s, 0.0, 2.65), s);
    }

    #[test]
    fn five_degree_command_moves_one_and_a_quarter() {
        let cfg = SimConfig::default();
        let s = VehicleState {
            v: 13.4,
            ..Default::default()
        };
        let n = actuate(&s, 5.0_f64.to_radians(), &cfg).unwrap();
        assert_abs_diff_eq!(n.delta, 1.25_f64.to_radians(), epsilon = 1e-12);
        assert_eq!(n.v, s.v);
    }

    #[test]
    fn small_command_reached_in_first_substep() {
        let cfg = SimConfig::default();
        let s = VehicleState {
            v: 13.4,
            ..Default::default()
        };
        let target = 0.1_f64.to_radians();
        let n = actuate(&s, target, &cfg).unwrap();
        assert_eq!(n.delta, target);
    }

    #[test]
    fn held_command_keeps_steering() {
        let cfg = SimConfig::default();
        let s = VehicleState {
            delta: 0.01,
            v: 10.0,
            ..Default::default()
        };
        let n = actuate(&s, 0.01, &cfg).unwrap();
        assert_eq!(n.delta, 0.01);
        assert!(n.x > 0.49);
    }

    #[test]
    fn steering_clamped_and_nan_rejected() {
        let cfg = SimConfig {
            steering_rate_limit: 1.0,
            ..SimConfig::default()
        };
        let s = VehicleState {
            v: 5.0,
            ..Default::default()
        };
        let n = actuate(&s, 2.0, &cfg).unwrap();
        assert_abs_diff_eq!(n.delta, cfg.max_steer, epsilon = 0.0);
        assert!(actuate(&s, f64::NAN, &cfg).is_err());
    }
}
