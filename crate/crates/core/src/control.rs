//! Model-predictive lateral control.
//!
//! The decision vector is the sequence of per-step steering changes over the
//! horizon. Each candidate sequence is rolled out through the kinematic
//! bicycle model, and the quadratic cost
//!
//! ```text
//! Σₖ w_lat·e_lat(k)² + w_head·e_head(k)² + w_rate·(δₖ − δₖ₋₁)²
//! ```
//!
//! is minimized by projected gradient descent with central finite-difference
//! gradients. The box constraint is the steering change the actuator can
//! deliver in one step.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::dynamics::{kinematic_step, VehicleState};
use crate::geometry::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path needs at least 2 waypoints, got {0}")]
    TooFewPoints(usize),
    #[error("waypoint {0} is not finite")]
    NonFinite(usize),
    #[error("waypoint {0} goes backwards in x")]
    NotMonotone(usize),
    #[error("waypoints {0} and {1} coincide")]
    ZeroSpacing(usize, usize),
    #[error("path has no forward extent")]
    NoExtent,
}

/// Desired path in the frame the vehicle state is expressed in, ordered by
/// non-decreasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWaypoints {
    points: Vec<Point2<f64>>,
    first_seg: usize,
    last_seg: usize,
}

/// Path value at a longitudinal coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub y: f64,
    pub heading: f64,
    pub extrapolated: bool,
}

impl PathWaypoints {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::TooFewPoints(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(PathError::NonFinite(i));
            }
        }
        for i in 1..points.len() {
            if points[i].x < points[i - 1].x {
                return Err(PathError::NotMonotone(i));
            }
            if points[i] == points[i - 1] {
                return Err(PathError::ZeroSpacing(i - 1, i));
            }
        }
        let first_seg = (0..points.len() - 1)
            .find(|&i| points[i + 1].x > points[i].x)
            .ok_or(PathError::NoExtent)?;
        let last_seg = (0..points.len() - 1)
            .rev()
            .find(|&i| points[i + 1].x > points[i].x)
            .expect("a forward segment exists");
        Ok(Self {
            points,
            first_seg,
            last_seg,
        })
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn start_x(&self) -> f64 {
        self.points[0].x
    }

    pub fn end_x(&self) -> f64 {
        self.points[self.points.len() - 1].x
    }

    /// Lateral position and heading at `x`, linear between waypoints and
    /// extended along the end segments outside the covered range.
    pub fn sample(&self, x: f64) -> PathSample {
        let n = self.points.len();
        let k = self.points.partition_point(|p| p.x <= x);
        let (seg, extrapolated) = if k == 0 {
            (self.first_seg, true)
        } else if k >= n {
            (self.last_seg, x > self.end_x())
        } else {
            (k - 1, false)
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let t = (x - a.x) / dx;
        PathSample {
            y: a.y + t * dy,
            heading: dy.atan2(dx),
            extrapolated,
        }
    }
}

/// Controller tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon_steps: usize,
    /// Seconds per horizon step.
    pub step_dt: f64,
    pub w_lat: f64,
    pub w_head: f64,
    pub w_rate: f64,
    pub solver_iters: usize,
    /// Finite-difference perturbation, radians.
    pub fd_step: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 20,
            step_dt: 0.05,
            w_lat: 1.0,
            w_head: 2.0,
            w_rate: 50.0,
            solver_iters: 40,
            fd_step: 1e-5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| {
            Err(ConfigError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if self.horizon_steps < 1 {
            return bad("controller.horizon_steps", "must be >= 1");
        }
        if !(self.step_dt > 0.0) {
            return bad("controller.step_dt", "must be > 0");
        }
        let weights = [self.w_lat, self.w_head, self.w_rate];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("controller weights", "must be non-negative");
        }
        if weights.iter().all(|w| *w == 0.0) {
            return bad("controller weights", "at least one must be positive");
        }
        if !(self.fd_step > 0.0) {
            return bad("controller.fd_step", "must be > 0");
        }
        Ok(())
    }

    pub fn horizon_seconds(&self) -> f64 {
        self.horizon_steps as f64 * self.step_dt
    }
}

/// Plant properties the controller models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantModel {
    pub wheelbase: f64,
    /// Largest steering change deliverable within one horizon step, radians.
    pub max_step_change: f64,
    pub max_steer: f64,
}

impl PlantModel {
    /// Derives the per-step steering change from the actuation limits.
    pub fn from_sim(sim: &SimConfig) -> Self {
        let messages = (sim.controller.step_dt * sim.actuation_hz as f64).round().max(1.0);
        Self {
            wheelbase: sim.wheelbase,
            max_step_change: messages * sim.steering_rate_limit,
            max_steer: sim.max_steer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringPlan {
    /// Steering angle to command for the next control period, radians.
    pub command: f64,
    /// The path ended before the horizon and was extended linearly.
    pub extrapolated: bool,
    /// Cost of the returned sequence.
    pub cost: f64,
}

struct Problem<'a> {
    start: VehicleState,
    path: &'a PathWaypoints,
    cfg: &'a ControllerConfig,
    plant: PlantModel,
}

impl Problem<'_> {
    /// Advances one horizon step with steering change `u`, returning the
    /// new state and the stage cost.
    fn step(&self, s: &VehicleState, u: f64) -> (VehicleState, f64) {
        let mut next = *s;
        next.delta = (s.delta + u).clamp(-self.plant.max_steer, self.plant.max_steer);
        let rate = next.delta - s.delta;
        next = kinematic_step(&next, self.cfg.step_dt, self.plant.wheelbase);
        let target = self.path.sample(next.x);
        let e_lat = next.y - target.y;
        let e_head = wrap_angle(next.psi - target.heading);
        let cost = self.cfg.w_lat * e_lat * e_lat
            + self.cfg.w_head * e_head * e_head
            + self.cfg.w_rate * rate * rate;
        (next, cost)
    }

    /// Full rollout; fills `states[k]` with the state before step `k` and
    /// `prefix[k]` with the cost accumulated before step `k`.
    fn rollout_cached(&self, u: &[f64], states: &mut [VehicleState], prefix: &mut [f64]) -> f64 {
        let mut s = self.start;
        let mut cost = 0.0;
        for (k, uk) in u.iter().enumerate() {
            states[k] = s;
            prefix[k] = cost;
            let (n, c) = self.step(&s, *uk);
            s = n;
            cost += c;
        }
        cost
    }

    fn rollout(&self, u: &[f64]) -> f64 {
        let mut s = self.start;
        let mut cost = 0.0;
        for uk in u {
            let (n, c) = self.step(&s, *uk);
            s = n;
            cost += c;
        }
        cost
    }

    /// Cost with `u[k]` replaced by `uk`, resuming from the cached prefix.
    fn rollout_from(&self, u: &[f64], k: usize, uk: f64, states: &[VehicleState], prefix: &[f64]) -> f64 {
        let (mut s, mut cost) = {
            let (n, c) = self.step(&states[k], uk);
            (n, prefix[k] + c)
        };
        for uj in &u[k + 1..] {
            let (n, c) = self.step(&s, *uj);
            s = n;
            cost += c;
        }
        cost
    }
}

/// Plans the steering command for the next control period.
///
/// `state` and `path` must share one frame; the closed loop passes the
/// vehicle at the origin of its own frame.
pub fn plan_steering(
    state: &VehicleState,
    path: &PathWaypoints,
    cfg: &ControllerConfig,
    plant: &PlantModel,
) -> SteeringPlan {
    let n = cfg.horizon_steps;
    let bound = plant.max_step_change;
    let problem = Problem {
        start: *state,
        path,
        cfg,
        plant: *plant,
    };
    let reach = state.x + state.v.abs() * cfg.horizon_seconds();
    let extrapolated = path.end_x() < reach;

    let mut u = vec![0.0; n];
    let mut states = vec![VehicleState::default(); n];
    let mut prefix = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut cost = problem.rollout_cached(&u, &mut states, &mut prefix);
    let mut need_grad = true;
    let mut step = bound;
    let h = cfg.fd_step;
    let mut candidate = vec![0.0; n];

    for _ in 0..cfg.solver_iters {
        if need_grad {
            for k in 0..n {
                let plus = problem.rollout_from(&u, k, u[k] + h, &states, &prefix);
                let minus = problem.rollout_from(&u, k, u[k] - h, &states, &prefix);
                grad[k] = (plus - minus) / (2.0 * h);
            }
            need_grad = false;
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(gmax > 0.0) || !gmax.is_finite() {
            break;
        }
        for k in 0..n {
            candidate[k] = (u[k] - step * grad[k] / gmax).clamp(-bound, bound);
        }
        let c = problem.rollout(&candidate);
        if c < cost {
            u.copy_from_slice(&candidate);
            cost = problem.rollout_cached(&u, &mut states, &mut prefix);
            need_grad = true;
        } else {
            step *= 0.5;
        }
    }

    let command = (state.delta + u.first().copied().unwrap_or(0.0))
        .clamp(-plant.max_steer, plant.max_steer);
    SteeringPlan {
        command,
        extrapolated,
        cost,
    }
}
