//! Closed-loop driving metrics: end-to-end lateral deviation over a rollout
//! and the per-frame simulated lateral deviation, plus lane-center
//! generation from a human driving log.

mod center;

pub use center::{lateral_deviation, CenterPath, Deviation, Segment};

use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::control::{plan_steering, PathWaypoints, PlantModel};
use crate::detectors::{desired_path, DetectionContext, DetectionResult, Detector, DetectorError, LazyFrame, PathOptions};
use crate::dynamics::{actuate, DynamicsError, VehicleState};
use crate::geometry::{Pose, PoseDelta};
use crate::scenario::{Scenario, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrivingError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("scenario has no lane center")]
    NoCenter,
    #[error("scenario has {have} frames, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("evaluation failed: {reason}")]
    EvaluationFailure { reason: String, trace: Box<RolloutTrace> },
    #[error("lane-center generation failed: {0}")]
    GenerationFailure(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    /// No usable path; the previous steering angle was held.
    pub no_path: bool,
    /// The desired path came from one ego line; names the missing side.
    pub fallback: Option<Side>,
    /// The path ended inside the controller horizon.
    pub path_extrapolated: bool,
    /// The deviation lookup ran past the end of the lane center.
    pub deviation_extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub frame: usize,
    pub state: VehicleState,
    /// Steering command issued at this step; absent for the final state.
    pub command: Option<f64>,
    /// Signed lateral deviation in the t = 0 frame, positive left.
    pub deviation: f64,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub metric: String,
    pub scenario: String,
    pub detector: String,
    pub steps: Vec<TraceStep>,
    pub value: Option<f64>,
}

impl RolloutTrace {
    pub fn deviations(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.deviation).collect()
    }

    pub fn no_path_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.flags.no_path).count()
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("trace serializes");
        std::fs::write(path, text)
    }
}

/// Deviation bookkeeping in the frame of the rollout's first state.
struct Reference {
    frame: Pose,
    center: CenterPath,
}

impl Reference {
    fn new(center: &CenterPath, start: &VehicleState) -> Self {
        let frame = start.pose();
        Self {
            frame,
            center: center.in_frame(&frame),
        }
    }

    fn deviation(&self, s: &VehicleState) -> Deviation {
        lateral_deviation(self.frame.to_local(Point2::new(s.x, s.y)), &self.center)
    }
}

struct Stepper<'a> {
    cfg: &'a SimConfig,
    plant: PlantModel,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, DrivingError> {
        cfg.validate().map_err(|e| DrivingError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            plant: PlantModel::from_sim(cfg),
        })
    }

    /// Plans against waypoints in the vehicle's own frame and actuates one
    /// control period at speed `v`.
    fn drive(&self, s: &VehicleState, path: &PathWaypoints, v: f64) -> Result<(VehicleState, f64, bool), DrivingError> {
        let local = VehicleState {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            delta: s.delta,
            v,
        };
        let plan = plan_steering(&local, path, &self.cfg.controller, &self.plant);
        let next = actuate(&VehicleState { v, ..*s }, plan.command, self.cfg)?;
        Ok((next, plan.command, plan.extrapolated))
    }

    fn hold(&self, s: &VehicleState, v: f64) -> Result<VehicleState, DrivingError> {
        Ok(actuate(&VehicleState { v, ..*s }, s.delta, self.cfg)?)
    }

    /// One detection-driven step. Returns the next state, the command, and
    /// the step flags.
    fn detection_step(
        &self,
        scenario: &Scenario,
        s: &VehicleState,
        det: &DetectionResult,
        v: f64,
    ) -> Result<(VehicleState, Option<f64>, StepFlags), DrivingError> {
        let opts = PathOptions::for_scenario(scenario, self.cfg.lookahead, self.cfg.lane_width)
            .with_fit_degree(self.cfg.path_fit_degree);
        let mut flags = StepFlags::default();
        match desired_path(det, &scenario.homography, &opts) {
            Ok(p) => {
                flags.fallback = p.fallback;
                let (next, cmd, ext) = self.drive(s, &p.waypoints, v)?;
                flags.path_extrapolated = ext;
                Ok((next, Some(cmd), flags))
            }
            Err(DetectorError::NoPath) => {
                flags.no_path = true;
                Ok((self.hold(s, v)?, None, flags))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// One step following the ground-truth lane center.
    fn center_step(&self, center: &CenterPath, s: &VehicleState, v: f64) -> Result<(VehicleState, f64, bool), DrivingError> {
        let path = center.in_frame(&s.pose()).waypoints_ahead(self.cfg.lookahead)?;
        self.drive(s, &path, v)
    }
}

fn recorded_state(scenario: &Scenario, frame: usize) -> VehicleState {
    let e = scenario.log.entries[frame];
    VehicleState::at_pose(e.pose(), e.steering, e.speed)
}

fn detect_at(
    scenario: &Scenario,
    detector: &mut dyn Detector,
    frame: usize,
    s: &VehicleState,
) -> Result<DetectionResult, DetectorError> {
    let delta = scenario.log.pose(frame).delta_to(&s.pose());
    let lazy = LazyFrame::new(&scenario.frames[frame].image, &scenario.homography, delta);
    let ctx = DetectionContext {
        scenario,
        frame_index: frame,
        pose_delta: delta,
    };
    detector.detect(&lazy, &ctx)
}

fn step_record(t: usize, frame: usize, s: &VehicleState, dev: Deviation) -> TraceStep {
    TraceStep {
        t,
        frame,
        state: *s,
        command: None,
        deviation: dev.value,
        flags: StepFlags {
            deviation_extrapolated: dev.extrapolated,
            ..StepFlags::default()
        },
    }
}

/// Where a closed-loop rollout starts and how long it runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub start_frame: usize,
    /// Initial displacement from the recorded pose at `start_frame`.
    pub initial_offset: PoseDelta,
    /// Control steps; defaults to the configured end-to-end horizon.
    pub steps: Option<usize>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            start_frame: 0,
            initial_offset: PoseDelta::ZERO,
            steps: None,
        }
    }
}

/// Closed-loop rollout: each step warps the recorded frame to the simulated
/// pose, detects, plans toward the detected lane center and actuates.
pub fn closed_loop(
    scenario: &Scenario,
    detector: &mut dyn Detector,
    cfg: &SimConfig,
    opts: &RolloutOptions,
) -> Result<RolloutTrace, DrivingError> {
    let stepper = Stepper::new(cfg)?;
    let center = scenario.center.as_ref().ok_or(DrivingError::NoCenter)?;
    let steps = opts.steps.unwrap_or(cfg.e2e_horizon);
    let need = opts.start_frame + steps.max(1);
    if scenario.len() < need {
        return Err(DrivingError::TooShort {
            have: scenario.len(),
            need,
        });
    }
    let rec = recorded_state(scenario, opts.start_frame);
    let mut s = VehicleState::at_pose(rec.pose().offset_by(&opts.initial_offset), rec.delta, rec.v);
    let reference = Reference::new(center, &s);
    let mut trace = RolloutTrace {
        metric: "e2e_ld".into(),
        scenario: scenario.id.clone(),
        detector: detector.name(),
        steps: Vec::with_capacity(steps + 1),
        value: None,
    };
    for t in 0..steps {
        let frame = opts.start_frame + t;
        let mut rec = step_record(t, frame, &s, reference.deviation(&s));
        let det = detect_at(scenario, detector, frame, &s)?;
        let (next, cmd, flags) = stepper.detection_step(scenario, &s, &det, scenario.log.speed(frame))?;
        rec.command = cmd;
        rec.flags = StepFlags {
            deviation_extrapolated: rec.flags.deviation_extrapolated,
            ..flags
        };
        trace.steps.push(rec);
        s = next;
    }
    let last_frame = (opts.start_frame + steps).min(scenario.len() - 1);
    trace.steps.push(step_record(steps, last_frame, &s, reference.deviation(&s)));
    let value = trace.steps.iter().map(|st| st.deviation.abs()).fold(0.0, f64::max);
    trace.value = Some(value);
    let no_path = trace.no_path_steps();
    if steps > 0 && no_path as f64 > cfg.max_no_path_fraction * steps as f64 {
        return Err(DrivingError::EvaluationFailure {
            reason: format!("no usable path on {no_path} of {steps} steps"),
            trace: Box::new(trace),
        });
    }
    Ok(trace)
}

/// Maximum absolute lateral deviation over a closed-loop rollout of the
/// configured horizon from the recorded start.
pub fn e2e_ld(
    scenario: &Scenario,
    detector: &mut dyn Detector,
    cfg: &SimConfig,
) -> Result<(f64, RolloutTrace), DrivingError> {
    let trace = closed_loop(scenario, detector, cfg, &RolloutOptions::default())?;
    Ok((trace.value.expect("set by closed_loop"), trace))
}

/// PSLD from the recorded state at `frame_index`.
pub fn psld(
    scenario: &Scenario,
    frame_index: usize,
    detection: &DetectionResult,
    cfg: &SimConfig,
) -> Result<(f64, RolloutTrace), DrivingError> {
    if frame_index >= scenario.len() {
        return Err(DrivingError::TooShort {
            have: scenario.len(),
            need: frame_index + 1,
        });
    }
    psld_from(scenario, frame_index, detection, &recorded_state(scenario, frame_index), cfg)
}

/// One step driven by `detection`, then `T_p - 1` steps following the lane
/// center; the maximum deviation over steps `1..=T_p` divided by `T_p`.
pub fn psld_from(
    scenario: &Scenario,
    frame_index: usize,
    detection: &DetectionResult,
    start: &VehicleState,
    cfg: &SimConfig,
) -> Result<(f64, RolloutTrace), DrivingError> {
    let stepper = Stepper::new(cfg)?;
    let center = scenario.center.as_ref().ok_or(DrivingError::NoCenter)?;
    let tp = cfg.psld_horizon;
    let reference = Reference::new(center, start);
    let mut trace = RolloutTrace {
        metric: "psld".into(),
        scenario: scenario.id.clone(),
        detector: String::new(),
        steps: Vec::with_capacity(tp + 1),
        value: None,
    };
    let frame_at = |t: usize| (frame_index + t).min(scenario.len() - 1);
    let mut rec = step_record(0, frame_index, start, reference.deviation(start));
    let (mut s, cmd, flags) = stepper.detection_step(scenario, start, detection, scenario.log.speed(frame_index))?;
    rec.command = cmd;
    rec.flags = StepFlags {
        deviation_extrapolated: rec.flags.deviation_extrapolated,
        ..flags
    };
    trace.steps.push(rec);
    for t in 1..tp {
        let frame = frame_at(t);
        let mut rec = step_record(t, frame, &s, reference.deviation(&s));
        let (next, cmd, ext) = stepper.center_step(center, &s, scenario.log.speed(frame))?;
        rec.command = Some(cmd);
        rec.flags.path_extrapolated = ext;
        trace.steps.push(rec);
        s = next;
    }
    trace.steps.push(step_record(tp, frame_at(tp), &s, reference.deviation(&s)));
    let peak = trace.steps[1..].iter().map(|st| st.deviation.abs()).fold(0.0, f64::max);
    let value = peak / tp as f64;
    trace.value = Some(value);
    Ok((value, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsldMode {
    /// Every frame at its recorded pose.
    Benign,
    /// Frames along the closed-loop trajectory driven by the detector.
    Attack,
}

/// Per-frame PSLD values for frames `0..len - T_p`.
pub fn psld_rollout(
    scenario: &Scenario,
    detector: &mut dyn Detector,
    cfg: &SimConfig,
    mode: PsldMode,
) -> Result<Vec<f64>, DrivingError> {
    let stepper = Stepper::new(cfg)?;
    let tp = cfg.psld_horizon;
    let n = scenario.len().checked_sub(tp).filter(|n| *n > 0).ok_or(DrivingError::TooShort {
        have: scenario.len(),
        need: tp + 1,
    })?;
    let mut out = Vec::with_capacity(n);
    match mode {
        PsldMode::Benign => {
            for f in 0..n {
                let s = recorded_state(scenario, f);
                let det = detect_at(scenario, detector, f, &s)?;
                out.push(psld_from(scenario, f, &det, &s, cfg)?.0);
            }
        }
        PsldMode::Attack => {
            let mut s = recorded_state(scenario, 0);
            let mut no_path = 0usize;
            for f in 0..n {
                let det = detect_at(scenario, detector, f, &s)?;
                out.push(psld_from(scenario, f, &det, &s, cfg)?.0);
                let (next, cmd, _) = stepper.detection_step(scenario, &s, &det, scenario.log.speed(f))?;
                no_path += usize::from(cmd.is_none());
                s = next;
            }
            if no_path as f64 > cfg.max_no_path_fraction * n as f64 {
                return Err(DrivingError::EvaluationFailure {
                    reason: format!("no usable path on {no_path} of {n} steps"),
                    trace: Box::new(RolloutTrace {
                        metric: "psld".into(),
                        scenario: scenario.id.clone(),
                        detector: detector.name(),
                        steps: Vec::new(),
                        value: None,
                    }),
                });
            }
        }
    }
    Ok(out)
}

/// Lane center generated by driving the controller along the human
/// trajectory at the recorded speed, resampled every meter.
pub fn generate_road_center(scenario: &Scenario, cfg: &SimConfig) -> Result<CenterPath, DrivingError> {
    let stepper = Stepper::new(cfg)?;
    let n = scenario.len();
    let need = (2.0 * f64::from(cfg.control_hz)).ceil() as usize;
    if n < need {
        return Err(DrivingError::TooShort { have: n, need });
    }
    let mut human: Vec<Point2<f64>> = Vec::with_capacity(n);
    for e in &scenario.log.entries {
        let p = Point2::new(e.x, e.y);
        if human.last().map_or(true, |q| (p - q).norm() > 1e-6) {
            human.push(p);
        }
    }
    let human = CenterPath::new(human).map_err(|e| DrivingError::GenerationFailure(e.to_string()))?;
    let mut s = recorded_state(scenario, 0);
    let mut positions = vec![Point2::new(s.x, s.y)];
    for t in 0..n - 1 {
        let (next, _, _) = stepper.center_step(&human, &s, scenario.log.speed(t))?;
        s = next;
        let p = Point2::new(s.x, s.y);
        let q = human.point_at(human.project(p));
        let dist = (p - q).norm();
        if !(dist <= 5.0) {
            return Err(DrivingError::GenerationFailure(format!(
                "controller diverged by {dist:.2} m at step {}",
                t + 1
            )));
        }
        positions.push(p);
    }
    CenterPath::resample(&positions, 1.0).map_err(|e| DrivingError::GenerationFailure(e.to_string()))
}
