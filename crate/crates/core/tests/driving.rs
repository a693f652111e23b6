use lanedrive::config::SimConfig;
use lanedrive::detectors::{DetectionContext, DetectionResult, Detector, DetectorError, LazyFrame, Synthetic};
use lanedrive::driving::{
    closed_loop, e2e_ld, generate_road_center, psld, psld_rollout, DrivingError, PsldMode, RolloutOptions,
    RolloutTrace,
};
use lanedrive::fixtures::{road_scenario, RoadSpec};
use lanedrive::geometry::PoseDelta;
use lanedrive::scenario::{DrivingLog, LogEntry, Scenario};
use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn straight() -> Scenario {
    road_scenario(&RoadSpec::straight("straight", 13.4, 30))
}

fn detect_now(s: &Scenario, det: &Synthetic, frame: usize) -> DetectionResult {
    DetectionResult::from_polylines(det.lines(s, frame, &PoseDelta::ZERO).unwrap())
}

struct Blind;

impl Detector for Blind {
    fn name(&self) -> String {
        "blind".into()
    }

    fn detect(&mut self, _: &LazyFrame<'_>, _: &DetectionContext<'_>) -> Result<DetectionResult, DetectorError> {
        Ok(DetectionResult::from_polylines(Vec::new()))
    }
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let cfg = SimConfig::default();
    for s in [straight(), road_scenario(&RoadSpec::arc("arc", 20.0, 0.003, 30))] {
        let (v, trace) = e2e_ld(&s, &mut Synthetic::GroundTruth, &cfg).unwrap();
        assert!(v < 0.05, "{}: {v}", s.id);
        assert_eq!(trace.steps.len(), cfg.e2e_horizon + 1);
        assert!(trace.deviations().iter().all(|d| d.abs() < 1e-3), "{}", s.id);
    }
}

#[test]
fn bias_is_tracked_with_its_sign() {
    let cfg = SimConfig::default();
    let s = straight();
    for b in [0.3, -0.3] {
        let (v, trace) = e2e_ld(&s, &mut Synthetic::Biased(b), &cfg).unwrap();
        assert!((0.2..=0.4).contains(&v), "{v}");
        let last = trace.steps.last().unwrap().deviation;
        assert_eq!(last.signum(), b.signum());
    }
}

#[test]
fn bias_response_is_monotone() {
    let cfg = SimConfig::default();
    let s = straight();
    let mut prev = 0.0;
    for k in 1..=10 {
        let b = 0.05 * k as f64;
        let (v, _) = e2e_ld(&s, &mut Synthetic::Biased(b), &cfg).unwrap();
        let (vn, _) = e2e_ld(&s, &mut Synthetic::Biased(-b), &cfg).unwrap();
        assert!(v > prev, "b = {b}: {v} <= {prev}");
        assert!((v - vn).abs() < 1e-3 * v);
        prev = v;
    }
}

#[test]
fn zero_horizon_returns_initial_deviation() {
    let cfg = SimConfig::default();
    let s = straight();
    let opts = RolloutOptions {
        initial_offset: PoseDelta::new(0.0, 0.25, 0.0),
        steps: Some(0),
        ..Default::default()
    };
    let trace = closed_loop(&s, &mut Synthetic::GroundTruth, &cfg, &opts).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.value, Some(trace.steps[0].deviation.abs()));
    assert!((trace.steps[0].deviation - 0.25).abs() < 1e-12);
}

#[test]
fn rollouts_are_deterministic() {
    let cfg = SimConfig::default();
    let s = straight();
    let mut a = Synthetic::Noisy { sigma: 3.0, seed: 11 };
    let mut b = a.clone();
    let (_, ta) = e2e_ld(&s, &mut a, &cfg).unwrap();
    let (_, tb) = e2e_ld(&s, &mut b, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
}

#[test]
fn blind_detector_fails_with_partial_trace() {
    let cfg = SimConfig::default();
    match e2e_ld(&straight(), &mut Blind, &cfg) {
        Err(DrivingError::EvaluationFailure { trace, .. }) => {
            assert_eq!(trace.no_path_steps(), cfg.e2e_horizon);
            assert!(trace.deviations().iter().all(|d| d.abs() < 1e-9));
        }
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn missing_center_and_short_scenarios_rejected() {
    let cfg = SimConfig::default();
    let mut s = straight();
    s.center = None;
    assert!(matches!(e2e_ld(&s, &mut Synthetic::GroundTruth, &cfg), Err(DrivingError::NoCenter)));
    let short = road_scenario(&RoadSpec::straight("short", 13.4, 5));
    assert!(matches!(
        e2e_ld(&short, &mut Synthetic::GroundTruth, &cfg),
        Err(DrivingError::TooShort { have: 5, need: 20 })
    ));
}

#[test]
fn psld_examples() {
    let cfg = SimConfig::default();
    let s = straight();
    let (v, trace) = psld(&s, 3, &detect_now(&s, &Synthetic::GroundTruth, 3), &cfg).unwrap();
    assert!(v < 1e-3);
    assert_eq!(trace.steps.len(), cfg.psld_horizon + 1);

    let one = SimConfig {
        psld_horizon: 1,
        ..SimConfig::default()
    };
    let (v1, t1) = psld(&s, 0, &detect_now(&s, &Synthetic::Biased(0.3), 0), &one).unwrap();
    assert_eq!(v1, t1.steps[1].deviation.abs());

    let mut prev = 0.0;
    for b in [0.1, 0.2, 0.4] {
        let (v, t) = psld(&s, 0, &detect_now(&s, &Synthetic::Biased(b), 0), &cfg).unwrap();
        assert!(v > prev);
        let peak = t.steps[1..].iter().map(|st| st.deviation.abs()).fold(0.0, f64::max);
        assert!(v <= peak / cfg.psld_horizon as f64 + 1e-15);
        assert!(t.steps[1].deviation > 0.0);
        prev = v;
    }
    let (_, t) = psld(&s, 0, &detect_now(&s, &Synthetic::Biased(-0.2), 0), &cfg).unwrap();
    assert!(t.steps[1].deviation < 0.0);
}

#[test]
fn psld_rollout_lengths_and_benign_ground_truth() {
    let cfg = SimConfig::default();
    let s = straight();
    for mode in [PsldMode::Benign, PsldMode::Attack] {
        let v = psld_rollout(&s, &mut Synthetic::GroundTruth, &cfg, mode).unwrap();
        assert_eq!(v.len(), s.len() - cfg.psld_horizon);
        assert!(v.iter().all(|x| (0.0..1e-2).contains(x)));
    }
    let benign = psld_rollout(&s, &mut Synthetic::Biased(0.3), &cfg, PsldMode::Benign).unwrap();
    let attack = psld_rollout(&s, &mut Synthetic::Biased(0.3), &cfg, PsldMode::Attack).unwrap();
    // Benign frames all start on the center; attacked frames start from the
    // drifted trajectory, so their deviation keeps growing.
    assert!(benign.iter().all(|x| (x - benign[0]).abs() < 1e-6));
    assert_eq!(attack[0], benign[0]);
    assert!(attack.windows(2).all(|w| w[1] > w[0]));
}

fn log_only(entries: Vec<LogEntry>) -> Scenario {
    let mut s = road_scenario(&RoadSpec::straight("log", 13.4, entries.len()));
    s.log = DrivingLog::new(entries).unwrap();
    s.center = None;
    s
}

fn straight_log(n: usize, noise: Option<f64>) -> Vec<LogEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, noise.unwrap_or(1.0)).unwrap();
    (0..n)
        .map(|i| LogEntry {
            x: 13.4 * 0.05 * i as f64,
            y: match noise {
                Some(_) if i > 0 => normal.sample(&mut rng),
                _ => 0.0,
            },
            heading: 0.0,
            speed: 13.4,
            steering: 0.0,
        })
        .collect()
}

#[test]
fn road_center_from_straight_log() {
    let cfg = SimConfig::default();
    let c = generate_road_center(&log_only(straight_log(80, None)), &cfg).unwrap();
    assert!(c.points().iter().all(|p| p.y.abs() < 1e-3));
    let arc = c.arc_lengths();
    assert!(arc.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 1.0 + 1e-9));
}

#[test]
fn road_center_smooths_noise() {
    let cfg = SimConfig::default();
    let log = straight_log(200, Some(0.1));
    let rms_in = (log.iter().map(|e| e.y * e.y).sum::<f64>() / log.len() as f64).sqrt();
    let c = generate_road_center(&log_only(log), &cfg).unwrap();
    let pts = c.points();
    let rms_out = (pts.iter().map(|p| p.y * p.y).sum::<f64>() / pts.len() as f64).sqrt();
    assert!(rms_out < rms_in, "{rms_out} >= {rms_in}");
}

#[test]
fn road_center_from_circular_log() {
    let cfg = SimConfig::default();
    let k = 0.005;
    let log: Vec<LogEntry> = (0..200)
        .map(|i| {
            let a = k * 13.4 * 0.05 * i as f64;
            LogEntry {
                x: a.sin() / k,
                y: (1.0 - a.cos()) / k,
                heading: a,
                speed: 13.4,
                steering: (2.65 * k as f64).atan(),
            }
        })
        .collect();
    let c = generate_road_center(&log_only(log), &cfg).unwrap();
    // Circle through points spread over the second half of the output.
    let pts = c.points();
    let n = pts.len();
    let (a, b, d) = (pts[n / 2], pts[(3 * n) / 4], pts[n - 2]);
    let curvature = circumcurvature(a, b, d);
    assert!((curvature - k).abs() < 0.05 * k, "{curvature}");
}

fn circumcurvature(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    let ab = (b - a).norm();
    let bc = (c - b).norm();
    let ca = (a - c).norm();
    let cross = (b - a).perp(&(c - a)).abs();
    2.0 * cross / (ab * bc * ca)
}

#[test]
fn road_center_needs_two_seconds() {
    let cfg = SimConfig::default();
    assert!(matches!(
        generate_road_center(&log_only(straight_log(30, None)), &cfg),
        Err(DrivingError::TooShort { .. })
    ));
}

#[test]
fn trace_json_round_trip() {
    let cfg = SimConfig::default();
    let (_, trace) = e2e_ld(&straight(), &mut Synthetic::Biased(0.2), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    trace.write_json(&path).unwrap();
    let back: RolloutTrace = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, trace);
}
