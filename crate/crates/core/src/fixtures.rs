//! Procedural road scenarios: analytic lane centers, a human log that drives
//! exactly along them, rendered frames and ground-truth annotations.

use std::sync::Arc;

use image::{Rgb, RgbImage};
use nalgebra::Point2;

use crate::detectors::{project_bev_lines, DetectorSpec, Synthetic};
use crate::driving::{CenterPath, Segment};
use crate::geometry::{GroundHomography, PinholeCamera, Pose, PoseDelta};
use crate::scenario::{
    tusimple_h_samples, DrivingLog, FrameRecord, FrameRenderer, ImageSource, LaneAnnotation, LogEntry, Scenario,
    SENTINEL,
};

pub const FRAME_DT: f64 = 0.05;
const LEAD_IN: f64 = 20.0;
const TRAIL: f64 = 250.0;
const WHEELBASE: f64 = 2.65;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSpec {
    pub id: String,
    /// m/s.
    pub speed: f64,
    /// Signed curvature after the lead-in, 1/m, positive left.
    pub curvature: f64,
    pub frames: usize,
    pub lane_width: f64,
}

impl RoadSpec {
    pub fn straight(id: &str, speed: f64, frames: usize) -> Self {
        Self {
            id: id.into(),
            speed,
            curvature: 0.0,
            frames,
            lane_width: 3.7,
        }
    }

    pub fn arc(id: &str, speed: f64, curvature: f64, frames: usize) -> Self {
        Self {
            curvature,
            ..Self::straight(id, speed, frames)
        }
    }
}

/// Flat gray road with solid white markings on both ego lines.
pub struct RoadRenderer {
    homography: GroundHomography,
    poses: Vec<Pose>,
    center: CenterPath,
    lane_width: f64,
    width: u32,
    height: u32,
}

fn speckle(x: f64, y: f64) -> u8 {
    let (i, j) = ((x * 10.0).floor() as i64, (y * 10.0).floor() as i64);
    let mut h = (i.wrapping_mul(73_856_093) ^ j.wrapping_mul(19_349_663)) as u64;
    h ^= h >> 13;
    h = h.wrapping_mul(0x5bd1_e995);
    h ^= h >> 15;
    (h % 24) as u8
}

impl FrameRenderer for RoadRenderer {
    fn render(&self, index: usize) -> RgbImage {
        let pose = self.poses[index.min(self.poses.len() - 1)];
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb([150, 180, 215]));
        let half = self.lane_width / 2.0;
        let lines: Vec<Vec<Point2<f64>>> = [half, -half]
            .iter()
            .map(|o| {
                self.center
                    .offset_points(*o)
                    .iter()
                    .map(|p| pose.to_local(*p))
                    .filter(|p| p.x > 0.5 && p.x < 200.0)
                    .collect()
            })
            .collect();
        let rows: Vec<u32> = (0..self.height).collect();
        let marks = project_bev_lines(&lines, &self.homography, &rows, u32::MAX);
        for v in 0..self.height {
            for u in 0..self.width {
                let Ok(g) = self.homography.image_to_ground(Point2::new(f64::from(u), f64::from(v))) else {
                    continue;
                };
                if g.x > 300.0 {
                    continue;
                }
                let w = pose.to_world(g);
                let s = 90 + speckle(w.x, w.y);
                img.put_pixel(u, v, Rgb([s, s, s]));
            }
        }
        for line in &marks {
            for p in line {
                let v = p.y as u32;
                // Marking half-width of 0.075 m at this row's depth.
                let Ok(g) = self.homography.image_to_ground(*p) else { continue };
                let Ok(edge) = self.homography.ground_to_image(Point2::new(g.x, g.y - 0.075)) else {
                    continue;
                };
                let hw = (edge.x - p.x).abs().max(0.5);
                let lo = (p.x - hw).round().max(0.0) as i64;
                let hi = (p.x + hw).round().min(f64::from(self.width) - 1.0) as i64;
                for u in lo..=hi {
                    img.put_pixel(u as u32, v, Rgb([235, 235, 235]));
                }
            }
        }
        img
    }
}

/// Pose after `d` meters on a constant-curvature arc from the origin.
fn arc_pose(curvature: f64, d: f64) -> Pose {
    if curvature == 0.0 {
        return Pose::new(d, 0.0, 0.0);
    }
    let a = curvature * d;
    Pose::new(a.sin() / curvature, (1.0 - a.cos()) / curvature, a)
}

/// Scenario driven along the analytic center of `spec` with the
/// TuSimple-like camera. Annotations carry the two ego lines.
pub fn road_scenario(spec: &RoadSpec) -> Scenario {
    let camera = PinholeCamera::tusimple_like();
    let homography = camera.homography();
    let travel = spec.speed * FRAME_DT * spec.frames as f64;
    let segments = [
        Segment {
            length: LEAD_IN,
            curvature: 0.0,
        },
        Segment {
            length: travel + TRAIL,
            curvature: spec.curvature,
        },
    ];
    let center = CenterPath::from_segments(Pose::new(-LEAD_IN, 0.0, 0.0), &segments, 0.5)
        .expect("fixture segments are valid");
    let steering = (WHEELBASE * spec.curvature).atan();
    let entries: Vec<LogEntry> = (0..spec.frames)
        .map(|i| {
            let d = spec.speed * FRAME_DT * i as f64;
            let pose = arc_pose(spec.curvature, d);
            LogEntry {
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                speed: spec.speed,
                steering,
            }
        })
        .collect();
    let poses: Vec<Pose> = entries.iter().map(LogEntry::pose).collect();
    let renderer = Arc::new(RoadRenderer {
        homography: homography.clone(),
        poses,
        center: center.clone(),
        lane_width: spec.lane_width,
        width: camera.width,
        height: camera.height,
    });
    let frames = (0..spec.frames)
        .map(|i| FrameRecord {
            frame_index: i,
            timestamp: FRAME_DT * i as f64,
            image: ImageSource::Procedural {
                renderer: renderer.clone(),
                index: i,
            },
            annotation: None,
        })
        .collect();
    let mut scenario = Scenario {
        id: spec.id.clone(),
        image_width: camera.width,
        image_height: camera.height,
        frames,
        log: DrivingLog::new(entries).expect("fixture log is valid"),
        homography,
        center: Some(center),
        lane_width: spec.lane_width,
        h_samples: tusimple_h_samples(),
    };
    for i in 0..scenario.len() {
        let lines = Synthetic::GroundTruth
            .lines(&scenario, i, &PoseDelta::ZERO)
            .expect("fixture has a center");
        scenario.frames[i].annotation = Some(annotate(&lines, &scenario.h_samples));
    }
    scenario
}

/// TuSimple annotation from lines sampled at exactly the annotation rows.
pub fn annotate(lines: &[Vec<Point2<f64>>], h_samples: &[u32]) -> LaneAnnotation {
    let lanes = lines
        .iter()
        .map(|l| {
            h_samples
                .iter()
                .map(|r| {
                    l.iter()
                        .find(|p| p.y == f64::from(*r))
                        .map_or(SENTINEL, |p| p.x)
                })
                .collect()
        })
        .collect();
    LaneAnnotation::new(h_samples.to_vec(), lanes).expect("annotation rows are consistent")
}

/// The straight 13.4 m/s scenario, ten seconds long.
pub fn stability_scenario() -> Scenario {
    road_scenario(&RoadSpec::straight("straight-13", 13.4, 201))
}

/// Roads of the correlation suite.
pub fn suite_roads() -> Vec<RoadSpec> {
    vec![
        RoadSpec::straight("straight-13", 13.4, 30),
        RoadSpec::straight("straight-25", 25.0, 30),
        RoadSpec::arc("arc-left", 20.0, 0.002, 30),
        RoadSpec::arc("arc-right", 20.0, -0.002, 30),
    ]
}

/// Detectors of the correlation suite.
pub fn suite_detectors() -> Vec<DetectorSpec> {
    vec![
        DetectorSpec::Biased { meters: 0.1 },
        DetectorSpec::Biased { meters: -0.25 },
        DetectorSpec::Biased { meters: 0.5 },
        DetectorSpec::Noisy { sigma: 4.0, seed: 7 },
        DetectorSpec::Curved {
            curvature: 0.01,
            onset: 20.0,
        },
        DetectorSpec::Curved {
            curvature: -0.02,
            onset: 15.0,
        },
    ]
}

/// Every (road, detector) pair: 24 entries.
pub fn correlation_suite() -> Vec<(Scenario, DetectorSpec)> {
    let mut out = Vec::new();
    for road in suite_roads() {
        let s = road_scenario(&road);
        for d in suite_detectors() {
            out.push((s.clone(), d));
        }
    }
    out
}

/// Straight roads used for the accuracy-versus-drivability comparison.
pub fn straight_roads() -> Vec<RoadSpec> {
    vec![
        RoadSpec::straight("straight-13", 13.4, 30),
        RoadSpec::straight("straight-20", 20.0, 30),
        RoadSpec::straight("straight-25", 25.0, 30),
        RoadSpec {
            lane_width: 3.5,
            ..RoadSpec::straight("straight-narrow", 16.0, 30)
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_follows_center() {
        let s = road_scenario(&RoadSpec::arc("a", 20.0, 0.002, 25));
        let c = s.center.as_ref().unwrap();
        for e in &s.log.entries {
            let p = Point2::new(e.x, e.y);
            let q = c.point_at(c.project(p));
            assert!((p - q).norm() < 1e-4);
        }
        let p0 = s.log.pose(0);
        assert!(p0.x.abs() < 1e-9 && p0.y.abs() < 1e-9 && p0.heading.abs() < 1e-12);
        s.validate().unwrap();
    }

    #[test]
    fn annotations_hold_ego_lines() {
        let s = road_scenario(&RoadSpec::straight("s", 13.4, 3));
        let a = s.frames[0].annotation.as_ref().unwrap();
        assert_eq!(a.lanes.len(), 2);
        let bottom = a.h_samples.len() - 1;
        // Left line left of center, right line right of it.
        assert!(a.lanes[0][bottom] < 640.0 && a.lanes[1][bottom] > 640.0);
        assert!(a.lanes[0].iter().filter(|x| **x != SENTINEL).count() > 30);
    }

    #[test]
    fn rendered_markings_match_annotation() {
        let s = road_scenario(&RoadSpec::straight("s", 13.4, 2));
        let img = s.frames[1].image.load().unwrap();
        let a = s.frames[1].annotation.as_ref().unwrap();
        for (k, row) in a.h_samples.iter().enumerate() {
            let x = a.lanes[1][k];
            if x == SENTINEL || *row < 400 {
                continue;
            }
            assert_eq!(img.get_pixel(x.round() as u32, *row).0, [235, 235, 235]);
        }
    }
}
