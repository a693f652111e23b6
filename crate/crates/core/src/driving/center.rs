use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::DrivingError;
use crate::control::PathWaypoints;
use crate::geometry::Pose;

/// Ground-truth lane center in a metric ground frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterPath {
    points: Vec<Point2<f64>>,
    arc: Vec<f64>,
}

/// Straight (`curvature = 0`) or constant-curvature piece of an analytic
/// center line. Positive curvature turns left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: f64,
    #[serde(default)]
    pub curvature: f64,
}

/// Result of a by-x lookup in a reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    /// Positive when the point is left of the path.
    pub value: f64,
    pub extrapolated: bool,
}

impl CenterPath {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self, DrivingError> {
        if points.len() < 2 {
            return Err(DrivingError::InvalidPath(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for i in 1..points.len() {
            let a = points[i - 1];
            let b = points[i];
            if !b.x.is_finite() || !b.y.is_finite() || !a.x.is_finite() || !a.y.is_finite() {
                return Err(DrivingError::InvalidPath(format!("point {i} is not finite")));
            }
            let d = (b - a).norm();
            if !(d > 1e-9) {
                return Err(DrivingError::InvalidPath(format!(
                    "points {} and {i} coincide",
                    i - 1
                )));
            }
            arc.push(arc[i - 1] + d);
        }
        Ok(Self { points, arc })
    }

    /// Integrates analytic segments from `origin`, sampling every `spacing`
    /// meters (and at each segment end).
    pub fn from_segments(
        origin: Pose,
        segments: &[Segment],
        spacing: f64,
    ) -> Result<Self, DrivingError> {
        if !(spacing > 0.0) || segments.is_empty() {
            return Err(DrivingError::InvalidPath(
                "segments need a positive spacing and at least one piece".into(),
            ));
        }
        let mut pts = vec![Point2::new(origin.x, origin.y)];
        let (mut x, mut y, mut th) = (origin.x, origin.y, origin.heading);
        for seg in segments {
            if !(seg.length > 0.0) || !seg.curvature.is_finite() {
                return Err(DrivingError::InvalidPath(format!("bad segment {seg:?}")));
            }
            let n = (seg.length / spacing).ceil().max(1.0) as usize;
            let ds = seg.length / n as f64;
            for _ in 0..n {
                let k = seg.curvature;
                if k.abs() < 1e-12 {
                    x += ds * th.cos();
                    y += ds * th.sin();
                } else {
                    let th1 = th + k * ds;
                    x += (th1.sin() - th.sin()) / k;
                    y -= (th1.cos() - th.cos()) / k;
                    th = th1;
                }
                pts.push(Point2::new(x, y));
            }
        }
        Self::new(pts)
    }

    /// Resamples a polyline at equal arc-length `spacing`; the final point
    /// is always kept.
    pub fn resample(points: &[Point2<f64>], spacing: f64) -> Result<Self, DrivingError> {
        let mut dedup: Vec<Point2<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if dedup.last().map_or(true, |q| (p - q).norm() > 1e-9) {
                dedup.push(*p);
            }
        }
        let raw = Self::new(dedup)?;
        let total = raw.length();
        let n = (total / spacing).floor() as usize;
        let mut out: Vec<Point2<f64>> = (0..=n).map(|i| raw.point_at(i as f64 * spacing)).collect();
        if total - n as f64 * spacing > 1e-6 {
            out.push(*raw.points.last().expect("non-empty"));
        }
        Self::new(out)
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("non-empty")
    }

    /// Point at arc length `s`, extended along the end segments outside
    /// `[0, length]`.
    pub fn point_at(&self, s: f64) -> Point2<f64> {
        let seg = self.segment_at(s);
        let t = (s - self.arc[seg]) / (self.arc[seg + 1] - self.arc[seg]);
        self.points[seg] + (self.points[seg + 1] - self.points[seg]) * t
    }

    /// Tangent heading at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let seg = self.segment_at(s);
        let d = self.points[seg + 1] - self.points[seg];
        d.y.atan2(d.x)
    }

    fn segment_at(&self, s: f64) -> usize {
        let k = self.arc.partition_point(|a| *a <= s);
        k.clamp(1, self.arc.len() - 1) - 1
    }

    /// Arc length of the orthogonal projection of `p` onto the nearest
    /// segment.
    pub fn project(&self, p: Point2<f64>) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let d = self.points[i + 1] - a;
            let len2 = d.norm_squared();
            let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
            let q = a + d * t;
            let dist = (p - q).norm_squared();
            if dist < best.0 {
                best = (dist, self.arc[i] + t * len2.sqrt());
            }
        }
        best.1
    }

    /// The same path expressed in the local frame of `frame`.
    pub fn in_frame(&self, frame: &Pose) -> Self {
        let points = self.points.iter().map(|p| frame.to_local(*p)).collect();
        Self {
            points,
            arc: self.arc.clone(),
        }
    }

    /// Points offset `offset` meters along the left normal.
    pub fn offset_points(&self, offset: f64) -> Vec<Point2<f64>> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let a = self.points[i.saturating_sub(1)];
                let b = self.points[(i + 1).min(n - 1)];
                let d = (b - a).normalize();
                self.points[i] + nalgebra::Vector2::new(-d.y, d.x) * offset
            })
            .collect()
    }

    /// Index range around the point nearest `origin` over which x strictly
    /// increases.
    fn monotone_window(&self, near: Point2<f64>) -> (usize, usize) {
        let pts = &self.points;
        let mut k = 0;
        let mut best = f64::INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = (p - near).norm_squared();
            if d < best {
                best = d;
                k = i;
            }
        }
        let mut lo = k;
        while lo > 0 && pts[lo - 1].x < pts[lo].x {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < pts.len() && pts[hi + 1].x > pts[hi].x {
            hi += 1;
        }
        (lo, hi)
    }

    /// Waypoints for the controller with the path already expressed in the
    /// vehicle frame: the forward monotone stretch up to `lookahead` meters.
    pub fn waypoints_ahead(&self, lookahead: f64) -> Result<PathWaypoints, DrivingError> {
        let (lo, hi) = self.monotone_window(Point2::origin());
        let mut pts: Vec<Point2<f64>> = Vec::new();
        for i in lo..=hi {
            let p = self.points[i];
            if p.x < -2.0 {
                continue;
            }
            pts.push(p);
            if p.x > lookahead {
                break;
            }
        }
        if pts.len() < 2 {
            // Fall back to the two window points closest to the vehicle.
            let a = if hi > lo { hi - 1 } else { lo };
            pts = vec![self.points[a], self.points[hi.max(a + 1).min(self.points.len() - 1)]];
        }
        PathWaypoints::new(pts).map_err(|e| DrivingError::InvalidPath(e.to_string()))
    }
}

/// Lateral offset of `position` from `path` at equal x, with both in the
/// same reference frame. Lookup is restricted to the stretch of the path
/// around `position` where x increases monotonically.
pub fn lateral_deviation(position: Point2<f64>, path: &CenterPath) -> Deviation {
    let (lo, hi) = path.monotone_window(position);
    let pts = &path.points[lo..=hi];
    if pts.len() < 2 {
        return Deviation {
            value: position.y - pts[0].y,
            extrapolated: true,
        };
    }
    let k = pts.partition_point(|p| p.x <= position.x);
    let n = pts.len();
    let (seg, extrapolated) = if k == 0 {
        (0, position.x < pts[0].x)
    } else if k >= n {
        (n - 2, position.x > pts[n - 1].x)
    } else {
        (k - 1, false)
    };
    let a = pts[seg];
    let b = pts[seg + 1];
    let t = (position.x - a.x) / (b.x - a.x);
    Deviation {
        value: position.y - (a.y + t * (b.y - a.y)),
        extrapolated,
    }
}
