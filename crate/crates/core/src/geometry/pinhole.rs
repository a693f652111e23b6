use nalgebra::{Matrix3, Point2};
use serde::{Deserialize, Serialize};

use super::GroundHomography;

/// Distortion-free, roll-free pinhole camera pitched down over a flat road.
///
/// Used to build calibrated homographies for synthetic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Mounting height above the road, meters.
    pub mount_height: f64,
    /// Downward pitch, radians.
    pub pitch: f64,
}

impl PinholeCamera {
    /// 1280×720 front camera with a TuSimple-like field of view.
    pub fn tusimple_like() -> Self {
        Self {
            width: 1280,
            height: 720,
            fx: 1000.0,
            fy: 1000.0,
            cx: 640.0,
            cy: 360.0,
            mount_height: 1.5,
            pitch: 4.0_f64.to_radians(),
        }
    }

    /// Ground-to-image matrix acting on `(x, y, 1)`.
    pub fn ground_to_image_matrix(&self) -> Matrix3<f64> {
        let (s, c) = self.pitch.sin_cos();
        let h = self.mount_height;
        Matrix3::new(
            self.cx * c,
            -self.fx,
            self.cx * h * s,
            -self.fy * s + self.cy * c,
            0.0,
            self.fy * h * c + self.cy * h * s,
            c,
            0.0,
            h * s,
        )
    }

    pub fn homography(&self) -> GroundHomography {
        let g = self.ground_to_image_matrix();
        let inv = g.try_inverse().expect("pinhole ground map is invertible");
        GroundHomography::new(inv).expect("pinhole homography is valid")
    }

    /// Image row of the horizon line.
    pub fn horizon_row(&self) -> f64 {
        self.cy - self.fy * self.pitch.tan()
    }

    /// Direct projection, independent of the homography path.
    pub fn project(&self, ground: Point2<f64>) -> Option<Point2<f64>> {
        let (s, c) = self.pitch.sin_cos();
        let h = self.mount_height;
        let xc = -ground.y;
        let yc = -ground.x * s + h * c;
        let zc = ground.x * c + h * s;
        if zc <= 1e-9 {
            return None;
        }
        Some(Point2::new(
            self.cx + self.fx * xc / zc,
            self.cy + self.fy * yc / zc,
        ))
    }

    /// Ground distance ahead imaged at row `v` on the optical column.
    pub fn ground_distance_at_row(&self, v: f64) -> Option<f64> {
        let angle = self.pitch + ((v - self.cy) / self.fy).atan();
        if angle <= 1e-9 {
            None
        } else {
            Some(self.mount_height / angle.tan())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homography_agrees_with_direct_projection() {
        let cam = PinholeCamera::tusimple_like();
        let h = cam.homography();
        for &(x, y) in &[(5.0, 0.0), (12.0, 1.85), (40.0, -3.7), (7.0, -1.8)] {
            let g = Point2::new(x, y);
            let a = cam.project(g).unwrap();
            let b = h.ground_to_image(g).unwrap();
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn row_distance_matches_projection() {
        let cam = PinholeCamera::tusimple_like();
        let p = cam.project(Point2::new(20.0, 0.0)).unwrap();
        let d = cam.ground_distance_at_row(p.y).unwrap();
        assert!((d - 20.0).abs() < 1e-9);
        assert!(cam.ground_distance_at_row(cam.horizon_row() - 1.0).is_none());
    }
}
