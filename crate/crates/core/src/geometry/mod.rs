//! Ground-plane camera geometry.
//!
//! Image pixels `(u, v)` map to ground points `(x, y)` in a vehicle frame
//! with `x` forward and `y` to the left, both in meters. All image-space
//! operations (frame synthesis, patch rendering, resizing) live in
//! [`image_ops`].

pub mod image_ops;
mod pinhole;

pub use image_ops::{
    adapt_frame_geometry, psnr, render_patch, synthesize_frame, CropRect, PatchOutcome,
    PatchPlacement, uniform_patch, warp_inverse,
};
pub use pinhole::PinholeCamera;

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Projective `w` below which a pixel is treated as on or above the horizon.
pub const HORIZON_EPS: f64 = 1e-9;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("homography is not invertible (|det| = {det:e})")]
    Singular { det: f64 },
    #[error("homography contains non-finite entries")]
    NonFinite,
    #[error("degenerate projection at ({0:.3}, {1:.3}): point is on or beyond the horizon")]
    Degenerate(f64, f64),
    #[error("no lane point projects below the horizon")]
    EmptyProjection,
    #[error("invalid crop {0:?} for a {1}x{2} image")]
    InvalidCrop(CropRect, u32, u32),
    #[error("output size must be positive, got {0}x{1}")]
    InvalidSize(u32, u32),
    #[error("calibration needs at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
}

/// Planar pose in a ground frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Expresses a world point in this pose's local frame.
    pub fn to_local(&self, p: Point2<f64>) -> Point2<f64> {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Expresses a local point of this pose in the world frame.
    pub fn to_world(&self, p: Point2<f64>) -> Point2<f64> {
        let (s, c) = self.heading.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Displacement of `other` relative to `self`, expressed in `self`'s frame.
    pub fn delta_to(&self, other: &Pose) -> PoseDelta {
        let local = self.to_local(Point2::new(other.x, other.y));
        PoseDelta::new(local.x, local.y, wrap_angle(other.heading - self.heading))
    }

    /// The pose reached by applying `delta` in this pose's frame.
    pub fn offset_by(&self, delta: &PoseDelta) -> Pose {
        let p = self.to_world(Point2::new(delta.dx, delta.dy));
        Pose::new(p.x, p.y, self.heading + delta.dpsi)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Displacement of a simulated camera pose relative to the recorded pose,
/// in the recorded vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta { dx: 0.0, dy: 0.0, dpsi: 0.0 };

    pub fn new(dx: f64, dy: f64, dpsi: f64) -> Self {
        Self { dx, dy, dpsi }
    }

    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.dpsi == 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.dx.is_finite()
            && self.dy.is_finite()
            && self.dpsi.is_finite()
            && self.dpsi.abs() < std::f64::consts::FRAC_PI_2
    }

    /// Moves by `self`, then by `next` expressed in the frame reached after `self`.
    pub fn then(&self, next: &PoseDelta) -> PoseDelta {
        let (s, c) = self.dpsi.sin_cos();
        PoseDelta::new(
            self.dx + c * next.dx - s * next.dy,
            self.dy + s * next.dx + c * next.dy,
            self.dpsi + next.dpsi,
        )
    }

    /// Rigid ground-plane map taking a point in the recorded frame to the
    /// displaced frame: translate by `(-dx, -dy)`, then rotate by `-dpsi`.
    pub fn ground_motion(&self) -> Matrix3<f64> {
        let (s, c) = self.dpsi.sin_cos();
        // R(-dpsi) = [[c, s], [-s, c]]
        Matrix3::new(
            c,
            s,
            -(c * self.dx + s * self.dy),
            -s,
            c,
            s * self.dx - c * self.dy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Image-to-ground homography of a flat road, normalized to a unit
/// bottom-right entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundHomography {
    to_ground: Matrix3<f64>,
    to_image: Matrix3<f64>,
    // Sign of the projective w for points in front of the camera, per
    // direction (the two normalizations can disagree in sign).
    image_sign: f64,
    ground_sign: f64,
}

impl GroundHomography {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let to_ground = normalize(matrix);
        let det = to_ground.determinant();
        if !(det.abs() > SINGULAR_DET) {
            return Err(GeometryError::Singular { det });
        }
        let to_image = to_ground
            .try_inverse()
            .map(normalize)
            .ok_or(GeometryError::Singular { det })?;
        // Far-forward ground points are in front of any sane camera; depth is
        // affine on the ground plane, so its sign there fixes the orientation.
        let far = to_image * Vector3::new(1.0e4, 0.0, 1.0);
        let image_sign = if far.z >= 0.0 { 1.0 } else { -1.0 };
        let far_px = far / far.z;
        let back = to_ground * far_px;
        let ground_sign = if back.z >= 0.0 { 1.0 } else { -1.0 };
        Ok(Self {
            to_ground,
            to_image,
            image_sign,
            ground_sign,
        })
    }

    pub fn from_row_major(values: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.to_ground;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Estimates the homography from pixel/ground correspondences with the
    /// normalized direct linear transform.
    pub fn from_correspondences(
        pairs: &[(Point2<f64>, Point2<f64>)],
    ) -> Result<Self, GeometryError> {
        if pairs.len() < 4 {
            return Err(GeometryError::TooFewCorrespondences(pairs.len()));
        }
        let (tp, pix) = conditioning(pairs.iter().map(|p| p.0));
        let (tg, gnd) = conditioning(pairs.iter().map(|p| p.1));
        let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
        for (k, (p, g)) in pix.iter().zip(&gnd).enumerate() {
            let (u, v) = (p.x, p.y);
            let (x, y) = (g.x, g.y);
            let r0 = [u, v, 1.0, 0.0, 0.0, 0.0, -x * u, -x * v, -x];
            let r1 = [0.0, 0.0, 0.0, u, v, 1.0, -y * u, -y * v, -y];
            for j in 0..9 {
                a[(2 * k, j)] = r0[j];
                a[(2 * k + 1, j)] = r1[j];
            }
        }
        // Null vector of A = eigenvector of AᵀA with the smallest eigenvalue.
        let ata = a.transpose() * &a;
        let eig = ata.symmetric_eigen();
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("nine eigenvalues");
        let h = eig.eigenvectors.column(idx);
        let hn = Matrix3::from_row_slice(h.as_slice());
        let tg_inv = tg.try_inverse().ok_or(GeometryError::Singular { det: 0.0 })?;
        Self::new(tg_inv * hn * tp)
    }

    /// Image-to-ground matrix (unit bottom-right entry).
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.to_ground
    }

    /// Ground-to-image matrix (unit bottom-right entry).
    pub fn inverse_matrix(&self) -> &Matrix3<f64> {
        &self.to_image
    }

    pub fn image_to_ground(&self, pixel: Point2<f64>) -> Result<Point2<f64>, GeometryError> {
        let q = self.to_ground * Vector3::new(pixel.x, pixel.y, 1.0);
        if q.z * self.ground_sign <= HORIZON_EPS {
            return Err(GeometryError::Degenerate(pixel.x, pixel.y));
        }
        Ok(Point2::new(q.x / q.z, q.y / q.z))
    }

    pub fn ground_to_image(&self, ground: Point2<f64>) -> Result<Point2<f64>, GeometryError> {
        let q = self.to_image * Vector3::new(ground.x, ground.y, 1.0);
        if q.z * self.image_sign <= HORIZON_EPS {
            return Err(GeometryError::Degenerate(ground.x, ground.y));
        }
        Ok(Point2::new(q.x / q.z, q.y / q.z))
    }
}

/// Scales a projective matrix so its bottom-right entry is one; falls back to
/// unit Frobenius norm when that entry vanishes.
fn normalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let br = m[(2, 2)];
    if br.abs() > 1e-12 {
        m / br
    } else {
        m / m.norm()
    }
}

/// Hartley conditioning: translate to the centroid, scale to mean distance √2.
fn conditioning(points: impl Iterator<Item = Point2<f64>>) -> (Matrix3<f64>, Vec<Point2<f64>>) {
    let pts: Vec<Point2<f64>> = points.collect();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_d = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_d > 0.0 {
        std::f64::consts::SQRT_2 / mean_d
    } else {
        1.0
    };
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts
        .iter()
        .map(|p| Point2::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    (t, out)
}

/// Pixel-to-pixel warp taking a pixel of the recorded frame to its location in
/// the frame seen from the displaced pose: `H⁻¹ ∘ T(delta) ∘ H`.
pub fn compose_pose_warp(h: &GroundHomography, delta: &PoseDelta) -> Matrix3<f64> {
    normalize(h.to_image * delta.ground_motion() * h.to_ground)
}

/// Applies a 3×3 projective map to a point; `None` when `w` vanishes.
pub fn apply_projective(m: &Matrix3<f64>, p: Point2<f64>) -> Option<Point2<f64>> {
    let q = m * Vector3::new(p.x, p.y, 1.0);
    if q.z.abs() <= HORIZON_EPS {
        None
    } else {
        Some(Point2::new(q.x / q.z, q.y / q.z))
    }
}

/// Lanes projected to the ground plane.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BevLanes {
    pub lanes: Vec<Vec<Point2<f64>>>,
    /// Points dropped because they were on or above the horizon.
    pub dropped: usize,
}

/// Projects image-space lane polylines to the ground plane, keeping point
/// order and dropping points on or above the horizon.
pub fn project_lanes_to_bev(
    lanes: &[Vec<Point2<f64>>],
    h: &GroundHomography,
) -> Result<BevLanes, GeometryError> {
    let mut out = BevLanes::default();
    let mut total = 0usize;
    for lane in lanes {
        let mut bev = Vec::with_capacity(lane.len());
        for p in lane {
            total += 1;
            match h.image_to_ground(*p) {
                Ok(g) => bev.push(g),
                Err(_) => out.dropped += 1,
            }
        }
        out.lanes.push(bev);
    }
    if total > 0 && out.dropped == total {
        return Err(GeometryError::EmptyProjection);
    }
    Ok(out)
}
