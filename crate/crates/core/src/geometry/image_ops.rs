//! Image-space operations on 8-bit RGB frames: pose-conditioned frame
//! synthesis, road-patch rendering and crop/resize adaptation.
//!
//! Pixel `(i, j)` has its center at coordinates `(i, j)`. Sampling is always
//! bilinear with edge replication.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::{compose_pose_warp, GeometryError, GroundHomography, PoseDelta, HORIZON_EPS};

/// Pixel-space rectangle, right and bottom exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl CropRect {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            left: 0,
            top: 0,
            right: width,
            bottom: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.right.saturating_sub(self.left)
    }

    pub fn height(&self) -> u32 {
        self.bottom.saturating_sub(self.top)
    }
}

#[derive(Clone, Copy)]
struct Bounds {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn sample_rgb(img: &RgbImage, b: Bounds, u: f64, v: f64) -> [f64; 3] {
    let u = u.clamp(b.x0, b.x1);
    let v = v.clamp(b.y0, b.y1);
    let xf = u.floor();
    let yf = v.floor();
    let tx = u - xf;
    let ty = v - yf;
    let x0 = xf as u32;
    let y0 = yf as u32;
    let x1 = if tx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if ty > 0.0 { y0 + 1 } else { y0 };
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    out
}

fn sample_rgba(img: &RgbaImage, u: f64, v: f64) -> [f64; 4] {
    let u = u.clamp(0.0, (img.width() - 1) as f64);
    let v = v.clamp(0.0, (img.height() - 1) as f64);
    let xf = u.floor();
    let yf = v.floor();
    let tx = u - xf;
    let ty = v - yf;
    let x0 = xf as u32;
    let y0 = yf as u32;
    let x1 = if tx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if ty > 0.0 { y0 + 1 } else { y0 };
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 4];
    for c in 0..4 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resamples `src` through `dst_to_src`, producing an image of the same size.
pub fn warp_inverse(src: &RgbImage, dst_to_src: &Matrix3<f64>) -> RgbImage {
    let (w, h) = src.dimensions();
    let bounds = Bounds {
        x0: 0.0,
        y0: 0.0,
        x1: (w - 1) as f64,
        y1: (h - 1) as f64,
    };
    let mut out = RgbImage::new(w, h);
    for (i, j, px) in out.enumerate_pixels_mut() {
        let q = dst_to_src * Vector3::new(i as f64, j as f64, 1.0);
        let (u, v) = if q.z.abs() > HORIZON_EPS {
            (q.x / q.z, q.y / q.z)
        } else {
            (i as f64, j as f64)
        };
        let s = sample_rgb(src, bounds, u, v);
        *px = Rgb([to_u8(s[0]), to_u8(s[1]), to_u8(s[2])]);
    }
    out
}

/// Synthesizes the frame seen from a pose displaced by `delta` from the pose
/// that recorded `src`, assuming a flat road.
pub fn synthesize_frame(src: &RgbImage, h: &GroundHomography, delta: &PoseDelta) -> RgbImage {
    if delta.is_zero() {
        return src.clone();
    }
    let fwd = compose_pose_warp(h, delta);
    match fwd.try_inverse() {
        Some(inv) => warp_inverse(src, &inv),
        None => src.clone(),
    }
}

/// Ground rectangle for a road patch, in vehicle-frame meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPlacement {
    /// Distance ahead of the near edge.
    pub x0: f64,
    /// Lateral extent.
    pub width: f64,
    /// Longitudinal extent.
    pub length: f64,
    /// Lateral position of the patch center (positive left).
    #[serde(default)]
    pub y_center: f64,
}

impl PatchPlacement {
    pub fn new(x0: f64, width: f64, length: f64) -> Self {
        Self {
            x0,
            width,
            length,
            y_center: 0.0,
        }
    }

    /// Rectangle corners: near-left, near-right, far-right, far-left.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        let l = self.y_center + self.width / 2.0;
        let r = self.y_center - self.width / 2.0;
        let far = self.x0 + self.length;
        [
            Point2::new(self.x0, l),
            Point2::new(self.x0, r),
            Point2::new(far, r),
            Point2::new(far, l),
        ]
    }

    fn contains(&self, g: Point2<f64>) -> bool {
        let half = self.width / 2.0;
        g.x >= self.x0
            && g.x <= self.x0 + self.length
            && g.y >= self.y_center - half
            && g.y <= self.y_center + half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PatchOutcome {
    pub touched_pixels: usize,
    /// Set when the placement is behind the camera or entirely out of view.
    pub warning: bool,
}

/// Maps `patch` onto the ground rectangle and alpha-composites it over `dst`.
///
/// Patch column 0 is the left edge (positive lateral), row 0 the far edge.
/// Only pixels whose ground projection falls inside the rectangle change.
pub fn render_patch(
    dst: &RgbImage,
    h: &GroundHomography,
    patch: &RgbaImage,
    placement: &PatchPlacement,
) -> (RgbImage, PatchOutcome) {
    let mut out = dst.clone();
    let valid = placement.x0 > 0.0
        && placement.width > 0.0
        && placement.length > 0.0
        && patch.width() > 0
        && patch.height() > 0;
    if !valid {
        return (
            out,
            PatchOutcome {
                touched_pixels: 0,
                warning: true,
            },
        );
    }
    let pw = patch.width() as f64;
    let ph = patch.height() as f64;
    let left = placement.y_center + placement.width / 2.0;
    let far = placement.x0 + placement.length;
    let mut touched = 0usize;
    for (i, j, px) in out.enumerate_pixels_mut() {
        let g = match h.image_to_ground(Point2::new(i as f64, j as f64)) {
            Ok(g) => g,
            Err(_) => continue,
        };
        if !placement.contains(g) {
            continue;
        }
        touched += 1;
        let pu = (left - g.y) / placement.width * pw - 0.5;
        let pv = (far - g.x) / placement.length * ph - 0.5;
        let s = sample_rgba(patch, pu, pv);
        let a = s[3] / 255.0;
        if a <= 0.0 {
            continue;
        }
        let d = px.0;
        *px = Rgb([
            to_u8(a * s[0] + (1.0 - a) * d[0] as f64),
            to_u8(a * s[1] + (1.0 - a) * d[1] as f64),
            to_u8(a * s[2] + (1.0 - a) * d[2] as f64),
        ]);
    }
    (
        out,
        PatchOutcome {
            touched_pixels: touched,
            warning: touched == 0,
        },
    )
}

/// Crops `src` and resizes the crop bilinearly to `out_width × out_height`.
pub fn adapt_frame_geometry(
    src: &RgbImage,
    crop: CropRect,
    out_width: u32,
    out_height: u32,
) -> Result<RgbImage, GeometryError> {
    let (w, h) = src.dimensions();
    if crop.width() == 0 || crop.height() == 0 || crop.right > w || crop.bottom > h {
        return Err(GeometryError::InvalidCrop(crop, w, h));
    }
    if out_width == 0 || out_height == 0 {
        return Err(GeometryError::InvalidSize(out_width, out_height));
    }
    let bounds = Bounds {
        x0: crop.left as f64,
        y0: crop.top as f64,
        x1: (crop.right - 1) as f64,
        y1: (crop.bottom - 1) as f64,
    };
    let sx = crop.width() as f64 / out_width as f64;
    let sy = crop.height() as f64 / out_height as f64;
    let mut out = RgbImage::new(out_width, out_height);
    for (i, j, px) in out.enumerate_pixels_mut() {
        let u = crop.left as f64 + (i as f64 + 0.5) * sx - 0.5;
        let v = crop.top as f64 + (j as f64 + 0.5) * sy - 0.5;
        let s = sample_rgb(src, bounds, u, v);
        *px = Rgb([to_u8(s[0]), to_u8(s[1]), to_u8(s[2])]);
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB over `region` (whole image when `None`).
pub fn psnr(a: &RgbImage, b: &RgbImage, region: Option<CropRect>) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions(), "psnr needs equal sizes");
    let r = region.unwrap_or_else(|| CropRect::full(a.width(), a.height()));
    let mut se = 0.0;
    let mut n = 0usize;
    for j in r.top..r.bottom {
        for i in r.left..r.right {
            let p = a.get_pixel(i, j).0;
            let q = b.get_pixel(i, j).0;
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n.max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Uniform RGBA patch.
pub fn uniform_patch(width: u32, height: u32, color: Rgba<u8>) -> RgbaImage {
    RgbaImage::from_pixel(width, height, color)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PinholeCamera;

    fn checkerboard(w: u32, h: u32, cell: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |i, j| {
            if ((i / cell) + (j / cell)) % 2 == 0 {
                Rgb([200, 200, 200])
            } else {
                Rgb([40, 40, 40])
            }
        })
    }

    #[test]
    fn full_crop_same_size_is_identity() {
        let img = checkerboard(37, 23, 3);
        let out = adapt_frame_geometry(&img, CropRect::full(37, 23), 37, 23).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn downscale_preserves_checker_means() {
        let img = checkerboard(64, 48, 4);
        let out = adapt_frame_geometry(&img, CropRect::full(64, 48), 32, 24).unwrap();
        for (i, j, p) in out.enumerate_pixels() {
            let expect = if ((i / 2) + (j / 2)) % 2 == 0 { 200 } else { 40 };
            assert!((p.0[0] as i32 - expect).abs() <= 1, "({i},{j}) = {:?}", p);
        }
    }

    #[test]
    fn zero_area_crop_rejected() {
        let img = checkerboard(10, 10, 2);
        let crop = CropRect {
            left: 3,
            top: 2,
            right: 3,
            bottom: 8,
        };
        assert!(matches!(
            adapt_frame_geometry(&img, crop, 5, 5),
            Err(GeometryError::InvalidCrop(..))
        ));
        assert!(adapt_frame_geometry(&img, CropRect::full(10, 10), 0, 5).is_err());
    }

    #[test]
    fn transparent_patch_is_a_no_op() {
        let cam = PinholeCamera::tusimple_like();
        let h = cam.homography();
        let dst = checkerboard(cam.width, cam.height, 16);
        let patch = uniform_patch(8, 8, Rgba([255, 0, 0, 0]));
        let (out, outcome) = render_patch(&dst, &h, &patch, &PatchPlacement::new(7.0, 3.6, 36.0));
        assert_eq!(out, dst);
        assert!(outcome.touched_pixels > 0);
    }

    #[test]
    fn patch_behind_camera_warns() {
        let cam = PinholeCamera::tusimple_like();
        let h = cam.homography();
        let dst = checkerboard(cam.width, cam.height, 16);
        let patch = uniform_patch(8, 8, Rgba([255, 0, 0, 255]));
        let (out, outcome) =
            render_patch(&dst, &h, &patch, &PatchPlacement::new(-10.0, 3.6, 5.0));
        assert_eq!(out, dst);
        assert!(outcome.warning);
        // Far off to the side: in front but out of view.
        let side = PatchPlacement {
            y_center: 500.0,
            ..PatchPlacement::new(7.0, 3.6, 10.0)
        };
        let (out, outcome) = render_patch(&dst, &h, &patch, &side);
        assert_eq!(out, dst);
        assert!(outcome.warning);
    }

    #[test]
    fn zero_delta_synthesis_is_bit_identical() {
        let cam = PinholeCamera::tusimple_like();
        let img = checkerboard(cam.width, cam.height, 7);
        let out = synthesize_frame(&img, &cam.homography(), &PoseDelta::ZERO);
        assert_eq!(out, img);
    }
}
