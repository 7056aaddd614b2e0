//! Primary-region localisation and rotation-augmentation geometry.
//!
//! Coordinates are pixels with the origin at the top-left corner and `y`
//! pointing down. Rotations by `theta` map `p` to `c + R(theta) (p - c)` with
//! `R = [[cos, -sin], [sin, cos]]`. Angles are radians.

mod crop;
mod pbm;
mod primary;
mod rotation;

use serde::{Deserialize, Serialize};

pub use crop::{augment_frame_geometry, inscribed_crop, rotate_rect, FrameAugmentation, InscribedCrop};
pub use pbm::{read_pbm, write_pbm_p4};
pub use primary::{default_fixed_box, primary_region};
pub use rotation::{RotationSchedule, SineTerm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    /// Rotates `self` about `center` by `theta`.
    pub fn rotate_about(self, center: Point2D, theta: f64) -> Point2D {
        let (s, c) = theta.sin_cos();
        let dx = self.x - center.x;
        let dy = self.y - center.y;
        Point2D {
            x: center.x + c * dx - s * dy,
            y: center.y + s * dx + c * dy,
        }
    }
}

/// Axis-aligned rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn from_edges(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Rect {
            x: left,
            y: top,
            w: right - left,
            h: bottom - top,
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point2D {
        Point2D::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Corners in clockwise order starting at the top-left.
    pub fn corners(&self) -> [Point2D; 4] {
        [
            Point2D::new(self.x, self.y),
            Point2D::new(self.right(), self.y),
            Point2D::new(self.right(), self.bottom()),
            Point2D::new(self.x, self.bottom()),
        ]
    }

    /// Overlap with positive area, if any.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let left = self.x.max(other.x);
        let top = self.y.max(other.y);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        (right > left && bottom > top).then(|| Rect::from_edges(left, top, right, bottom))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn contains_rect(&self, other: &Rect, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    pub fn bounding(points: &[Point2D]) -> Rect {
        let (mut l, mut t) = (f64::INFINITY, f64::INFINITY);
        let (mut r, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            l = l.min(p.x);
            t = t.min(p.y);
            r = r.max(p.x);
            b = b.max(p.y);
        }
        Rect::from_edges(l, t, r, b)
    }
}

/// Binary skin raster, row-major, `true` = skin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkinMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl SkinMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(SkinMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        SkinMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Marks the inclusive pixel block `[x0, x1] x [y0, y1]`.
    pub fn fill(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.set(x, y, true);
            }
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Inclusive pixel bounds `(min_x, min_y, max_x, max_y)` of skin pixels.
    pub fn pixel_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds
    }
}

/// Zero, one or two wrist centres.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WristSet {
    points: Vec<Point2D>,
}

impl WristSet {
    pub fn none() -> Self {
        WristSet::default()
    }

    /// Fails when more than two points are given or a point lies outside
    /// the `width x height` frame.
    pub fn new(points: Vec<Point2D>, width: f64, height: f64) -> crate::Result<Self> {
        if points.len() > 2 {
            return Err(crate::Error::Validation(format!(
                "at most 2 wrist points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height))
        {
            return Err(crate::Error::Validation(format!(
                "wrist ({}, {}) outside {}x{} frame",
                p.x, p.y, width, height
            )));
        }
        Ok(WristSet { points })
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_intersection_and_corners() {
        let a = Rect::new(0.0, 0.0, 4.0, 2.0);
        let b = Rect::new(3.0, 1.0, 5.0, 5.0);
        assert_eq!(a.intersect(&b), Some(Rect::new(3.0, 1.0, 1.0, 1.0)));
        assert_eq!(a.intersect(&Rect::new(4.0, 0.0, 1.0, 1.0)), None);
        assert_eq!(Rect::bounding(&a.corners()), a);
    }

    #[test]
    fn wrist_set_limits() {
        let p = Point2D::new(1.0, 1.0);
        assert!(WristSet::new(vec![p, p, p], 10.0, 10.0).is_err());
        assert!(WristSet::new(vec![Point2D::new(11.0, 1.0)], 10.0, 10.0).is_err());
        assert_eq!(WristSet::new(vec![p], 10.0, 10.0).unwrap().points().len(), 1);
    }

    #[test]
    fn mask_bounds() {
        let mut m = SkinMask::empty(40, 40);
        assert!(m.is_empty());
        assert_eq!(m.pixel_bounds(), None);
        m.fill(10, 10, 20, 30);
        assert_eq!(m.pixel_bounds(), Some((10, 10, 20, 30)));
    }
}
