use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::{Point2D, Rect};
use crate::error::{Error, Result};

/// Largest axis-aligned rectangle inside a `w x h` frame rotated about its
/// centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InscribedCrop {
    pub width: f64,
    pub height: f64,
    /// The crop in original frame coordinates, centred on the frame centre.
    pub crop: Rect,
}

/// Computes the largest inscribed rectangle of a `w x h` frame rotated by
/// `theta`, `|theta| <= pi/4`.
///
/// With `s = min(w, h)` and `l = max(w, h)` the rectangle touches all four
/// rotated edges while `s / l > 2 |sin| |cos|`; otherwise only the two long
/// edges bind and its size is fixed by the short side alone.
pub fn inscribed_crop(w: f64, h: f64, theta: f64) -> Result<InscribedCrop> {
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::Domain(format!("frame size must be positive, got {w}x{h}")));
    }
    if !(theta.abs() <= FRAC_PI_4) {
        return Err(Error::Domain(format!("|theta| must be <= pi/4, got {theta}")));
    }
    let (sin, cos) = (theta.sin().abs(), theta.cos().abs());
    let short = w.min(h);
    let long = w.max(h);
    let (width, height) = if short / long > 2.0 * sin * cos {
        let cos2 = (2.0 * theta).cos();
        ((w * cos - h * sin) / cos2, (h * cos - w * sin) / cos2)
    } else if w > h {
        (short / (2.0 * sin), short / (2.0 * cos))
    } else {
        (short / (2.0 * cos), short / (2.0 * sin))
    };
    let crop = Rect::new((w - width) / 2.0, (h - height) / 2.0, width, height);
    Ok(InscribedCrop { width, height, crop })
}

/// Rotates the corners of `rect` about `center` and returns their bounding box.
pub fn rotate_rect(rect: &Rect, theta: f64, center: Point2D) -> Rect {
    let corners = rect.corners().map(|p| p.rotate_about(center, theta));
    Rect::bounding(&corners)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAugmentation {
    pub theta: f64,
    /// Crop rectangle in original frame coordinates.
    pub crop: Rect,
    /// Primary region in crop coordinates; `None` when rotation pushed it
    /// entirely outside the crop.
    pub primary: Option<Rect>,
}

/// Transfers a primary-region box through a frame rotation and crop.
///
/// The box is rotated about the frame centre, re-boxed from its rotated
/// corners, intersected with the inscribed crop and expressed relative to
/// the crop's top-left corner.
pub fn augment_frame_geometry(primary: &Rect, frame: (f64, f64), theta: f64) -> Result<FrameAugmentation> {
    let (fw, fh) = frame;
    let crop = inscribed_crop(fw, fh, theta)?.crop;
    let rotated = rotate_rect(primary, theta, Point2D::new(fw / 2.0, fh / 2.0));
    let primary = rotated
        .intersect(&crop)
        .map(|r| r.translate(-crop.x, -crop.y));
    Ok(FrameAugmentation { theta, crop, primary })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    use super::*;

    #[test]
    fn zero_angle_is_identity() {
        let c = inscribed_crop(640.0, 480.0, 0.0).unwrap();
        assert_eq!((c.width, c.height), (640.0, 480.0));
        assert_eq!(c.crop, Rect::new(0.0, 0.0, 640.0, 480.0));
    }

    #[test]
    fn square_at_45_degrees() {
        let c = inscribed_crop(10.0, 10.0, FRAC_PI_4).unwrap();
        assert!((c.width - 10.0 / SQRT_2).abs() < 1e-9);
        assert!((c.height - 10.0 / SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn out_of_domain_angle_errors() {
        assert!(inscribed_crop(10.0, 10.0, 0.8).is_err());
        assert!(inscribed_crop(0.0, 10.0, 0.1).is_err());
    }

    #[test]
    fn rotate_rect_quarter_turn_of_square() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        let q = rotate_rect(&r, FRAC_PI_2, r.center());
        for (a, b) in [(q.x, 0.0), (q.y, 0.0), (q.w, 1.0), (q.h, 1.0)] {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(rotate_rect(&r, 0.0, Point2D::new(3.0, 7.0)), r);
    }

    #[test]
    fn rotate_rect_matches_corner_oracle() {
        let r = Rect::new(0.0, 0.0, 4.0, 2.0);
        let t = 30f64.to_radians();
        let (s, c) = (t.sin(), t.cos());
        // hand-applied 2x2 rotation of each corner about (2, 1)
        let pts: Vec<(f64, f64)> = [(0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (0.0, 2.0)]
            .iter()
            .map(|&(x, y)| {
                let (dx, dy): (f64, f64) = (x - 2.0, y - 1.0);
                (2.0 + c * dx - s * dy, 1.0 + s * dx + c * dy)
            })
            .collect();
        let minx = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let maxx = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let miny = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let maxy = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let q = rotate_rect(&r, t, Point2D::new(2.0, 1.0));
        assert!((q.x - minx).abs() < 1e-12 && (q.right() - maxx).abs() < 1e-12);
        assert!((q.y - miny).abs() < 1e-12 && (q.bottom() - maxy).abs() < 1e-12);
    }

    #[test]
    fn augment_identity_and_drop() {
        let p = Rect::new(100.0, 100.0, 50.0, 40.0);
        let a = augment_frame_geometry(&p, (640.0, 480.0), 0.0).unwrap();
        assert_eq!(a.primary, Some(p));
        assert_eq!(a.crop, Rect::new(0.0, 0.0, 640.0, 480.0));

        let corner = Rect::new(0.0, 0.0, 20.0, 20.0);
        let a = augment_frame_geometry(&corner, (640.0, 480.0), 0.5).unwrap();
        assert_eq!(a.primary, None);
    }
}
