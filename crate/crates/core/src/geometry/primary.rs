use super::{Rect, SkinMask, WristSet};

/// Fixed wrist-box size used when no skin is detected: a quarter of each
/// frame dimension.
pub fn default_fixed_box(frame: (f64, f64)) -> (f64, f64) {
    (frame.0 / 4.0, frame.1 / 4.0)
}

/// Locates the primary (hands) region from skin pixels and wrist points.
///
/// * neither found: the whole frame;
/// * skin only: tight bounding box of all skin pixels;
/// * wrists only: a `fixed_box` centred on the wrist centroid;
/// * both: wrists fix the left, right and bottom edges, the topmost skin
///   pixel fixes the top edge. With a single wrist the horizontal extent is
///   `wrist.x ± fixed_box.0 / 2`.
///
/// Results are clipped to the frame and widened to at least one pixel per
/// side.
pub fn primary_region(
    mask: Option<&SkinMask>,
    wrists: &WristSet,
    frame: (f64, f64),
    fixed_box: (f64, f64),
) -> Rect {
    let (fw, fh) = frame;
    let skin = mask.and_then(SkinMask::pixel_bounds);
    let pts = wrists.points();

    let (l, t, r, b) = match (skin, pts.is_empty()) {
        (None, true) => return Rect::new(0.0, 0.0, fw, fh),
        (Some((x0, y0, x1, y1)), true) => {
            (x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
        }
        (None, false) => {
            let n = pts.len() as f64;
            let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
            let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
            let (bw, bh) = fixed_box;
            (cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
        }
        (Some((_, skin_top, _, _)), false) => {
            let (left, right) = if pts.len() == 1 {
                (pts[0].x - fixed_box.0 / 2.0, pts[0].x + fixed_box.0 / 2.0)
            } else {
                (pts[0].x.min(pts[1].x), pts[0].x.max(pts[1].x))
            };
            let bottom = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let top = skin_top as f64;
            (left, top.min(bottom), right, top.max(bottom))
        }
    };
    clip_with_min_extent(l, t, r, b, fw, fh)
}

fn clip_with_min_extent(l: f64, t: f64, r: f64, b: f64, fw: f64, fh: f64) -> Rect {
    let (l, r) = clip_axis(l, r, fw);
    let (t, b) = clip_axis(t, b, fh);
    Rect::from_edges(l, t, r, b)
}

fn clip_axis(lo: f64, hi: f64, limit: f64) -> (f64, f64) {
    let mut lo = lo.clamp(0.0, limit);
    let mut hi = hi.clamp(0.0, limit);
    let min_extent = limit.min(1.0);
    if hi - lo < min_extent {
        let mid = (lo + hi) / 2.0;
        lo = mid - min_extent / 2.0;
        hi = mid + min_extent / 2.0;
        if lo < 0.0 {
            hi -= lo;
            lo = 0.0;
        }
        if hi > limit {
            lo -= hi - limit;
            hi = limit;
        }
    }
    (lo, hi)
}
