use std::f64::consts::FRAC_PI_4;

use egoact_core::geometry::{augment_frame_geometry, inscribed_crop, rotate_rect, Point2D, Rect, RotationSchedule, SineTerm};
use proptest::prelude::*;

proptest! {
    #[test]
    fn crop_is_centred_and_inside_the_frame(w in 1.0f64..4000.0, h in 1.0f64..4000.0, theta in -FRAC_PI_4..=FRAC_PI_4) {
        let c = inscribed_crop(w, h, theta).unwrap();
        let r = c.crop;
        prop_assert!(r.is_valid());
        prop_assert!((r.center().x - w / 2.0).abs() < 1e-9 * w.max(h));
        prop_assert!((r.center().y - h / 2.0).abs() < 1e-9 * w.max(h));
        prop_assert!(r.w <= w * (1.0 + 1e-12) && r.h <= h * (1.0 + 1e-12));
        // the crop survives the inverse rotation
        let back = rotate_rect(&r, -theta, Point2D::new(w / 2.0, h / 2.0));
        let frame = Rect::new(0.0, 0.0, w, h);
        prop_assert!(frame.contains_rect(&back, 1e-6 * w.max(h)));
    }

    #[test]
    fn crop_shrinks_with_angle(w in 10.0f64..2000.0, h in 10.0f64..2000.0, a in 0.0f64..FRAC_PI_4, b in 0.0f64..FRAC_PI_4) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = inscribed_crop(w, h, lo).unwrap().crop.area();
        let large = inscribed_crop(w, h, hi).unwrap().crop.area();
        prop_assert!(large <= small * (1.0 + 1e-9));
        prop_assert_eq!(inscribed_crop(w, h, a).unwrap().crop, inscribed_crop(w, h, -a).unwrap().crop);
    }

    #[test]
    fn transferred_primary_box_stays_in_the_crop(
        x in 0.0f64..600.0, y in 0.0f64..440.0, bw in 1.0f64..40.0, bh in 1.0f64..40.0, theta in -FRAC_PI_4..=FRAC_PI_4,
    ) {
        let aug = augment_frame_geometry(&Rect::new(x, y, bw, bh), (640.0, 480.0), theta).unwrap();
        if let Some(p) = aug.primary {
            let crop = Rect::new(0.0, 0.0, aug.crop.w, aug.crop.h);
            prop_assert!(crop.contains_rect(&p, 1e-9));
        }
    }
}

#[test]
fn wide_frames_switch_to_the_two_edge_regime() {
    // very wide frame: only the long edges bind, so the height is h / (2 cos)
    let (w, h, t) = (1000.0, 10.0, 0.5f64);
    let c = inscribed_crop(w, h, t).unwrap();
    assert!((c.height - h / (2.0 * t.cos())).abs() < 1e-9);
    assert!((c.width - h / (2.0 * t.sin())).abs() < 1e-9);
    let tall = inscribed_crop(h, w, t).unwrap();
    assert!((tall.width - c.height).abs() < 1e-9 && (tall.height - c.width).abs() < 1e-9);
}

#[test]
fn schedule_validation() {
    let one = vec![SineTerm { lambda: 1.0, gamma: 1.0 }];
    assert!(RotationSchedule::new(1.0, 0.1, one.clone(), 0.25, 10).is_ok());
    assert!(RotationSchedule::new(1.0, 0.9, one.clone(), 0.25, 10).is_err());
    assert!(RotationSchedule::new(1.0, 0.1, one.clone(), 0.75, 10).is_err());
    assert!(RotationSchedule::new(0.0, 0.1, one.clone(), 0.25, 10).is_err());
    assert!(RotationSchedule::new(1.0, 0.1, one, 0.25, 0).is_err());
    let half = vec![SineTerm { lambda: 0.5, gamma: 1.0 }];
    assert!(RotationSchedule::new(1.0, 0.1, half, 0.25, 10).is_err());
}

#[test]
fn schedule_matches_closed_form() {
    let terms = vec![SineTerm { lambda: 0.7, gamma: 1.0 }, SineTerm { lambda: 0.3, gamma: 3.0 }];
    let s = RotationSchedule::new(2.0, 0.2, terms, 0.1, 50).unwrap();
    for n in 0..50 {
        let rho = 2.0 * std::f64::consts::PI * (2.0 * n as f64 / 50.0 + 0.1);
        let want = 0.2 * (0.7 * rho.sin() + 0.3 * (3.0 * rho).sin());
        assert!((s.angle(n) - want).abs() < 1e-15);
    }
}
