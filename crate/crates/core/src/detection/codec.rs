//! Box regression targets relative to an anchor placed at a cell center:
//!
//! ```text
//! t_x = (x - x_a) / w_a     t_w = ln(w / w_a)
//! t_y = (y - y_a) / h_a     t_h = ln(h / h_a)
//! ```

use crate::error::{Error, Result};

use super::{Anchor, BBox};

/// Bound on `|t_w|`, `|t_h|` during decoding so `exp` stays finite.
pub const MAX_LOG_SCALE: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionTarget {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            tx: v[0],
            ty: v[1],
            tw: v[2],
            th: v[3],
        }
    }
}

pub fn encode_box(b: &BBox, anchor: &Anchor, cell_center: (f64, f64)) -> Result<RegressionTarget> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cannot encode box with extent {}x{}",
            b.w, b.h
        )));
    }
    let (xa, ya) = cell_center;
    Ok(RegressionTarget {
        tx: (b.cx - xa) / anchor.w,
        ty: (b.cy - ya) / anchor.h,
        tw: (b.w / anchor.w).ln(),
        th: (b.h / anchor.h).ln(),
    })
}

pub fn decode_box(t: &RegressionTarget, anchor: &Anchor, cell_center: (f64, f64)) -> BBox {
    let (xa, ya) = cell_center;
    BBox {
        cx: xa + t.tx * anchor.w,
        cy: ya + t.ty * anchor.h,
        w: anchor.w * t.tw.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp(),
        h: anchor.h * t.th.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(w: f64, h: f64) -> Anchor {
        Anchor { id: 0, w, h }
    }

    #[test]
    fn identity_case() {
        let a = anchor(50.0, 40.0);
        let t = encode_box(&a.at((24.0, 24.0)), &a, (24.0, 24.0)).unwrap();
        assert_eq!(t, RegressionTarget::default());
        assert_eq!(decode_box(&t, &a, (24.0, 24.0)), a.at((24.0, 24.0)));
    }

    #[test]
    fn hand_values() {
        let a = anchor(50.0, 50.0);
        let b = BBox::new(125.0, 100.0, 100.0, 50.0).unwrap();
        let t = encode_box(&b, &a, (100.0, 100.0)).unwrap();
        assert_eq!(t.tx, 0.5);
        assert_eq!(t.ty, 0.0);
        assert!((t.tw - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(t.th, 0.0);
        let d = decode_box(
            &RegressionTarget {
                tw: std::f64::consts::LN_2,
                ..Default::default()
            },
            &a,
            (0.0, 0.0),
        );
        assert!((d.w - 100.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_scale_stays_finite() {
        let a = anchor(50.0, 50.0);
        let d = decode_box(&RegressionTarget { tw: 20.0, th: 1e6, ..Default::default() }, &a, (0.0, 0.0));
        assert!(d.w.is_finite() && d.w > 1e9);
        assert!(d.h.is_finite());
        let d = decode_box(&RegressionTarget { tw: -1e6, ..Default::default() }, &a, (0.0, 0.0));
        assert!(d.w > 0.0);
    }

    #[test]
    fn rejects_non_positive_extent() {
        let b = BBox { cx: 0.0, cy: 0.0, w: 0.0, h: 1.0 };
        assert!(encode_box(&b, &anchor(1.0, 1.0), (0.0, 0.0)).is_err());
    }
}
