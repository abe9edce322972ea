//! Prior boxes, overlap, box coding and training-target assignment.

mod grid;
mod matching;

pub use grid::{generate_anchors, AnchorGrid, AnchorLevel};
pub use matching::{match_boxes, match_scale_compensated, Label, MatchAssignment, MatchParams};

use crate::error::{Error, Result};

/// Axis-aligned box: top-left corner plus extents, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYWH {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxXYWH {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoxXYWH { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn cx(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.y + self.h / 2.0
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

    /// Intersection with `[0, w) x [0, h)`; `None` if nothing is left.
    pub fn clip(&self, w: f64, h: f64) -> Option<BoxXYWH> {
        let x0 = self.x.clamp(0.0, w);
        let y0 = self.y.clamp(0.0, h);
        let x1 = self.right().clamp(0.0, w);
        let y1 = self.bottom().clamp(0.0, h);
        (x1 > x0 && y1 > y0).then(|| BoxXYWH { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }
}

/// Jaccard overlap.
pub fn iou(a: &BoxXYWH, b: &BoxXYWH) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Exponent clip applied to width/height deltas when decoding.
pub const DECODE_CLIP: f64 = 4.0;

/// Center offsets relative to the anchor size, log size ratios.
pub fn encode(gt: &BoxXYWH, anchor: &BoxXYWH) -> Result<[f64; 4]> {
    gt.validate()?;
    anchor.validate()?;
    Ok([
        (gt.cx() - anchor.cx()) / anchor.w,
        (gt.cy() - anchor.cy()) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ])
}

pub fn decode(d: [f64; 4], anchor: &BoxXYWH) -> BoxXYWH {
    let cx = anchor.cx() + d[0] * anchor.w;
    let cy = anchor.cy() + d[1] * anchor.h;
    let w = anchor.w * d[2].clamp(-DECODE_CLIP, DECODE_CLIP).exp();
    let h = anchor.h * d[3].clamp(-DECODE_CLIP, DECODE_CLIP).exp();
    BoxXYWH { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoxXYWH {
        BoxXYWH::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(1.0, 2.0, 3.0, 4.0), &b(1.0, 2.0, 3.0, 4.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&b(0.0, 0.0, 4.0, 4.0), &b(2.0, 2.0, 4.0, 4.0)) - 4.0 / 28.0).abs() < 1e-12);
        // touching edges do not overlap
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn encode_known_values() {
        let a = BoxXYWH::centered(2.0, 2.0, 16.0, 16.0).unwrap();
        let g = BoxXYWH::centered(4.0, 2.0, 32.0, 32.0).unwrap();
        let d = encode(&g, &a).unwrap();
        let ln2 = 2f64.ln();
        for (got, want) in d.iter().zip([0.125, 0.0, ln2, ln2]) {
            assert!((got - want).abs() < 1e-12, "{d:?}");
        }
        assert_eq!(encode(&a, &a).unwrap(), [0.0; 4]);
    }

    #[test]
    fn decode_inverts_encode() {
        let a = b(10.0, 20.0, 16.0, 16.0);
        let g = b(3.0, 25.0, 40.0, 9.0);
        let r = decode(encode(&g, &a).unwrap(), &a);
        for (x, y) in [(r.x, g.x), (r.y, g.y), (r.w, g.w), (r.h, g.h)] {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_clips_exponent() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let r = decode([0.0, 0.0, 100.0, -100.0], &a);
        assert!((r.w - 10.0 * 4f64.exp()).abs() < 1e-9);
        assert!((r.h - 10.0 * (-4f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoxXYWH::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoxXYWH::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoxXYWH::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        let bad = BoxXYWH { x: 0.0, y: 0.0, w: 0.0, h: 1.0 };
        assert!(encode(&bad, &b(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn clip_to_image() {
        let c = b(-5.0, 5.0, 10.0, 100.0).clip(20.0, 30.0).unwrap();
        assert_eq!((c.x, c.y, c.w, c.h), (0.0, 5.0, 5.0, 25.0));
        assert!(b(25.0, 0.0, 3.0, 3.0).clip(20.0, 30.0).is_none());
    }
}
