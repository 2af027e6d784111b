use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates, center form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Shrink and shift so the box lies inside the unit square.
    pub fn clamped(&self) -> BBox {
        let w = self.w.clamp(1e-3, 1.0);
        let h = self.h.clamp(1e-3, 1.0);
        BBox {
            cx: self.cx.clamp(w / 2.0, 1.0 - w / 2.0),
            cy: self.cy.clamp(h / 2.0, 1.0 - h / 2.0),
            w,
            h,
        }
    }

    pub fn is_normalized(&self) -> bool {
        let (x0, y0, x1, y1) = self.corners();
        self.w > 0.0 && self.h > 0.0 && x0 >= -1e-12 && y0 >= -1e-12 && x1 <= 1.0 + 1e-12 && y1 <= 1.0 + 1e-12
    }

    /// Regression target of `target` relative to this proposal:
    /// `(dx/w, dy/h, ln(w'/w), ln(h'/h))`.
    pub fn deltas_to(&self, target: &BBox) -> [f64; 4] {
        [
            (target.cx - self.cx) / self.w,
            (target.cy - self.cy) / self.h,
            (target.w / self.w).ln(),
            (target.h / self.h).ln(),
        ]
    }
}
