//! Oriented 3D boxes, BEV overlap measures and greedy non-maximum suppression.
//!
//! Frame convention: x forward, y left, z up (LiDAR frame, meters). A box's
//! length runs along its heading, so at `yaw = 0` the footprint spans `l` in x
//! and `w` in y.

use std::f64::consts::{FRAC_PI_2, PI};

/// An oriented 3D box. `cz` is the vertical center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

/// A box with a detection or objectness score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: Box3D,
    pub score: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2pi for tiny negative inputs
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl Box3D {
    /// Builds a box with the yaw wrapped into `(-pi, pi]`.
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: normalize_angle(yaw),
        }
    }

    /// Yaw-free box, as used for anchors and ROIs.
    pub fn axis_aligned(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64) -> Self {
        Box3D::new(cx, cy, cz, l, w, h, 0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
            .iter()
            .all(|v| v.is_finite())
            && self.l > 0.0
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn bottom(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn top(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Planar distance from the sensor origin to the box center.
    pub fn range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    /// Extent of the footprint along x and y after snapping the heading to the
    /// nearest multiple of 90 degrees.
    pub fn aa_extent(&self) -> (f64, f64) {
        if self.yaw.cos().abs() >= self.yaw.sin().abs() {
            (self.l, self.w)
        } else {
            (self.w, self.l)
        }
    }

    /// The yaw-free box covering the snapped footprint.
    pub fn to_axis_aligned(&self) -> Box3D {
        let (ex, ey) = self.aa_extent();
        Box3D::axis_aligned(self.cx, self.cy, self.cz, ex, ey, self.h)
    }

    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= 0.5 * self.l && v.abs() <= 0.5 * self.w
    }

    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        z >= self.bottom() && z <= self.top() && self.contains_bev(x, y)
    }
}

/// Counter-clockwise BEV corners, starting from the local `(+l/2, +w/2)` corner.
pub fn bev_corners(b: &Box3D) -> [(f64, f64); 4] {
    let (s, c) = b.yaw.sin_cos();
    let hl = 0.5 * b.l;
    let hw = 0.5 * b.w;
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    local.map(|(u, v)| (b.cx + c * u - s * v, b.cy + s * u + c * v))
}

/// Signed shoelace area (positive for counter-clockwise polygons).
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            let p_in = dp >= 0.0;
            let q_in = dq >= 0.0;
            if p_in {
                output.push(p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                output.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    output
}

fn aa_bounds(b: &Box3D) -> (f64, f64, f64, f64) {
    let (ex, ey) = b.aa_extent();
    (
        b.cx - 0.5 * ex,
        b.cx + 0.5 * ex,
        b.cy - 0.5 * ey,
        b.cy + 0.5 * ey,
    )
}

/// IoU of the axis-aligned BEV footprints (heading snapped to 90 degrees).
pub fn iou_bev_aa(a: &Box3D, b: &Box3D) -> f64 {
    let (ax0, ax1, ay0, ay1) = aa_bounds(a);
    let (bx0, bx1, by0, by1) = aa_bounds(b);
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Area of the intersection of the two rotated BEV footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // cheap reject on circumscribed circles
    let ra = 0.5 * a.l.hypot(a.w);
    let rb = 0.5 * b.l.hypot(b.w);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    let pa = bev_corners(a);
    let pb = bev_corners(b);
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// IoU of the rotated BEV footprints.
pub fn iou_bev_rotated(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.l * a.w + b.l * b.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Full 3D IoU: rotated BEV intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of `boxes` in descending score order, ties by lower index.
pub fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    idx
}

/// Greedy NMS with a caller-supplied overlap function. Returns kept input
/// indices in selection order.
pub fn nms_indices_with<F>(
    boxes: &[ScoredBox],
    iou_threshold: f64,
    keep_max: usize,
    iou: F,
) -> Vec<usize>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(boxes.iter().map(|b| b.score)) {
        if kept.len() >= keep_max {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|&k| iou(&boxes[k].bbox, &boxes[i].bbox) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Greedy NMS on axis-aligned BEV IoU.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64, keep_max: usize) -> Vec<ScoredBox> {
    nms_indices_with(boxes, iou_threshold, keep_max, iou_bev_aa)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Smallest absolute angular difference, in `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Rounds an angle difference to the nearest quarter turn count.
pub(crate) fn quarter_turns(delta: f64) -> i64 {
    (normalize_angle(delta) / FRAC_PI_2).round() as i64
}
