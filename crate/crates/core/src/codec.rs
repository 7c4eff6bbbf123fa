//! Anchors, regression target encoding, and candidate to ground-truth
//! assignment.
//!
//! Stage-1 targets `t_r = [dx, dy, dz, dw, dl, dh]` are offsets from a
//! yaw-free anchor: planar offsets over the anchor diagonal, vertical offset
//! over anchor height, and log size ratios. Stage-2 targets are the four-corner
//! encoding `t_v` (8 corner offsets over the ROI diagonal, then bottom and top
//! heights above ground over ROI height) and the heading `r_v = [cos, sin]`.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bevraster::RangeSpec;
use crate::boxgeom::{bev_corners, iou_bev_aa, normalize_angle, quarter_turns, Box3D};
use crate::error::{Error, Result};

pub const RPN_DIM: usize = 6;
pub const LOC_DIM: usize = 10;
pub const ORIENT_DIM: usize = 2;

/// Smallest dimension a decoded box may have, in meters.
pub const MIN_DIM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrientationBin {
    Deg0,
    Deg90,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub orientation: OrientationBin,
}

impl Anchor {
    /// Yaw-free footprint box; a 90 degree anchor spans `w` in x and `l` in y.
    pub fn to_box(&self) -> Box3D {
        let (ex, ey) = match self.orientation {
            OrientationBin::Deg0 => (self.l, self.w),
            OrientationBin::Deg90 => (self.w, self.l),
        };
        Box3D::axis_aligned(self.cx, self.cy, self.cz, ex, ey, self.h)
    }
}

/// Anchor layout: placement stride in grid cells and one `(l, w, h)` per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub stride_cells: usize,
    pub dims: Vec<[f64; 3]>,
    pub ground_z: f64,
}

/// One anchor per stride position, cluster and orientation bin, ordered by
/// row, column, cluster, then orientation.
pub fn generate_anchors(spec: &RangeSpec, cfg: &AnchorConfig) -> Vec<Anchor> {
    let stride = cfg.stride_cells.max(1);
    let res = spec.xy_resolution;
    let step = stride as f64 * res;
    let mut out = Vec::new();
    let mut row = 0;
    while row < spec.rows() {
        let cx = spec.x_min + row as f64 * res + 0.5 * step;
        let mut col = 0;
        while col < spec.cols() {
            let cy = spec.y_min + col as f64 * res + 0.5 * step;
            for d in &cfg.dims {
                for orientation in [OrientationBin::Deg0, OrientationBin::Deg90] {
                    out.push(Anchor {
                        cx,
                        cy,
                        cz: cfg.ground_z + 0.5 * d[2],
                        l: d[0],
                        w: d[1],
                        h: d[2],
                        orientation,
                    });
                }
            }
            col += stride;
        }
        row += stride;
    }
    out
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Sum of squared distances of each sample to its nearest centroid.
pub fn within_cluster_sse(samples: &[[f64; 3]], centroids: &[[f64; 3]]) -> f64 {
    samples
        .iter()
        .map(|s| {
            centroids
                .iter()
                .map(|c| sq_dist(s, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn nearest(s: &[f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(s, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd iterations from the given centroids until assignments stop
/// changing or 100 iterations elapse. Empty clusters keep their centroid.
pub fn lloyd(samples: &[[f64; 3]], mut centroids: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    let mut assign: Vec<usize> = vec![usize::MAX; samples.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, s) in assign.iter_mut().zip(samples) {
            let n = nearest(s, &centroids);
            if *a != n {
                *a = n;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0f64; 3]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, s) in assign.iter().zip(samples) {
            counts[a] += 1;
            for d in 0..3 {
                sums[a][d] += s[d];
            }
        }
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                *c = sum.map(|v| v / n as f64);
            }
        }
    }
    centroids
}

/// k-means over `(l, w, h)` samples with farthest-point seeding. The first
/// seed is drawn from `seed`; each further seed is the sample farthest from
/// those already chosen (lowest index on ties).
pub fn kmeans_anchor_dims(samples: &[[f64; 3]], k: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if k == 0 || samples.len() < k {
        return Err(Error::InsufficientData {
            needed: k.max(1),
            got: samples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![samples[rng.gen_range(0..samples.len())]];
    while centroids.len() < k {
        let mut far = 0;
        let mut far_d = -1.0;
        for (i, s) in samples.iter().enumerate() {
            let d = centroids
                .iter()
                .map(|c| sq_dist(s, c))
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        centroids.push(samples[far]);
    }
    Ok(lloyd(samples, centroids))
}

/// Encodes a ground truth against a yaw-free anchor box. The ground truth's
/// footprint is snapped to the nearest quarter turn first.
pub fn encode_rpn(anchor: &Box3D, gt: &Box3D) -> [f64; RPN_DIM] {
    let g = gt.to_axis_aligned();
    let (al, aw) = (anchor.l, anchor.w);
    let diag = al.hypot(aw);
    [
        (g.cx - anchor.cx) / diag,
        (g.cy - anchor.cy) / diag,
        (g.cz - anchor.cz) / anchor.h,
        (g.w / aw).ln(),
        (g.l / al).ln(),
        (g.h / anchor.h).ln(),
    ]
}

/// Inverse of [`encode_rpn`]; returns a yaw-free box.
pub fn decode_rpn(anchor: &Box3D, t: &[f64]) -> Box3D {
    let diag = anchor.l.hypot(anchor.w);
    Box3D::axis_aligned(
        anchor.cx + t[0] * diag,
        anchor.cy + t[1] * diag,
        anchor.cz + t[2] * anchor.h,
        (anchor.l * t[4].exp()).max(MIN_DIM),
        (anchor.w * t[3].exp()).max(MIN_DIM),
        (anchor.h * t[5].exp()).max(MIN_DIM),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrhTargets {
    pub t_v: [f64; LOC_DIM],
    pub r_v: [f64; ORIENT_DIM],
}

/// Full set of regression targets for one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVectors {
    pub t_r: [f64; RPN_DIM],
    pub t_v: [f64; LOC_DIM],
    pub r_v: [f64; ORIENT_DIM],
}

/// Footprint of `b` re-expressed with its heading rotated by whole quarter
/// turns into `[-pi/4, pi/4]`.
fn canonical_footprint(b: &Box3D) -> Box3D {
    let k = quarter_turns(b.yaw);
    let (l, w) = if k.rem_euclid(2) == 1 {
        (b.w, b.l)
    } else {
        (b.l, b.w)
    };
    Box3D {
        l,
        w,
        yaw: normalize_angle(b.yaw - k as f64 * FRAC_PI_2),
        ..*b
    }
}

/// Four-corner encoding of `gt` relative to a yaw-free ROI.
///
/// Corners are matched by index (counter-clockwise from the local `(+l/2,
/// +w/2)` corner). The ground truth footprint is first rotated by whole
/// quarter turns so its corner heading lies within 45 degrees of the ROI;
/// the true heading travels in `r_v`.
pub fn encode_frh(roi: &Box3D, gt: &Box3D, ground_z: f64) -> FrhTargets {
    let r = roi.to_axis_aligned();
    let diag = r.l.hypot(r.w);
    let rc = bev_corners(&r);
    let gc = bev_corners(&canonical_footprint(gt));
    let mut t_v = [0.0; LOC_DIM];
    for i in 0..4 {
        t_v[i] = (gc[i].0 - rc[i].0) / diag;
        t_v[4 + i] = (gc[i].1 - rc[i].1) / diag;
    }
    t_v[8] = (gt.bottom() - ground_z) / r.h;
    t_v[9] = (gt.top() - ground_z) / r.h;
    FrhTargets {
        t_v,
        r_v: [gt.yaw.cos(), gt.yaw.sin()],
    }
}

/// Reconstructs a box from four-corner and heading predictions.
pub fn decode_frh(roi: &Box3D, t_v: &[f64], r_v: &[f64], ground_z: f64) -> Box3D {
    let r = roi.to_axis_aligned();
    let diag = r.l.hypot(r.w);
    let rc = bev_corners(&r);
    let c: Vec<(f64, f64)> = (0..4)
        .map(|i| (rc[i].0 + t_v[i] * diag, rc[i].1 + t_v[4 + i] * diag))
        .collect();
    let cx = c.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = c.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    let mut l = 0.5 * (dist(c[0], c[1]) + dist(c[3], c[2]));
    let mut w = 0.5 * (dist(c[0], c[3]) + dist(c[1], c[2]));
    // heading implied by the corner quadrilateral (long-axis direction)
    let hx = (c[0].0 - c[1].0) + (c[3].0 - c[2].0);
    let hy = (c[0].1 - c[1].1) + (c[3].1 - c[2].1);
    let corner_heading = hy.atan2(hx);

    let norm = r_v[0].hypot(r_v[1]);
    let yaw = if norm > 0.0 {
        (r_v[1] / norm).atan2(r_v[0] / norm)
    } else {
        corner_heading
    };
    if quarter_turns(yaw - corner_heading).rem_euclid(2) == 1 {
        std::mem::swap(&mut l, &mut w);
    }

    let bottom = ground_z + t_v[8] * r.h;
    let top = ground_z + t_v[9] * r.h;
    let h = (top - bottom).max(MIN_DIM);
    let cz = 0.5 * (top + bottom);
    Box3D::new(cx, cy, cz, l.max(MIN_DIM), w.max(MIN_DIM), h, yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub label: AssignLabel,
    /// Ground truth with the highest overlap (present for positives; also
    /// reported for ignored and negative candidates that overlap something).
    pub matched_gt: Option<usize>,
    pub iou: f64,
}

/// Labels each candidate by its best axis-aligned BEV IoU over `gts`:
/// `>= pos_thr` positive, `< neg_thr` negative, otherwise ignored.
pub fn assign(candidates: &[Box3D], gts: &[Box3D], pos_thr: f64, neg_thr: f64) -> Vec<Assignment> {
    candidates
        .iter()
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                let iou = iou_bev_aa(c, g);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            let iou = best.map_or(0.0, |b| b.1);
            let label = if iou >= pos_thr {
                AssignLabel::Positive
            } else if iou < neg_thr {
                AssignLabel::Negative
            } else {
                AssignLabel::Ignore
            };
            Assignment {
                label,
                matched_gt: best.filter(|b| b.1 > 0.0).map(|b| b.0),
                iou,
            }
        })
        .collect()
}
