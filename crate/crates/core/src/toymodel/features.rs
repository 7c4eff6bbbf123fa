//! Pooled BEV features for a candidate box, standing in for a learned
//! backbone.
//!
//! The pooling region is the candidate's axis-aligned footprint scaled by a
//! margin. A cell belongs to the region when its center does. The vector is:
//!
//! * per slice: max height, mean height (empty cells hold the `z_min` sentinel)
//! * density mean, density max, occupied-cell fraction, `ln(1 + sum density)`
//! * a `bins x bins` layout of (max height over slices, mean density)
//! * point-layout moments of the occupied cells relative to the candidate
//!   center: density-weighted centroid, covariance, height-weighted centroid
//!   shift, and occupied extents along x and y
//! * the footprint extents along x and y and the candidate height

use crate::bevraster::BevGrid;
use crate::boxgeom::Box3D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub pool_bins: usize,
    pub margin: f64,
}

impl FeatureConfig {
    pub fn dim(&self, num_slices: usize) -> usize {
        2 * num_slices + 4 + 2 * self.pool_bins * self.pool_bins + MOMENTS + 3
    }
}

const MOMENTS: usize = 9;

/// Half-open index range of cells whose centers fall in `[lo, hi)`.
fn covered(lo: f64, hi: f64, origin: f64, res: f64, n: usize) -> (usize, usize) {
    let a = ((lo - origin) / res - 0.5).ceil().max(0.0);
    let b = ((hi - origin) / res - 0.5).ceil().max(0.0);
    ((a as usize).min(n), (b as usize).min(n))
}

/// Pools grid statistics over the candidate's region.
pub fn featurize(grid: &BevGrid, cand: &Box3D, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let spec = &grid.spec;
    let (ex, ey) = cand.aa_extent();
    let (hx, hy) = (0.5 * cfg.margin * ex, 0.5 * cfg.margin * ey);
    let (x0, x1) = (cand.cx - hx, cand.cx + hx);
    let (y0, y1) = (cand.cy - hy, cand.cy + hy);
    if x1 <= spec.x_min || x0 >= spec.x_max || y1 <= spec.y_min || y0 >= spec.y_max {
        return Err(Error::OutOfGrid);
    }
    let res = spec.xy_resolution;
    let (r0, r1) = covered(x0, x1, spec.x_min, res, grid.rows());
    let (c0, c1) = covered(y0, y1, spec.y_min, res, grid.cols());

    let ns = spec.num_slices;
    let p = cfg.pool_bins;
    let mut slice_max = vec![spec.z_min; ns];
    let mut slice_sum = vec![0.0; ns];
    let mut dens_sum = 0.0;
    let mut dens_max = 0.0f64;
    let mut occupied = 0usize;
    let mut bin_max = vec![spec.z_min; p * p];
    let mut bin_dens = vec![0.0; p * p];
    let mut bin_count = vec![0usize; p * p];
    // density-weighted and height-weighted sums of offsets from the center
    let (mut wd, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut wh, mut hx, mut hy) = (0.0, 0.0, 0.0);
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);

    for r in r0..r1 {
        let xc = spec.x_min + (r as f64 + 0.5) * res;
        let bx = (((xc - x0) / (x1 - x0)) * p as f64).floor().clamp(0.0, (p - 1) as f64) as usize;
        for c in c0..c1 {
            let yc = spec.y_min + (c as f64 + 0.5) * res;
            let by = (((yc - y0) / (y1 - y0)) * p as f64).floor().clamp(0.0, (p - 1) as f64) as usize;
            let cell = grid.cell(r, c);
            let mut top = spec.z_min;
            for s in 0..ns {
                let v = cell[s];
                slice_sum[s] += v;
                if v > slice_max[s] {
                    slice_max[s] = v;
                }
                if v > top {
                    top = v;
                }
            }
            let d = cell[ns];
            dens_sum += d;
            dens_max = dens_max.max(d);
            if d > 0.0 {
                occupied += 1;
                let (u, v) = (xc - cand.cx, yc - cand.cy);
                wd += d;
                sx += d * u;
                sy += d * v;
                sxx += d * u * u;
                syy += d * v * v;
                sxy += d * u * v;
                let t = top - spec.z_min;
                wh += t;
                hx += t * u;
                hy += t * v;
                x_lo = x_lo.min(u);
                x_hi = x_hi.max(u);
                y_lo = y_lo.min(v);
                y_hi = y_hi.max(v);
            }
            let b = bx * p + by;
            bin_count[b] += 1;
            bin_dens[b] += d;
            if top > bin_max[b] {
                bin_max[b] = top;
            }
        }
    }

    let n_cells = (r1 - r0) * (c1 - c0);
    let mut f = Vec::with_capacity(cfg.dim(ns));
    f.extend_from_slice(&slice_max);
    for s in slice_sum {
        f.push(if n_cells > 0 { s / n_cells as f64 } else { spec.z_min });
    }
    if n_cells > 0 {
        f.push(dens_sum / n_cells as f64);
        f.push(dens_max);
        f.push(occupied as f64 / n_cells as f64);
    } else {
        f.extend_from_slice(&[0.0, 0.0, 0.0]);
    }
    f.push(dens_sum.ln_1p());
    for b in 0..p * p {
        f.push(bin_max[b]);
        f.push(if bin_count[b] > 0 {
            bin_dens[b] / bin_count[b] as f64
        } else {
            0.0
        });
    }
    if wd > 0.0 {
        let (mx, my) = (sx / wd, sy / wd);
        let (hmx, hmy) = if wh > 0.0 { (hx / wh - mx, hy / wh - my) } else { (0.0, 0.0) };
        f.extend_from_slice(&[
            mx,
            my,
            sxx / wd - mx * mx,
            syy / wd - my * my,
            sxy / wd - mx * my,
            hmx,
            hmy,
            x_hi - x_lo,
            y_hi - y_lo,
        ]);
    } else {
        f.extend_from_slice(&[0.0; MOMENTS]);
    }
    f.extend_from_slice(&[ex, ey, cand.h]);
    Ok(f)
}

/// Summed-area table of occupied cells (density above zero), used to skip
/// candidates whose footprint holds no points.
#[derive(Debug, Clone)]
pub struct OccupancyIndex {
    cols: usize,
    sat: Vec<u32>,
}

impl OccupancyIndex {
    pub fn new(grid: &BevGrid) -> Self {
        let (rows, cols) = (grid.rows(), grid.cols());
        let mut sat = vec![0u32; (rows + 1) * (cols + 1)];
        for r in 0..rows {
            let mut run = 0u32;
            for c in 0..cols {
                run += (grid.density(r, c) > 0.0) as u32;
                sat[(r + 1) * (cols + 1) + c + 1] = sat[r * (cols + 1) + c + 1] + run;
            }
        }
        OccupancyIndex { cols, sat }
    }

    /// Occupied cells among rows `r0..r1` and columns `c0..c1`.
    pub fn count(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u32 {
        if r1 <= r0 || c1 <= c0 {
            return 0;
        }
        let w = self.cols + 1;
        self.sat[r1 * w + c1] + self.sat[r0 * w + c0] - self.sat[r0 * w + c1] - self.sat[r1 * w + c0]
    }

    /// Occupied cells whose centers lie in the candidate's footprint.
    pub fn count_in(&self, grid: &BevGrid, cand: &Box3D) -> u32 {
        let spec = &grid.spec;
        let (ex, ey) = cand.aa_extent();
        let res = spec.xy_resolution;
        let (r0, r1) = covered(cand.cx - 0.5 * ex, cand.cx + 0.5 * ex, spec.x_min, res, grid.rows());
        let (c0, c1) = covered(cand.cy - 0.5 * ey, cand.cy + 0.5 * ey, spec.y_min, res, grid.cols());
        self.count(r0, r1, c0, c1)
    }
}
