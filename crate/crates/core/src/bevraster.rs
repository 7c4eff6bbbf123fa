//! Bird's-eye-view rasterization: per-slice maximum height maps plus one
//! log-scaled density map.
//!
//! Row axis is x (forward), column axis is y (lateral). Channels are the
//! `num_slices` height maps followed by the density map.

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::pcio::PointCloud;

/// Crop bounds and discretization of the BEV grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub xy_resolution: f64,
    pub num_slices: usize,
    pub slice_height: f64,
}

impl RangeSpec {
    /// 70 m x 80 m x 2.5 m at 0.1 m with five 0.5 m slices (700 x 800 x 6).
    pub fn standard() -> Self {
        RangeSpec {
            x_min: 0.0,
            x_max: 70.0,
            y_min: -40.0,
            y_max: 40.0,
            z_min: 0.0,
            z_max: 2.5,
            xy_resolution: 0.1,
            num_slices: 5,
            slice_height: 0.5,
        }
    }

    /// Smaller grid used for the synthetic benchmark.
    pub fn desk() -> Self {
        RangeSpec {
            x_min: 0.0,
            x_max: 64.0,
            y_min: -24.0,
            y_max: 24.0,
            xy_resolution: 0.2,
            ..RangeSpec::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.z_min,
            self.z_max,
            self.xy_resolution,
            self.slice_height,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Spec("non-finite value".into()));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max) {
            return Err(Error::Spec("each axis needs min < max".into()));
        }
        if self.xy_resolution <= 0.0 || self.slice_height <= 0.0 || self.num_slices == 0 {
            return Err(Error::Spec(
                "resolution, slice height and slice count must be positive".into(),
            ));
        }
        for (name, span) in [("x", self.x_max - self.x_min), ("y", self.y_max - self.y_min)] {
            let cells = span / self.xy_resolution;
            if (cells - cells.round()).abs() > 1e-6 || cells.round() < 1.0 {
                return Err(Error::Spec(format!(
                    "{name} span {span} is not a whole number of {} m cells",
                    self.xy_resolution
                )));
            }
        }
        let stacked = self.num_slices as f64 * self.slice_height;
        if (stacked - (self.z_max - self.z_min)).abs() > 1e-9 {
            return Err(Error::Spec(format!(
                "{} slices of {} m do not cover z span {}",
                self.num_slices,
                self.slice_height,
                self.z_max - self.z_min
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        ((self.x_max - self.x_min) / self.xy_resolution).round() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.y_max - self.y_min) / self.xy_resolution).round() as usize
    }

    pub fn channels(&self) -> usize {
        self.num_slices + 1
    }

    /// Half-open containment `[min, max)` on every axis.
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        x >= self.x_min
            && x < self.x_max
            && y >= self.y_min
            && y < self.y_max
            && z >= self.z_min
            && z < self.z_max
    }

    /// Cell holding planar position `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max) {
            return None;
        }
        let row = (((x - self.x_min) / self.xy_resolution).floor() as usize).min(self.rows() - 1);
        let col = (((y - self.y_min) / self.xy_resolution).floor() as usize).min(self.cols() - 1);
        Some((row, col))
    }

    /// Height slice of `z`; a point exactly at `z_max` lands in the top slice.
    pub fn slice_of(&self, z: f64) -> Option<usize> {
        if !(z >= self.z_min && z <= self.z_max) {
            return None;
        }
        let s = ((z - self.z_min) / self.slice_height).floor() as usize;
        Some(s.min(self.num_slices - 1))
    }
}

/// Density encoding `min(1, ln(N+1) / ln 16)`.
pub fn density_value(n: usize) -> f64 {
    ((n as f64 + 1.0).ln() / 16f64.ln()).min(1.0)
}

/// Dense `rows x cols x channels` grid, row-major `[row][col][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: RangeSpec,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BevGrid {
    fn empty(spec: RangeSpec) -> Self {
        let (rows, cols, ch) = (spec.rows(), spec.cols(), spec.channels());
        let mut data = vec![spec.z_min; rows * cols * ch];
        for cell in data.chunks_exact_mut(ch) {
            cell[ch - 1] = 0.0;
        }
        BevGrid {
            spec,
            rows,
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.spec.channels()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All channels of one cell.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let ch = self.channels();
        let base = (row * self.cols + col) * ch;
        &self.data[base..base + ch]
    }

    pub fn height(&self, row: usize, col: usize, slice: usize) -> f64 {
        self.cell(row, col)[slice]
    }

    pub fn density(&self, row: usize, col: usize) -> f64 {
        self.cell(row, col)[self.spec.num_slices]
    }

    /// Center of cell `(row, col)` in meters.
    pub fn cell_center(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        cell_center(&self.spec, row, col)
    }
}

pub fn cell_center(spec: &RangeSpec, row: usize, col: usize) -> Result<(f64, f64)> {
    let (rows, cols) = (spec.rows(), spec.cols());
    if row >= rows || col >= cols {
        return Err(Error::Index {
            row,
            col,
            rows,
            cols,
        });
    }
    Ok((
        spec.x_min + (row as f64 + 0.5) * spec.xy_resolution,
        spec.y_min + (col as f64 + 0.5) * spec.xy_resolution,
    ))
}

const BAND_ROWS: usize = 8;

/// Rasterizes with the default execution policy.
pub fn rasterize(pc: &PointCloud, spec: &RangeSpec) -> Result<BevGrid> {
    rasterize_with(pc, spec, Exec::default())
}

/// Rasterizes a cloud. Points outside `spec` are ignored.
///
/// Parallel execution splits the grid into fixed row bands; each band
/// reduces its own points with max/count, so the output is bit-identical to
/// the sequential path.
pub fn rasterize_with(pc: &PointCloud, spec: &RangeSpec, exec: Exec) -> Result<BevGrid> {
    spec.validate()?;
    let mut grid = BevGrid::empty(*spec);
    let (cols, ch) = (grid.cols, grid.channels());

    let keys: Vec<Option<(usize, usize, usize, f64)>> = exec.map(&pc.points, |p| {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        // z_max itself is kept (top slice), unlike the half-open crop
        let (row, col) = spec.cell_of(x, y)?;
        let slice = spec.slice_of(z)?;
        Some((row, col, slice, z))
    });

    let n_bands = grid.rows.div_ceil(BAND_ROWS);
    let mut buckets: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); n_bands];
    for k in keys.into_iter().flatten() {
        buckets[k.0 / BAND_ROWS].push(k);
    }

    exec.for_each_chunk_mut(&mut grid.data, BAND_ROWS * cols * ch, |band, chunk| {
        let bucket = &buckets[band];
        if bucket.is_empty() {
            return;
        }
        let mut counts = vec![0usize; chunk.len() / ch];
        for &(row, col, slice, z) in bucket {
            let local = (row - band * BAND_ROWS) * cols + col;
            counts[local] += 1;
            let slot = &mut chunk[local * ch + slice];
            if z > *slot {
                *slot = z;
            }
        }
        for (local, &n) in counts.iter().enumerate() {
            if n > 0 {
                chunk[local * ch + ch - 1] = density_value(n);
            }
        }
    });
    Ok(grid)
}

const GRID_MAGIC: &[u8; 8] = b"BEVGRID1";
pub const GRID_HEADER_BYTES: usize = 32;

/// Serializes as a 32-byte header (magic, H, W, C as `u32`, a reserved `u32`,
/// resolution as `f64`) followed by `f32` values in `[row][col][channel]` order.
pub fn encode_grid(grid: &BevGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(GRID_HEADER_BYTES + grid.data.len() * 4);
    out.extend_from_slice(GRID_MAGIC);
    for v in [grid.rows, grid.cols, grid.channels(), 0] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&grid.spec.xy_resolution.to_le_bytes());
    for v in &grid.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// A grid read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub resolution: f64,
    pub values: Vec<f32>,
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridFile> {
    if bytes.len() < GRID_HEADER_BYTES || &bytes[..8] != GRID_MAGIC {
        return Err(Error::format(None, "missing grid header"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (rows, cols, channels) = (u(8), u(12), u(16));
    let resolution = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let body = &bytes[GRID_HEADER_BYTES..];
    if body.len() != rows * cols * channels * 4 {
        return Err(Error::format(None, "grid body length does not match header"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GridFile {
        rows,
        cols,
        channels,
        resolution,
        values,
    })
}
