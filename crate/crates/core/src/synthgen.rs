//! Seeded synthetic LiDAR scenes with distance-dependent sparsity, azimuth
//! occlusion and per-object label noise magnitudes.
//!
//! Cars stand on the ground plane `z = 0`. Points are sampled on the two side
//! faces that face the sensor and on the roof. The front quarter of each car
//! is a lower hood, which makes the heading observable from the points.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bevraster::RangeSpec;
use crate::boxgeom::{bev_corners, bev_intersection_area, normalize_angle, Box3D};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::pcio::{self, ClassId, Difficulty, GroundTruthObject, Point, PointCloud};

const MAX_PLACEMENT_TRIES: usize = 1000;
const HOOD_FRACTION: f64 = 0.25;
const HOOD_HEIGHT_RATIO: f64 = 0.65;
const ROOF_SHARE: f64 = 0.3;
/// Heading noise per meter of label noise magnitude.
pub const YAW_NOISE_PER_METER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_cars: usize,
    /// Placement bounds for car centers `[x_min, x_max, y_min, y_max]`.
    pub region: [f64; 4],
    pub dim_mean: [f64; 3],
    pub dim_std: [f64; 3],
    /// Probability that a heading is drawn from the four base angles rather
    /// than uniformly.
    pub p_base: f64,
    /// Points per car at `ref_distance`.
    pub point_budget: f64,
    pub ref_distance: f64,
    pub density_exponent: f64,
    pub occlusion: bool,
    pub jitter_sigma: f64,
    pub label_noise_base: f64,
    pub label_noise_per_meter: f64,
    pub label_noise_occlusion: f64,
    /// Generated points are clipped into this range.
    pub range: RangeSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_cars: 6,
            region: [6.0, 60.0, -20.0, 20.0],
            dim_mean: [4.2, 1.75, 1.55],
            dim_std: [0.35, 0.12, 0.12],
            p_base: 0.8,
            point_budget: 900.0,
            ref_distance: 10.0,
            density_exponent: 2.0,
            occlusion: true,
            jitter_sigma: 0.02,
            label_noise_base: 0.02,
            label_noise_per_meter: 0.008,
            label_noise_occlusion: 0.3,
            range: RangeSpec::desk(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(None, format!("scene spec: {m}")));
        if !(0.0..=1.0).contains(&self.p_base) {
            return bad("p_base must lie in [0, 1]");
        }
        if self.jitter_sigma < 0.0
            || self.label_noise_base < 0.0
            || self.label_noise_per_meter < 0.0
            || self.label_noise_occlusion < 0.0
            || self.dim_std.iter().any(|&s| s < 0.0)
        {
            return bad("noise magnitudes must be nonnegative");
        }
        if self.point_budget < 0.0 || self.ref_distance <= 0.0 {
            return bad("point budget must be nonnegative and reference distance positive");
        }
        if !(self.region[0] < self.region[1] && self.region[2] < self.region[3]) {
            return bad("placement region needs min < max");
        }
        if self.dim_mean.iter().any(|&m| m <= 0.0) {
            return bad("mean dims must be positive");
        }
        self.range.validate()
    }

    /// Unrounded point count for a car at planar distance `d`.
    pub fn expected_point_count(&self, d: f64) -> f64 {
        self.point_budget * (self.ref_distance / d.max(1e-6)).powf(self.density_exponent)
    }

    pub fn point_count(&self, d: f64) -> usize {
        self.expected_point_count(d).round().max(0.0) as usize
    }

    pub fn label_sigma(&self, distance: f64, visibility: f64) -> f64 {
        self.label_noise_base
            + self.label_noise_per_meter * distance
            + self.label_noise_occlusion * (1.0 - visibility)
    }
}

/// Per-object oracle values aligned with the scene's ground truths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRecord {
    pub sigma_label: f64,
    pub visibility: f64,
    pub distance: f64,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub gts: Vec<GroundTruthObject>,
    pub noise: Vec<NoiseRecord>,
}

/// Difficulty bucket from range and visibility.
pub fn difficulty_of(distance: f64, visibility: f64) -> Difficulty {
    if distance < 25.0 && visibility > 0.9 {
        Difficulty::Easy
    } else if distance > 45.0 || visibility < 0.5 {
        Difficulty::Hard
    } else {
        Difficulty::Moderate
    }
}

/// Azimuth interval `[lo, hi]` spanned by a box as seen from the origin,
/// expressed relative to the azimuth of the box center.
pub fn azimuth_interval(b: &Box3D) -> (f64, f64, f64) {
    let center = b.cy.atan2(b.cx);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y) in bev_corners(b) {
        let a = normalize_angle(y.atan2(x) - center);
        lo = lo.min(a);
        hi = hi.max(a);
    }
    (center, lo, hi)
}

fn in_interval(azimuth: f64, iv: (f64, f64, f64)) -> bool {
    let a = normalize_angle(azimuth - iv.0);
    a >= iv.1 && a <= iv.2
}

/// Fraction of `target`'s azimuth span not covered by any of `occluders`.
pub fn visible_fraction(target: &Box3D, occluders: &[Box3D]) -> f64 {
    let (center, lo, hi) = azimuth_interval(target);
    if hi <= lo {
        return 1.0;
    }
    let mut covered: Vec<(f64, f64)> = occluders
        .iter()
        .map(|o| {
            let (oc, olo, ohi) = azimuth_interval(o);
            let shift = normalize_angle(oc - center);
            ((shift + olo).max(lo), (shift + ohi).min(hi))
        })
        .filter(|(a, b)| b > a)
        .collect();
    covered.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in covered {
        match cur {
            Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((ca, cb)) = cur {
        total += cb - ca;
    }
    (1.0 - total / (hi - lo)).clamp(0.0, 1.0)
}

fn sample_heading(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<f64>() < spec.p_base {
        normalize_angle(rng.gen_range(0..4) as f64 * FRAC_PI_2)
    } else {
        rng.gen_range(-PI..PI)
    }
}

fn place_cars(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>> {
    let mut cars: Vec<Box3D> = Vec::with_capacity(spec.num_cars);
    for index in 0..spec.num_cars {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let cx = rng.gen_range(spec.region[0]..spec.region[1]);
            let cy = rng.gen_range(spec.region[2]..spec.region[3]);
            let mut dims = [0.0; 3];
            for k in 0..3 {
                let n: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
                dims[k] = (spec.dim_mean[k] + spec.dim_std[k] * n).max(0.5 * spec.dim_mean[k]);
            }
            let yaw = sample_heading(spec, rng);
            let b = Box3D::new(cx, cy, 0.5 * dims[2], dims[0], dims[1], dims[2], yaw);
            if cars.iter().all(|o| bev_intersection_area(o, &b) <= 0.0) {
                placed = Some(b);
                break;
            }
        }
        match placed {
            Some(b) => cars.push(b),
            None => {
                return Err(Error::Placement {
                    index,
                    tries: MAX_PLACEMENT_TRIES,
                })
            }
        }
    }
    Ok(cars)
}

/// A sampled surface patch in the car's local frame.
#[derive(Clone, Copy)]
enum Surface {
    /// Side face at local `y = side * w/2`.
    Side(f64),
    /// End face at local `x = end * l/2`.
    End(f64),
    Roof,
}

fn roof_height(b: &Box3D, u: f64) -> f64 {
    if u > 0.5 * b.l - HOOD_FRACTION * b.l {
        HOOD_HEIGHT_RATIO * b.h
    } else {
        b.h
    }
}

/// Splits `n` by weights with the largest-remainder rule.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || n == 0 {
        return vec![0; weights.len()];
    }
    let raw: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn sample_car_points(b: &Box3D, n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, f64)> {
    let (s, c) = b.yaw.sin_cos();
    let to_sensor = {
        let d = b.cx.hypot(b.cy).max(1e-9);
        (-b.cx / d, -b.cy / d)
    };
    let hood_h = HOOD_HEIGHT_RATIO * b.h;
    let cabin_len = (1.0 - HOOD_FRACTION) * b.l;
    // outward normals in the world frame
    let faces = [
        (Surface::Side(1.0), (-s, c), cabin_len * b.h + HOOD_FRACTION * b.l * hood_h),
        (Surface::Side(-1.0), (s, -c), cabin_len * b.h + HOOD_FRACTION * b.l * hood_h),
        (Surface::End(1.0), (c, s), b.w * hood_h),
        (Surface::End(-1.0), (-c, -s), b.w * b.h),
    ];
    let mut surfaces = Vec::new();
    let mut weights = Vec::new();
    let mut face_weight = 0.0;
    for (surf, n, area) in faces {
        let facing = n.0 * to_sensor.0 + n.1 * to_sensor.1;
        if facing > 0.0 {
            surfaces.push(surf);
            weights.push(area * facing);
            face_weight += area * facing;
        }
    }
    surfaces.push(Surface::Roof);
    weights.push(face_weight * ROOF_SHARE / (1.0 - ROOF_SHARE));
    let counts = apportion(n, &weights);

    let mut pts = Vec::with_capacity(n);
    for (surf, &k) in surfaces.iter().zip(&counts) {
        for _ in 0..k {
            let (u, v, z) = match *surf {
                Surface::Side(side) => {
                    let u = rng.gen_range(-0.5 * b.l..0.5 * b.l);
                    let z = rng.gen_range(0.0..roof_height(b, u));
                    (u, side * 0.5 * b.w, z)
                }
                Surface::End(end) => {
                    let v = rng.gen_range(-0.5 * b.w..0.5 * b.w);
                    let u = end * 0.5 * b.l;
                    let top = if end > 0.0 { hood_h } else { b.h };
                    (u, v, rng.gen_range(0.0..top))
                }
                Surface::Roof => {
                    let u = rng.gen_range(-0.5 * b.l..0.5 * b.l);
                    let v = rng.gen_range(-0.5 * b.w..0.5 * b.w);
                    (u, v, roof_height(b, u))
                }
            };
            pts.push((b.cx + c * u - s * v, b.cy + s * u + c * v, b.bottom() + z));
        }
    }
    pts
}

fn clip_into(v: f64, lo: f64, hi: f64) -> f32 {
    // keep a margin so the f32 rounding cannot land on the open upper bound
    let margin = 1e-3;
    v.clamp(lo, hi - margin) as f32
}

/// Generates one scene from `spec`.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cars = place_cars(spec, &mut rng)?;
    let jitter = Normal::new(0.0, spec.jitter_sigma.max(0.0)).unwrap();
    let r = &spec.range;

    let mut points = Vec::new();
    let mut gts = Vec::with_capacity(cars.len());
    let mut noise = Vec::with_capacity(cars.len());
    for (j, car) in cars.iter().enumerate() {
        let d = car.range();
        let nearer: Vec<Box3D> = if spec.occlusion {
            cars.iter()
                .enumerate()
                .filter(|&(i, o)| i != j && (o.range() < d || (o.range() == d && i < j)))
                .map(|(_, o)| *o)
                .collect()
        } else {
            Vec::new()
        };
        let intervals: Vec<_> = nearer.iter().map(azimuth_interval).collect();
        let visibility = visible_fraction(car, &nearer);

        let raw = sample_car_points(car, spec.point_count(d), &mut rng);
        let mut kept = 0;
        for (x, y, z) in raw {
            let az = y.atan2(x);
            let occluded = intervals.iter().any(|&iv| in_interval(az, iv));
            let jx = jitter.sample(&mut rng);
            let jy = jitter.sample(&mut rng);
            let jz = jitter.sample(&mut rng);
            let intensity: f32 = rng.gen();
            if occluded {
                continue;
            }
            kept += 1;
            points.push(Point::new(
                clip_into(x + jx, r.x_min, r.x_max),
                clip_into(y + jy, r.y_min, r.y_max),
                clip_into(z + jz, r.z_min, r.z_max),
                intensity,
            ));
        }
        gts.push(GroundTruthObject {
            class_id: ClassId::Car,
            bbox: *car,
            difficulty: difficulty_of(d, visibility),
        });
        noise.push(NoiseRecord {
            sigma_label: spec.label_sigma(d, visibility),
            visibility,
            distance: d,
            num_points: kept,
        });
    }
    Ok(SyntheticScene {
        cloud: PointCloud::new(points, format!("synth_{}", spec.seed)),
        gts,
        noise,
    })
}

/// Seed of the `index`-th scene in a set generated from `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// `count` scenes from one spec, scene `i` seeded with [`scene_seed`].
pub fn generate_set(spec: &SceneSpec, count: usize, exec: Exec) -> Result<Vec<SyntheticScene>> {
    exec.map_range(count, |i| {
        generate(&SceneSpec {
            seed: scene_seed(spec.seed, i),
            ..spec.clone()
        })
    })
    .into_iter()
    .collect()
}

/// Perturbs a label by its recorded noise magnitude: center offsets with
/// standard deviation `sigma` and heading noise scaled by
/// [`YAW_NOISE_PER_METER`].
pub fn noisy_label<R: Rng>(b: &Box3D, sigma: f64, rng: &mut R) -> Box3D {
    if sigma <= 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    let dx = sigma * n.sample(rng);
    let dy = sigma * n.sample(rng);
    let dyaw = sigma * YAW_NOISE_PER_METER * n.sample(rng);
    Box3D::new(b.cx + dx, b.cy + dy, b.cz, b.l, b.w, b.h, b.yaw + dyaw)
}

pub fn format_noise_csv(noise: &[NoiseRecord]) -> String {
    let mut s = String::from("index,distance,visibility,sigma_label,num_points\n");
    for (i, n) in noise.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{}",
            n.distance, n.visibility, n.sigma_label, n.num_points
        );
    }
    s
}

pub fn parse_noise_csv(text: &str) -> Result<Vec<NoiseRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::format(Some(i + 1), "expected 5 columns"));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|_| Error::format(Some(i + 1), format!("bad number `{}`", f[k])))
        };
        out.push(NoiseRecord {
            distance: num(1)?,
            visibility: num(2)?,
            sigma_label: num(3)?,
            num_points: num(4)? as usize,
        });
    }
    Ok(out)
}

/// A scene as stored on disk: `<name>.bin`, `<name>.txt`, `<name>.noise.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredScene {
    pub name: String,
    pub cloud: PointCloud,
    pub gts: Vec<GroundTruthObject>,
    pub noise: Option<Vec<NoiseRecord>>,
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn write_scene(dir: &Path, name: &str, scene: &SyntheticScene) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pcio::save_cloud(&scene.cloud, dir.join(format!("{name}.bin")))?;
    pcio::save_labels(&scene.gts, dir.join(format!("{name}.txt")))?;
    let p = dir.join(format!("{name}.noise.csv"));
    fs::write(&p, format_noise_csv(&scene.noise)).map_err(|e| Error::io(p, e))
}

/// Scene names in `dir`, sorted, discovered from `*.bin` files.
pub fn list_scenes(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            if let Some(stem) = path.file_stem() {
                names.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn read_scene(dir: &Path, name: &str) -> Result<StoredScene> {
    let cloud = pcio::load_cloud(dir.join(format!("{name}.bin")))?;
    let labels = dir.join(format!("{name}.txt"));
    let gts = if labels.exists() {
        pcio::load_labels(&labels)?
    } else {
        Vec::new()
    };
    let noise_path = dir.join(format!("{name}.noise.csv"));
    let noise = if noise_path.exists() {
        let text = fs::read_to_string(&noise_path).map_err(|e| Error::io(&noise_path, e))?;
        Some(parse_noise_csv(&text)?)
    } else {
        None
    };
    Ok(StoredScene {
        name: name.to_string(),
        cloud,
        gts,
        noise,
    })
}

pub fn read_scene_dir(dir: &Path) -> Result<Vec<StoredScene>> {
    list_scenes(dir)?
        .iter()
        .map(|n| read_scene(dir, n))
        .collect()
}
