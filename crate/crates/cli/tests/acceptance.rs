//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevunc::attnloss::{attenuated_term, Likelihood};
use bevunc::bevraster::{density_value, rasterize_with, RangeSpec};
use bevunc::boxgeom::{iou_3d, iou_bev_aa, iou_bev_rotated, nms_indices_with, Box3D, ScoredBox};
use bevunc::codec::{decode_frh, decode_rpn, encode_frh, encode_rpn};
use bevunc::config::Config;
use bevunc::detection::Detection;
use bevunc::gradcheck::run_gradcheck;
use bevunc::metrics::{average_precision, evaluate, Interpolation, SceneEval};
use bevunc::pcio::{Difficulty, Point, PointCloud};
use bevunc::pipeline::{labeled_scene, matched_gts, uncertainty_records};
use bevunc::synthgen::{generate_set, SceneSpec, StoredScene};
use bevunc::toymodel::{fit, infer, LabeledScene, ModelParams};
use bevunc::uncstats::{base_angle_offset, binned_means, default_edges, pearson, BinKey, UncertaintyRecord};
use bevunc::Exec;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let results = run_gradcheck(20);
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed = results.iter().filter(|r| !r.passed(1e-4)).count();
    let checked: usize = results.iter().map(|r| r.checked).sum();
    outcome(
        failed == 0 && secs < 60.0,
        format!(
            "{} checks, {checked} partials, {failed} failed, max rel err {worst:.2e}, {secs:.1}s",
            results.len()
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Minimizer of `f` on `[lo, hi]`: a coarse scan then golden-section refinement.
fn scan_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 4000;
    let step = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|i| lo + i as f64 * step)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-10 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn attenuation_behavior() -> Outcome {
    let mut worst_laplace = 0.0f64;
    let mut worst_gauss = 0.0f64;
    for &l in &[0.05, 0.3, 1.0, 2.5, 7.0] {
        let s_lap = scan_minimize(|s| attenuated_term(l, s, Likelihood::Laplace).value, -10.0, 10.0);
        worst_laplace = worst_laplace.max((s_lap - l.ln()).abs());
        let s_gauss = scan_minimize(|s| attenuated_term(l, s, Likelihood::Gaussian).value, -10.0, 10.0);
        worst_gauss = worst_gauss.max((s_gauss - Likelihood::Gaussian.optimal_log_variance(l)).abs());
    }
    let weights: Vec<f64> = (0..=200)
        .map(|i| -5.0 + 0.05 * i as f64)
        .map(|s| attenuated_term(1.0, s, Likelihood::Gaussian).d_residual)
        .collect();
    let decreasing = weights.windows(2).all(|w| w[1] < w[0]);
    let exact_weight = (0..=200).all(|i| {
        let s = -5.0 + 0.05 * i as f64;
        (attenuated_term(1.0, s, Likelihood::Gaussian).d_residual - 0.5 * (-s).exp()).abs() < 1e-15
    });
    outcome(
        worst_laplace < 1e-6 && worst_gauss < 1e-6 && decreasing && exact_weight,
        format!(
            "argmin = ln L to {worst_laplace:.1e} (exp(-s)L + s), argmin = ln(L/2) to {worst_gauss:.1e} \
             (0.5exp(-s)L + s), weight strictly decreasing: {decreasing}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random_cloud(rng: &mut ChaCha8Rng, spec: &RangeSpec, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            // a margin outside the range exercises the ignore path
            let x = rng.gen_range(spec.x_min - 2.0..spec.x_max + 2.0);
            let y = rng.gen_range(spec.y_min - 2.0..spec.y_max + 2.0);
            let z = if rng.gen_bool(0.05) {
                spec.z_max
            } else {
                rng.gen_range(spec.z_min - 0.3..spec.z_max + 0.3)
            };
            Point::new(x as f32, y as f32, z as f32, 0.0)
        })
        .collect();
    PointCloud::new(pts, "random")
}

/// Per-point accumulation written without any of the rasterizer's helpers.
fn brute_force_grid(pc: &PointCloud, spec: &RangeSpec) -> Vec<f64> {
    let rows = ((spec.x_max - spec.x_min) / spec.xy_resolution).round() as usize;
    let cols = ((spec.y_max - spec.y_min) / spec.xy_resolution).round() as usize;
    let ch = spec.num_slices + 1;
    let mut heights = vec![spec.z_min; rows * cols * spec.num_slices];
    let mut counts = vec![0usize; rows * cols];
    for p in &pc.points {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        if x < spec.x_min || x >= spec.x_max || y < spec.y_min || y >= spec.y_max || z < spec.z_min || z > spec.z_max
        {
            continue;
        }
        let r = (((x - spec.x_min) / spec.xy_resolution).floor() as usize).min(rows - 1);
        let c = (((y - spec.y_min) / spec.xy_resolution).floor() as usize).min(cols - 1);
        let s = (((z - spec.z_min) / spec.slice_height).floor() as usize).min(spec.num_slices - 1);
        let h = &mut heights[(r * cols + c) * spec.num_slices + s];
        *h = h.max(z);
        counts[r * cols + c] += 1;
    }
    let mut out = Vec::with_capacity(rows * cols * ch);
    for cell in 0..rows * cols {
        out.extend_from_slice(&heights[cell * spec.num_slices..(cell + 1) * spec.num_slices]);
        let n = counts[cell] as f64;
        out.push(((n + 1.0).ln() / 16f64.ln()).min(1.0));
    }
    out
}

fn rasterization_exactness() -> Outcome {
    let density_ok = [0usize, 1, 3, 15, 50]
        .iter()
        .all(|&n| (density_value(n) - ((n as f64 + 1.0).ln() / 16f64.ln()).min(1.0)).abs() <= 1e-12);
    let full = RangeSpec::standard();
    let grid = rasterize_with(&PointCloud::new(Vec::new(), "empty"), &full, Exec::default());
    let shape = grid.map(|g| g.shape()).ok();
    let shape_ok = shape == Some((700, 800, 6));

    let spec = RangeSpec {
        x_min: 0.0,
        x_max: 8.0,
        y_min: -4.0,
        y_max: 4.0,
        xy_resolution: 0.5,
        ..RangeSpec::standard()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut matches = 0;
    for _ in 0..20 {
        let pc = random_cloud(&mut rng, &spec, 500);
        let g = rasterize_with(&pc, &spec, Exec::default()).unwrap();
        if g.data() == brute_force_grid(&pc, &spec).as_slice() {
            matches += 1;
        }
    }
    outcome(
        density_ok && shape_ok && matches == 20,
        format!("density exact: {density_ok}, standard grid {shape:?}, brute-force equal on {matches}/20 clouds"),
    )
}

// ---------------------------------------------------------------- 4

fn codec_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rpn_err = 0.0f64;
    let mut frh_err = 0.0f64;
    let box_err = |a: &Box3D, b: &Box3D| {
        [a.cx - b.cx, a.cy - b.cy, a.cz - b.cz, a.l - b.l, a.w - b.w, a.h - b.h, a.yaw - b.yaw]
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()))
    };
    for _ in 0..1000 {
        let anchor = Box3D::axis_aligned(
            rng.gen_range(0.0..70.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(0.5..1.2),
            rng.gen_range(3.0..5.0),
            rng.gen_range(1.4..2.0),
            rng.gen_range(1.3..1.8),
        );
        let gt = Box3D::axis_aligned(
            anchor.cx + rng.gen_range(-2.0..2.0),
            anchor.cy + rng.gen_range(-2.0..2.0),
            anchor.cz + rng.gen_range(-0.3..0.3),
            rng.gen_range(3.0..5.0),
            rng.gen_range(1.4..2.0),
            rng.gen_range(1.3..1.8),
        );
        rpn_err = rpn_err.max(box_err(&decode_rpn(&anchor, &encode_rpn(&anchor, &gt)), &gt));

        let gt = Box3D::new(gt.cx, gt.cy, gt.cz, gt.l, gt.w, gt.h, rng.gen_range(-FRAC_PI_4..=FRAC_PI_4));
        let t = encode_frh(&anchor, &gt, 0.0);
        frh_err = frh_err.max(box_err(&decode_frh(&anchor, &t.t_v, &t.r_v, 0.0), &gt));
    }
    let a = Box3D::axis_aligned(12.0, -3.0, 0.8, 4.0, 1.8, 1.6);
    let zero_rpn = decode_rpn(&a, &[0.0; 6]) == a && encode_rpn(&a, &a) == [0.0; 6];
    let t = encode_frh(&a, &a, 0.0);
    let zero_frh = t.t_v[..8].iter().all(|&v| v == 0.0) && t.r_v == [1.0, 0.0];
    outcome(
        rpn_err <= 1e-9 && frh_err <= 1e-6 && zero_rpn && zero_frh,
        format!("max err rpn {rpn_err:.1e}, frh {frh_err:.1e}; zero-offset identities: {zero_rpn}, {zero_frh}"),
    )
}

// ---------------------------------------------------------------- 5

fn random_box(rng: &mut ChaCha8Rng, near: Option<&Box3D>) -> Box3D {
    let (cx, cy, cz) = match near {
        Some(b) => (
            b.cx + rng.gen_range(-2.5..2.5),
            b.cy + rng.gen_range(-2.0..2.0),
            b.cz + rng.gen_range(-0.8..0.8),
        ),
        None => (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..1.0)),
    };
    Box3D::new(
        cx,
        cy,
        cz,
        rng.gen_range(2.0..5.0),
        rng.gen_range(1.0..2.5),
        rng.gen_range(1.0..2.0),
        rng.gen_range(-PI..PI),
    )
}

fn monte_carlo_iou(a: &Box3D, b: &Box3D, three_d: bool, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let reach = |bx: &Box3D| 0.5 * bx.l.hypot(bx.w);
    let x0 = (a.cx - reach(a)).min(b.cx - reach(b));
    let x1 = (a.cx + reach(a)).max(b.cx + reach(b));
    let y0 = (a.cy - reach(a)).min(b.cy - reach(b));
    let y1 = (a.cy + reach(a)).max(b.cy + reach(b));
    let z0 = a.bottom().min(b.bottom());
    let z1 = a.top().max(b.top());
    let (mut in_a, mut in_b, mut both) = (0usize, 0usize, 0usize);
    for _ in 0..samples {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        let (ia, ib) = if three_d {
            let z = rng.gen_range(z0..z1);
            (a.contains(x, y, z), b.contains(x, y, z))
        } else {
            (a.contains_bev(x, y), b.contains_bev(x, y))
        };
        in_a += ia as usize;
        in_b += ib as usize;
        both += (ia && ib) as usize;
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Greedy NMS by repeated extraction of the best remaining box.
fn brute_force_nms(boxes: &[ScoredBox], thr: f64, iou: impl Fn(&Box3D, &Box3D) -> f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if boxes[i].score > boxes[best].score || (boxes[i].score == boxes[best].score && i < best) {
                best = i;
            }
        }
        kept.push(best);
        alive.retain(|&i| i != best && iou(&boxes[best].bbox, &boxes[i].bbox) <= thr);
    }
    kept
}

fn geometry_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut bev_err, mut d3_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let a = random_box(&mut rng, None);
        let b = random_box(&mut rng, Some(&a));
        bev_err = bev_err.max((iou_bev_rotated(&a, &b) - monte_carlo_iou(&a, &b, false, 1_000_000, &mut rng)).abs());
        d3_err = d3_err.max((iou_3d(&a, &b) - monte_carlo_iou(&a, &b, true, 1_000_000, &mut rng)).abs());
    }
    let mut nms_equal = 0;
    for set in 0..100 {
        let n = rng.gen_range(1..40);
        let boxes: Vec<ScoredBox> = (0..n)
            .map(|_| ScoredBox {
                bbox: random_box(&mut rng, None),
                // coarse scores force ties
                score: (rng.gen_range(0..20) as f64) / 20.0,
            })
            .collect();
        let thr = rng.gen_range(0.05..0.8);
        let ok = if set % 2 == 0 {
            nms_indices_with(&boxes, thr, usize::MAX, iou_bev_aa) == brute_force_nms(&boxes, thr, iou_bev_aa)
        } else {
            nms_indices_with(&boxes, thr, usize::MAX, iou_bev_rotated)
                == brute_force_nms(&boxes, thr, iou_bev_rotated)
        };
        nms_equal += ok as usize;
    }
    outcome(
        bev_err <= 0.01 && d3_err <= 0.01 && nms_equal == 100,
        format!("max |IoU - MC| bev {bev_err:.4}, 3d {d3_err:.4}; NMS equal on {nms_equal}/100 sets"),
    )
}

// ---------------------------------------------------------------- 6

/// Eleven-point AP straight from the definition.
fn reference_ap(flags: &[bool], num_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for r in 0..=10 {
        let level = r as f64 / 10.0;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|(_, prec)| *prec)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / 11.0
}

fn ap_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut equal = 0;
    for _ in 0..50 {
        let num_gt = rng.gen_range(1..30);
        let n = rng.gen_range(0..50);
        let mut tps = 0;
        let flags: Vec<bool> = (0..n)
            .map(|_| {
                let f = tps < num_gt && rng.gen_bool(0.6);
                tps += f as usize;
                f
            })
            .collect();
        let ap = average_precision(&flags, num_gt, Interpolation::ElevenPoint).unwrap();
        equal += (ap == reference_ap(&flags, num_gt)) as usize;
    }

    let gt = [Box3D::new(10.0, 0.0, 0.8, 4.0, 1.8, 1.6, 0.0)];
    let hard = [Difficulty::Easy];
    let run = |dets: &[ScoredBox]| {
        let scenes = [SceneEval {
            dets,
            gts: &gt,
            difficulties: &hard,
        }];
        evaluate(&scenes, iou_bev_rotated, 0.7, None, Interpolation::ElevenPoint).unwrap().ap
    };
    let exact = ScoredBox { bbox: gt[0], score: 0.9 };
    let miss = ScoredBox {
        bbox: Box3D::new(30.0, 5.0, 0.8, 4.0, 1.8, 1.6, 0.0),
        score: 0.5,
    };
    let all_found = run(&[exact]);
    let none = run(&[]);
    let tp_then_fp = run(&[exact, miss]);
    let hand_ok = all_found == 1.0 && none == 0.0 && tp_then_fp == 1.0;
    outcome(
        equal == 50 && hand_ok,
        format!("reference equal on {equal}/50; hand cases {all_found}, {none}, {tp_then_fp}"),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

const TRAIN_SCENES: usize = 200;
const TEST_SCENES: usize = 300;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Benchmark {
    cfg: Config,
    train: Vec<LabeledScene>,
    test: Vec<StoredScene>,
    test_grids: Vec<LabeledScene>,
}

fn stored(scenes: Vec<bevunc::synthgen::SyntheticScene>, prefix: &str) -> Vec<StoredScene> {
    scenes
        .into_iter()
        .enumerate()
        .map(|(i, s)| StoredScene {
            name: format!("{prefix}{i:04}"),
            cloud: s.cloud,
            gts: s.gts,
            noise: Some(s.noise),
        })
        .collect()
}

fn benchmark() -> Benchmark {
    let cfg = Config::load(workspace_root().join("configs/desk.conf")).expect("desk config");
    let exec = Exec::default();
    let spec = cfg.scene_spec();
    let train = stored(generate_set(&spec, TRAIN_SCENES, exec).unwrap(), "train_");
    let test_spec = SceneSpec {
        seed: spec.seed.wrapping_add(1_000_000),
        ..spec.clone()
    };
    let test = stored(generate_set(&test_spec, TEST_SCENES, exec).unwrap(), "test_");
    let label = |s: &StoredScene| labeled_scene(s, &cfg.raster, exec).unwrap();
    Benchmark {
        train: train.iter().map(label).collect(),
        test_grids: test.iter().map(label).collect(),
        test,
        cfg,
    }
}

struct Run {
    dets: Vec<Vec<Detection>>,
    records: Vec<UncertaintyRecord>,
    /// Matched records with the yaw replaced by that of the matched object.
    true_yaw: Vec<UncertaintyRecord>,
    train_secs: f64,
}

fn train_and_detect(bench: &Benchmark, seed: u64, attenuation: bool) -> Run {
    let exec = Exec::default();
    let mut tc = bench.cfg.train_config();
    tc.seed = seed;
    tc.attenuation = attenuation;
    let t = Instant::now();
    let (params, _): (ModelParams, _) = fit(&bench.train, &bench.cfg.detector, &tc, exec).expect("training");
    let train_secs = t.elapsed().as_secs_f64();
    let dets: Vec<Vec<Detection>> = bench
        .test_grids
        .iter()
        .map(|s| infer(&params, &s.grid, &bench.cfg.detector, exec))
        .collect();
    let (mut records, mut true_yaw) = (Vec::new(), Vec::new());
    for (s, d) in bench.test.iter().zip(&dets) {
        let sigma: Vec<f64> = s.noise.as_ref().unwrap().iter().map(|n| n.sigma_label).collect();
        let recs = uncertainty_records(&s.name, d, &s.gts, Some(&sigma));
        for (r, m) in recs.iter().zip(matched_gts(d, &s.gts)) {
            if let Some(j) = m {
                true_yaw.push(UncertaintyRecord {
                    yaw: s.gts[j].bbox.yaw,
                    ..r.clone()
                });
            }
        }
        records.extend(recs);
    }
    Run {
        dets,
        records,
        true_yaw,
        train_secs,
    }
}

fn hard_ap(bench: &Benchmark, run: &Run) -> f64 {
    let scored: Vec<Vec<ScoredBox>> = run.dets.iter().map(|d| d.iter().map(|x| x.scored()).collect()).collect();
    let gts: Vec<Vec<Box3D>> = bench.test.iter().map(|s| s.gts.iter().map(|g| g.bbox).collect()).collect();
    let diffs: Vec<Vec<Difficulty>> = bench
        .test
        .iter()
        .map(|s| s.gts.iter().map(|g| g.difficulty).collect())
        .collect();
    let scenes: Vec<SceneEval> = (0..scored.len())
        .map(|i| SceneEval {
            dets: &scored[i],
            gts: &gts[i],
            difficulties: &diffs[i],
        })
        .collect();
    evaluate(&scenes, iou_bev_rotated, 0.5, Some(Difficulty::Hard), Interpolation::ElevenPoint)
        .map(|r| r.ap)
        .unwrap_or(f64::NAN)
}

/// Location uncertainty of one detection: the summed variances of both
/// stages' box regressions.
fn object_tv(r: &UncertaintyRecord) -> f64 {
    r.rpn_tv + r.frh_loc_tv
}

fn confident(records: &[UncertaintyRecord]) -> Vec<&UncertaintyRecord> {
    records.iter().filter(|r| r.score > 0.5).collect()
}

fn uncertainty_learning(run: &Run) -> Outcome {
    let matched: Vec<&UncertaintyRecord> = confident(&run.records)
        .into_iter()
        .filter(|r| r.sigma_label.is_some())
        .collect();
    let tv: Vec<f64> = matched.iter().map(|r| object_tv(r)).collect();
    let sigma: Vec<f64> = matched.iter().map(|r| r.sigma_label.unwrap()).collect();
    let pcc = pearson(&tv, &sigma).unwrap_or(f64::NAN);

    let conf: Vec<UncertaintyRecord> = confident(&run.records).into_iter().cloned().collect();
    let bins = binned_means(&conf, BinKey::Distance, &default_edges(BinKey::Distance)).unwrap();
    let filled: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
    let mean_tv = |b: &bevunc::uncstats::BinStat| b.mean_rpn_tv.unwrap() + b.mean_loc_tv.unwrap();
    let (near, far) = (mean_tv(filled[0]), mean_tv(filled[filled.len() - 1]));
    outcome(
        pcc >= 0.6 && far > near && run.train_secs < 600.0,
        format!(
            "PCC(TV, sigma) {pcc:.3} over {} objects; TV nearest bin {near:.4}, farthest {far:.4}; train {:.0}s",
            tv.len(),
            run.train_secs
        ),
    )
}

fn accuracy_gain(gains: &[(f64, f64)]) -> Outcome {
    let diffs: Vec<f64> = gains.iter().map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let att_mean = gains.iter().map(|g| g.0).sum::<f64>() / gains.len() as f64;
    let base_mean = gains.iter().map(|g| g.1).sum::<f64>() / gains.len() as f64;
    let per: Vec<String> = gains.iter().map(|(a, b)| format!("{:.1}/{:.1}", 100.0 * a, 100.0 * b)).collect();
    outcome(
        att_mean >= base_mean && mean >= 0.01,
        format!(
            "Hard AP_BEV@0.5 attenuated/baseline per seed [{}], mean gain {:.2} points",
            per.join(", "),
            100.0 * mean
        ),
    )
}

/// Orientation TV binned by how far each object's yaw sits from the nearest
/// base angle, pooled over runs. Offsets come from the matched object's true
/// yaw; binning by predicted yaw is reported alongside for reference.
fn base_angle_analysis(runs: &[&Run]) -> Outcome {
    let edges = default_edges(BinKey::AngleOffset);
    let summarize = |recs: Vec<UncertaintyRecord>| {
        let bins = binned_means(&recs, BinKey::AngleOffset, &edges).unwrap();
        let centers: Vec<f64> = bins.iter().map(|b| 0.5 * (b.lo + b.hi)).collect();
        let means: Vec<f64> = bins.iter().map(|b| b.mean_orient_tv.unwrap_or(f64::NAN)).collect();
        let monotone = means.windows(2).all(|w| w[1] >= w[0]);
        let pcc = pearson(&centers, &means).unwrap_or(f64::NAN);
        let shown: Vec<String> = bins
            .iter()
            .map(|b| format!("{:.4}({})", b.mean_orient_tv.unwrap_or(f64::NAN), b.count))
            .collect();
        (monotone, pcc, shown.join(" "))
    };
    let truth: Vec<UncertaintyRecord> = runs
        .iter()
        .flat_map(|r| r.true_yaw.iter().filter(|x| x.score > 0.5))
        .cloned()
        .collect();
    debug_assert!(truth.iter().all(|r| base_angle_offset(r.yaw) <= FRAC_PI_4 + 1e-9));
    let predicted: Vec<UncertaintyRecord> = runs.iter().flat_map(|r| confident(&r.records)).cloned().collect();
    let (monotone, pcc, shown) = summarize(truth);
    let (_, pred_pcc, pred_shown) = summarize(predicted);
    outcome(
        monotone && pcc >= 0.8,
        format!("orientation TV by true-yaw offset bin [{shown}], PCC {pcc:.3}; by predicted yaw [{pred_shown}], PCC {pred_pcc:.3}"),
    )
}

// ---------------------------------------------------------------- 10

const PIPELINE_CONFIG: &str = "\
seed = 11
raster.x_min = 0
raster.x_max = 64
raster.y_min = -24
raster.y_max = 24
raster.xy_resolution = 0.2
synth.num_cars = 4
train.learning_rate = 1e-3
train.phase1_steps = 40
train.phase2_steps = 80
train.decay_every = 40
";

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let exe = env!("CARGO_BIN_EXE_bevunc");
    fs::write(dir.join("run.conf"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--spec".into(), d("run.conf"), "--count".into(), "6".into(), "--out".into(), d("scenes")],
        vec![
            "train".into(),
            "--data".into(),
            d("scenes"),
            "--config".into(),
            d("run.conf"),
            "--out-params".into(),
            d("model.params"),
            "--log".into(),
            d("train_log.csv"),
        ],
        vec![
            "infer".into(),
            "--params".into(),
            d("model.params"),
            "--data".into(),
            d("scenes"),
            "--config".into(),
            d("run.conf"),
            "--out".into(),
            d("dets"),
            "--records".into(),
            d("records.csv"),
        ],
        vec![
            "eval".into(),
            "--dets".into(),
            d("dets"),
            "--gts".into(),
            d("scenes"),
            "--iou".into(),
            "0.5".into(),
            "--curve".into(),
            d("pr_curve.csv"),
        ],
        vec![
            "analyze".into(),
            "--records".into(),
            d("records.csv"),
            "--analysis".into(),
            "tv-vs-distance".into(),
            "--out".into(),
            d("analysis.csv"),
        ],
    ];
    for (i, args) in steps.iter().enumerate() {
        let out = Command::new(exe).args(args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
        let shown = String::from_utf8_lossy(&out.stdout).replace(&dir.to_string_lossy().into_owned(), "<dir>");
        fs::write(dir.join(format!("stdout_{i}.txt")), shown).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = run_pipeline(a.path()).and_then(|_| run_pipeline(b.path())) {
        return outcome(false, e);
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<String> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    outcome(
        ta.len() == tb.len() && differing.is_empty() && ta.len() > 20,
        format!("{} artifacts compared, {} differ {:?}", ta.len(), differing.len(), differing),
    )
}

// ----------------------------------------------------------------

fn main() {
    // respect `cargo test -- <filter>` style invocations that list tests
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient fidelity", gradient_fidelity()),
        (2, "attenuated term behavior", attenuation_behavior()),
        (3, "rasterization exactness", rasterization_exactness()),
        (4, "codec roundtrips", codec_roundtrips()),
        (5, "geometry oracles", geometry_oracles()),
        (6, "AP oracle", ap_oracle()),
    ];
    for (n, name, o) in &results {
        print_line(*n, name, o);
    }

    let bench = benchmark();
    let mut att_runs = Vec::new();
    let mut gains = Vec::new();
    for &seed in &SEEDS {
        let att = train_and_detect(&bench, seed, true);
        let base = train_and_detect(&bench, seed, false);
        gains.push((hard_ap(&bench, &att), hard_ap(&bench, &base)));
        att_runs.push(att);
    }
    let late: Vec<(u32, &str, Outcome)> = vec![
        (7, "uncertainty learning", uncertainty_learning(&att_runs[0])),
        (8, "uncertainty-aided accuracy", accuracy_gain(&gains)),
        (9, "base-angle analysis", base_angle_analysis(&att_runs.iter().collect::<Vec<_>>())),
        (10, "pipeline determinism", determinism()),
    ];
    for (n, name, o) in &late {
        print_line(*n, name, o);
    }
    results.extend(late);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

fn print_line(n: u32, name: &str, o: &Outcome) {
    println!(
        "criterion {n:>2} [{}] {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}
