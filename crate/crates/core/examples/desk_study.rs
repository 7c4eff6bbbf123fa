//! Trains the detector with and without loss attenuation on synthetic scenes
//! and reports accuracy and uncertainty statistics.
//!
//! cargo run --release --example desk_study -- [config] [train_scenes] [test_scenes] [seed]

use std::f64::consts::FRAC_PI_4;
use std::time::Instant;

use bevunc::boxgeom::iou_bev_rotated;
use bevunc::config::Config;
use bevunc::detection::Detection;
use bevunc::metrics::{evaluate, Interpolation, SceneEval};
use bevunc::pcio::Difficulty;
use bevunc::pipeline::{labeled_scene, uncertainty_records};
use bevunc::synthgen::{generate_set, SceneSpec, StoredScene, SyntheticScene};
use bevunc::toymodel::{fit, infer};
use bevunc::uncstats::{base_angle_offset, pearson, UncertaintyRecord};
use bevunc::Exec;

fn stored(scenes: Vec<SyntheticScene>) -> Vec<StoredScene> {
    scenes
        .into_iter()
        .enumerate()
        .map(|(i, s)| StoredScene {
            name: format!("s{i}"),
            cloud: s.cloud,
            gts: s.gts,
            noise: Some(s.noise),
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map_or("configs/desk.conf", |s| s.as_str());
    let n_train: usize = args.get(2).map_or(200, |a| a.parse().unwrap());
    let n_test: usize = args.get(3).map_or(100, |a| a.parse().unwrap());
    let mut cfg = Config::load(path).unwrap();
    if let Some(s) = args.get(4) {
        cfg.seed = s.parse().unwrap();
    }
    let exec = Exec::Parallel;

    let t0 = Instant::now();
    let spec = cfg.scene_spec();
    let train = stored(generate_set(&spec, n_train, exec).unwrap());
    let test_spec = SceneSpec {
        seed: spec.seed.wrapping_add(1_000_000),
        ..spec.clone()
    };
    let test = stored(generate_set(&test_spec, n_test, exec).unwrap());
    let train_l: Vec<_> = train.iter().map(|s| labeled_scene(s, &cfg.raster, exec).unwrap()).collect();
    let test_l: Vec<_> = test.iter().map(|s| labeled_scene(s, &cfg.raster, exec).unwrap()).collect();
    println!("data {:.1}s", t0.elapsed().as_secs_f64());

    for attenuation in [true, false] {
        let t = Instant::now();
        let mut tc = cfg.train_config();
        tc.attenuation = attenuation;
        let (params, log) = fit(&train_l, &cfg.detector, &tc, exec).unwrap();
        let last = log.last().unwrap().loss;
        println!(
            "attenuation={attenuation} train {:.1}s final {:?}",
            t.elapsed().as_secs_f64(),
            last
        );
        let dets: Vec<Vec<Detection>> = test_l
            .iter()
            .map(|s| infer(&params, &s.grid, &cfg.detector, exec))
            .collect();
        let scored: Vec<Vec<_>> = dets.iter().map(|d| d.iter().map(|x| x.scored()).collect()).collect();
        let gtb: Vec<Vec<_>> = test.iter().map(|s| s.gts.iter().map(|g| g.bbox).collect()).collect();
        let diffs: Vec<Vec<_>> = test.iter().map(|s| s.gts.iter().map(|g| g.difficulty).collect()).collect();
        let evals: Vec<SceneEval> = (0..test.len())
            .map(|i| SceneEval {
                dets: &scored[i],
                gts: &gtb[i],
                difficulties: &diffs[i],
            })
            .collect();
        for thr in [0.5, 0.7] {
            let mut line = format!("  AP_BEV@{thr}:");
            for d in [None, Some(Difficulty::Easy), Some(Difficulty::Moderate), Some(Difficulty::Hard)] {
                let ap = evaluate(&evals, iou_bev_rotated, thr, d, Interpolation::ElevenPoint)
                    .map(|r| r.ap)
                    .unwrap_or(f64::NAN);
                line += &format!(" {d:?}={ap:.4}");
            }
            println!("{line}");
        }

        let mut recs: Vec<UncertaintyRecord> = Vec::new();
        for (i, s) in test.iter().enumerate() {
            let sig: Vec<f64> = s.noise.as_ref().unwrap().iter().map(|n| n.sigma_label).collect();
            recs.extend(uncertainty_records(&s.name, &dets[i], &s.gts, Some(&sig)));
        }
        let m: Vec<&UncertaintyRecord> = recs
            .iter()
            .filter(|r| r.sigma_label.is_some() && r.score > 0.5)
            .collect();
        let sig: Vec<f64> = m.iter().map(|r| r.sigma_label.unwrap()).collect();
        let pick: [(&str, fn(&UncertaintyRecord) -> f64); 5] = [
            ("rpn+loc_tv", |r| r.rpn_tv + r.frh_loc_tv),
            ("frh_tv", |r| r.frh_tv()),
            ("loc_tv", |r| r.frh_loc_tv),
            ("orient_tv", |r| r.frh_orient_tv),
            ("rpn_tv", |r| r.rpn_tv),
        ];
        for (name, f) in pick {
            let tv: Vec<f64> = m.iter().map(|r| f(r)).collect();
            println!(
                "  n={} PCC({name}, sigma)={:.3}",
                m.len(),
                pearson(&tv, &sig).unwrap_or(f64::NAN)
            );
        }
        let edges = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 70.0];
        let mut line = String::from("  center err by distance:");
        for w in edges.windows(2) {
            let mut errs = Vec::new();
            for (i, s) in test.iter().enumerate() {
                for d in &dets[i] {
                    if d.score <= 0.5 {
                        continue;
                    }
                    if let Some(g) = s.gts.iter().find(|g| iou_bev_rotated(&g.bbox, &d.bbox) >= 0.5) {
                        if g.bbox.range() >= w[0] && g.bbox.range() < w[1] {
                            errs.push((g.bbox.cx - d.bbox.cx).hypot(g.bbox.cy - d.bbox.cy));
                        }
                    }
                }
            }
            line += &format!(" {:.3}", mean(&errs));
        }
        println!("{line}");
        let mut line = String::from("  frh_tv by distance:");
        for w in edges.windows(2) {
            let v: Vec<f64> = m
                .iter()
                .filter(|r| r.distance >= w[0] && r.distance < w[1])
                .map(|r| r.frh_tv())
                .collect();
            line += &format!(" [{}-{}) {:.4}({})", w[0], w[1], mean(&v), v.len());
        }
        println!("{line}");
        let mut line = String::from("  orient_tv by base offset:");
        for b in 0..5 {
            let lo = b as f64 * FRAC_PI_4 / 5.0;
            let hi = lo + FRAC_PI_4 / 5.0 + if b == 4 { 1e-9 } else { 0.0 };
            let v: Vec<f64> = recs
                .iter()
                .filter(|r| r.score > 0.5)
                .filter(|r| (lo..hi).contains(&base_angle_offset(r.yaw)))
                .map(|r| r.frh_orient_tv)
                .collect();
            line += &format!(" {:.5}({})", mean(&v), v.len());
        }
        println!("{line}");
        println!("  total {:.1}s", t.elapsed().as_secs_f64());
    }
}
