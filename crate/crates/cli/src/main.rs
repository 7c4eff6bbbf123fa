use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bevunc::bevraster::{encode_grid, rasterize_with};
use bevunc::boxgeom::{iou_3d, iou_bev_rotated, Box3D};
use bevunc::config::Config;
use bevunc::detection::{load_detections, save_detections, Detection};
use bevunc::error::{Error, Result};
use bevunc::gradcheck::run_gradcheck;
use bevunc::metrics::{evaluate_table, Interpolation, SceneEval};
use bevunc::pcio::{load_cloud, load_labels, GroundTruthObject};
use bevunc::pipeline::{labeled_scene, uncertainty_records};
use bevunc::synthgen::{generate_set, read_scene, read_scene_dir, scene_name, write_scene};
use bevunc::toymodel::{fit, format_log, infer, load_params, save_params};
use bevunc::uncstats::{load_records, run_analysis, save_records, Analysis};
use bevunc::Exec;

/// Uncertainty-aware LiDAR BEV car detection toolkit.
#[derive(Parser)]
#[command(name = "bevunc", version, about)]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a point cloud into a BEV grid file.
    Rasterize {
        #[arg(long)]
        cloud: PathBuf,
        /// Config file providing the raster.* keys.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic scenes with clouds, labels and noise records.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-stage detector on a scene directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_params: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Run the detector on every scene of a directory.
    Infer {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving one detection file per scene.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-detection uncertainty records.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Average precision of detections against labels.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = Metric::Bev)]
        metric: Metric,
        #[arg(long, value_enum, default_value_t = Points::Eleven)]
        points: Points,
        /// Precision-recall curve output (default: <dets>/pr_curve.csv).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Binned statistics and correlations over uncertainty records.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        analysis: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        rtol: f64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Bev,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, ValueEnum)]
enum Points {
    #[value(name = "11")]
    Eleven,
    #[value(name = "40")]
    Forty,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Label files (`*.txt`) in a directory, as sorted scene names.
fn label_names(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem() {
                names.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Rasterize { cloud, spec, out } => {
            let cfg = Config::load(spec)?;
            let pc = load_cloud(cloud)?;
            let grid = rasterize_with(&pc, &cfg.raster, exec)?;
            write(&out, encode_grid(&grid))?;
            let (h, w, c) = grid.shape();
            println!("wrote {h}x{w}x{c} grid to {}", out.display());
        }
        Command::Synth { spec, count, out } => {
            let cfg = Config::load(spec)?;
            let scenes = generate_set(&cfg.scene_spec(), count, exec)?;
            create_dir(&out)?;
            for (i, s) in scenes.iter().enumerate() {
                write_scene(&out, &scene_name(i), s)?;
            }
            println!("wrote {count} scenes to {}", out.display());
        }
        Command::Train {
            data,
            config,
            out_params,
            log,
        } => {
            let cfg = Config::load(config)?;
            let stored = read_scene_dir(&data)?;
            if stored.is_empty() {
                return Err(Error::InsufficientData { needed: 1, got: 0 });
            }
            let scenes = stored
                .iter()
                .map(|s| labeled_scene(s, &cfg.raster, exec))
                .collect::<Result<Vec<_>>>()?;
            let (params, rows) = fit(&scenes, &cfg.detector, &cfg.train_config(), exec)?;
            save_params(&params, &out_params)?;
            write(&log, format_log(&rows))?;
            if let Some(last) = rows.last() {
                println!("trained {} steps, final total loss {}", rows.len(), last.loss.total);
            }
        }
        Command::Infer {
            params,
            data,
            config,
            out,
            records,
        } => {
            let cfg = Config::load(config)?;
            let params = load_params(params)?;
            create_dir(&out)?;
            let mut recs = Vec::new();
            let names = bevunc::synthgen::list_scenes(&data)?;
            for name in &names {
                let scene = read_scene(&data, name)?;
                let grid = rasterize_with(&scene.cloud, &cfg.raster, exec)?;
                let dets: Vec<Detection> = infer(&params, &grid, &cfg.detector, exec);
                save_detections(&dets, out.join(format!("{name}.txt")))?;
                let sigma: Option<Vec<f64>> = scene
                    .noise
                    .as_ref()
                    .filter(|n| n.len() == scene.gts.len())
                    .map(|n| n.iter().map(|r| r.sigma_label).collect());
                recs.extend(uncertainty_records(name, &dets, &scene.gts, sigma.as_deref()));
            }
            if let Some(path) = records {
                save_records(&recs, &path)?;
            }
            println!("wrote detections for {} scenes to {}", names.len(), out.display());
        }
        Command::Eval {
            dets,
            gts,
            iou,
            metric,
            points,
            curve,
        } => {
            let names = label_names(&gts)?;
            let mut all_gts: Vec<Vec<GroundTruthObject>> = Vec::new();
            let mut all_dets = Vec::new();
            for name in &names {
                all_gts.push(load_labels(gts.join(format!("{name}.txt")))?);
                let p = dets.join(format!("{name}.txt"));
                let d = if p.exists() { load_detections(&p)? } else { Vec::new() };
                all_dets.push(d.iter().map(|x| x.scored()).collect::<Vec<_>>());
            }
            let boxes: Vec<Vec<Box3D>> = all_gts.iter().map(|g| g.iter().map(|o| o.bbox).collect()).collect();
            let diffs: Vec<Vec<_>> = all_gts.iter().map(|g| g.iter().map(|o| o.difficulty).collect()).collect();
            let scenes: Vec<SceneEval> = (0..names.len())
                .map(|i| SceneEval {
                    dets: &all_dets[i],
                    gts: &boxes[i],
                    difficulties: &diffs[i],
                })
                .collect();
            let interp = match points {
                Points::Eleven => Interpolation::ElevenPoint,
                Points::Forty => Interpolation::FortyPoint,
            };
            let (label, (overall, per)) = match metric {
                Metric::Bev => ("BEV", evaluate_table(&scenes, iou_bev_rotated, iou, interp)?),
                Metric::ThreeD => ("3D", evaluate_table(&scenes, iou_3d, iou, interp)?),
            };
            println!("AP_{label}@{iou}");
            println!("overall\t{:.4}\t({} objects)", overall.ap, overall.num_gt);
            for (d, ap) in per {
                match ap {
                    Some(ap) => println!("{d}\t{ap:.4}"),
                    None => println!("{d}\t-"),
                }
            }
            let mut csv = String::from("recall,precision\n");
            for (r, p) in &overall.curve {
                csv.push_str(&format!("{r},{p}\n"));
            }
            write(&curve.unwrap_or_else(|| dets.join("pr_curve.csv")), csv)?;
        }
        Command::Analyze { records, analysis, out } => {
            let analysis: Analysis = analysis.parse().map_err(|m: String| Error::Config { line: None, msg: m })?;
            let recs = load_records(records)?;
            write(&out, run_analysis(&recs, analysis)?)?;
        }
        Command::Gradcheck { rtol, seeds } => {
            let results = run_gradcheck(seeds);
            let mut failed = 0;
            let mut names: Vec<&str> = results.iter().map(|r| r.name).collect();
            names.dedup();
            for name in names {
                let group: Vec<_> = results.iter().filter(|r| r.name == name).collect();
                let worst = group.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
                let checked: usize = group.iter().map(|r| r.checked).sum();
                let bad = group.iter().filter(|r| !r.passed(rtol)).count();
                failed += bad;
                let status = if bad == 0 { "ok" } else { "FAILED" };
                println!("{name:<18} {status:<6} seeds {:>3}  partials {checked:>7}  max rel err {worst:.3e}", group.len());
            }
            if failed > 0 {
                return Err(Error::DegenerateInput(format!("{failed} gradient checks exceeded rtol {rtol}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
