//! Experiment configuration: `key = value` lines, `#` comments, dotted
//! section prefixes. Unknown or repeated keys are errors.
//!
//! ```text
//! seed = 7
//! raster.xy_resolution = 0.2
//! train.phase1_steps = 500
//! loss.likelihood = laplace
//! synth.region = 6, 60, -20, 20
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attnloss::Likelihood;
use crate::bevraster::RangeSpec;
use crate::error::{Error, Result};
use crate::synthgen::SceneSpec;
use crate::toymodel::{DetectorConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub raster: RangeSpec,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// Scene generator settings; its range and seed are taken from
    /// `raster` and `seed` by [`Config::scene_spec`].
    pub synth: SceneSpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            raster: RangeSpec::standard(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            synth: SceneSpec::default(),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(Some(line), format!("bad value `{v}` for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(Some(line), format!("bad boolean `{v}` for {key}"))),
    }
}

fn parse_list<const N: usize>(line: usize, key: &str, v: &str) -> Result<[f64; N]> {
    let items: Vec<f64> = v
        .split(',')
        .map(|s| parse(line, key, s.trim()))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::config(Some(line), format!("{key} takes {N} comma-separated numbers")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(Some(n), format!("expected `key = value`, found `{line}`")))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(Some(n), format!("duplicate key {key}")));
            }
            c.set(n, key, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    fn set(&mut self, n: usize, key: &str, v: &str) -> Result<()> {
        let r = &mut self.raster;
        let d = &mut self.detector;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = parse(n, key, v)?,

            "raster.x_min" => r.x_min = parse(n, key, v)?,
            "raster.x_max" => r.x_max = parse(n, key, v)?,
            "raster.y_min" => r.y_min = parse(n, key, v)?,
            "raster.y_max" => r.y_max = parse(n, key, v)?,
            "raster.z_min" => r.z_min = parse(n, key, v)?,
            "raster.z_max" => r.z_max = parse(n, key, v)?,
            "raster.xy_resolution" => r.xy_resolution = parse(n, key, v)?,
            "raster.num_slices" => r.num_slices = parse(n, key, v)?,
            "raster.slice_height" => r.slice_height = parse(n, key, v)?,

            "anchor.stride" => d.anchor_stride = parse(n, key, v)?,
            "anchor.clusters" => d.anchor_clusters = parse(n, key, v)?,
            "anchor.ground_z" => d.ground_z = parse(n, key, v)?,

            "assign.rpn_pos" => d.rpn_pos_iou = parse(n, key, v)?,
            "assign.rpn_neg" => d.rpn_neg_iou = parse(n, key, v)?,
            "assign.frh_pos" => d.frh_pos_iou = parse(n, key, v)?,
            "assign.frh_neg" => d.frh_neg_iou = parse(n, key, v)?,
            "assign.rpn_negatives_per_scene" => d.rpn_neg_per_scene = parse(n, key, v)?,

            "nms.proposal_iou" => d.nms_iou = parse(n, key, v)?,
            "nms.final_iou" => d.final_nms_iou = parse(n, key, v)?,
            "proposals.train" => d.proposals_train = parse(n, key, v)?,
            "proposals.test" => d.proposals_test = parse(n, key, v)?,
            "detect.score_threshold" => d.score_threshold = parse(n, key, v)?,
            "detect.max_detections" => d.max_detections = parse(n, key, v)?,

            "features.rpn_bins" => d.rpn_features.pool_bins = parse(n, key, v)?,
            "features.rpn_margin" => d.rpn_features.margin = parse(n, key, v)?,
            "features.frh_bins" => d.frh_features.pool_bins = parse(n, key, v)?,
            "features.frh_margin" => d.frh_features.margin = parse(n, key, v)?,

            "train.learning_rate" => t.learning_rate = parse(n, key, v)?,
            "train.decay_factor" => t.decay_factor = parse(n, key, v)?,
            "train.decay_every" => t.decay_every = parse(n, key, v)?,
            "train.beta1" => t.beta1 = parse(n, key, v)?,
            "train.beta2" => t.beta2 = parse(n, key, v)?,
            "train.epsilon" => t.epsilon = parse(n, key, v)?,
            "train.dropout" => t.dropout = parse(n, key, v)?,
            "train.weight_decay" => t.weight_decay = parse(n, key, v)?,
            "train.phase1_steps" => t.phase1_steps = parse(n, key, v)?,
            "train.phase2_steps" => t.phase2_steps = parse(n, key, v)?,
            "train.batch_rpn" => t.batch_rpn = parse(n, key, v)?,
            "train.batch_frh" => t.batch_frh = parse(n, key, v)?,
            "train.hidden_rpn" => t.hidden_rpn = parse(n, key, v)?,
            "train.hidden_frh" => t.hidden_frh = parse(n, key, v)?,

            "loss.likelihood" => {
                t.likelihood = v.parse::<Likelihood>().map_err(|e| Error::config(Some(n), e))?
            }
            "loss.attenuation" => t.attenuation = parse_bool(n, key, v)?,

            "synth.num_cars" => s.num_cars = parse(n, key, v)?,
            "synth.region" => s.region = parse_list(n, key, v)?,
            "synth.dim_mean" => s.dim_mean = parse_list(n, key, v)?,
            "synth.dim_std" => s.dim_std = parse_list(n, key, v)?,
            "synth.p_base" => s.p_base = parse(n, key, v)?,
            "synth.point_budget" => s.point_budget = parse(n, key, v)?,
            "synth.ref_distance" => s.ref_distance = parse(n, key, v)?,
            "synth.density_exponent" => s.density_exponent = parse(n, key, v)?,
            "synth.occlusion" => s.occlusion = parse_bool(n, key, v)?,
            "synth.jitter_sigma" => s.jitter_sigma = parse(n, key, v)?,
            "synth.label_noise_base" => s.label_noise_base = parse(n, key, v)?,
            "synth.label_noise_per_meter" => s.label_noise_per_meter = parse(n, key, v)?,
            "synth.label_noise_occlusion" => s.label_noise_occlusion = parse(n, key, v)?,

            _ => return Err(Error::config(Some(n), format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        self.train.validate()?;
        let d = &self.detector;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if ![d.rpn_pos_iou, d.rpn_neg_iou, d.frh_pos_iou, d.frh_neg_iou, d.nms_iou, d.final_nms_iou]
            .into_iter()
            .all(unit)
            || d.rpn_neg_iou > d.rpn_pos_iou
            || d.frh_neg_iou > d.frh_pos_iou
        {
            return Err(Error::config(None, "IoU thresholds must lie in [0, 1] with neg <= pos"));
        }
        if d.anchor_stride == 0 || d.anchor_clusters == 0 || d.proposals_test == 0 {
            return Err(Error::config(None, "anchor stride, cluster count and proposal count must be positive"));
        }
        if d.rpn_features.pool_bins == 0 || d.frh_features.pool_bins == 0 {
            return Err(Error::config(None, "feature pooling needs at least one bin"));
        }
        if !(d.rpn_features.margin > 0.0 && d.frh_features.margin > 0.0) {
            return Err(Error::config(None, "feature margins must be positive"));
        }
        self.scene_spec().validate()
    }

    /// Generator settings with the configured range and seed.
    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            range: self.raster,
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Training settings with the configured seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }
}
