//! Small two-stage detector trained on pooled BEV features.
//!
//! Stage 1 scores and refines yaw-free anchors; stage 2 refines proposals
//! into oriented boxes via the four-corner and heading encodings. Both stages
//! predict a log-variance for every regression output.

pub mod dataset;
pub mod features;
pub mod infer;
pub mod model;
pub mod net;
pub mod train;

pub use dataset::{build_dataset, training_labels, Dataset, LabeledScene, Sample};
pub use features::{featurize, FeatureConfig, OccupancyIndex};
pub use infer::{infer, propose, Proposal};
pub use model::{
    decode_params, encode_params, load_params, quantize, save_params, DetectorConfig, ModelParams, FRH_OUT,
};
pub use net::{DropoutKey, Stage, StageOutput, StageShape};
pub use train::{
    batch_loss, draw_batch, format_log, train, Batch, DropoutPlan, LogRow, ModelGrad, Optimizer, TrainConfig,
};

use crate::codec::kmeans_anchor_dims;
use crate::error::Result;
use crate::par::Exec;

/// Mixes a base seed with a stream id and index into an independent seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Anchor sizes clustered from every labelled box.
pub fn anchor_dims_for(scenes: &[LabeledScene], k: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    let samples: Vec<[f64; 3]> = scenes
        .iter()
        .flat_map(|s| s.gts.iter().map(|b| [b.l, b.w, b.h]))
        .collect();
    kmeans_anchor_dims(&samples, k, seed)
}

/// Untrained model with standardization fitted to `data`.
pub fn initial_params(
    data: &Dataset,
    num_slices: usize,
    det: &DetectorConfig,
    cfg: &TrainConfig,
    anchor_dims: Vec<[f64; 3]>,
) -> ModelParams {
    let mut p = ModelParams::init(num_slices, det, (cfg.hidden_rpn, cfg.hidden_frh), anchor_dims, cfg.seed);
    p.rpn.fit_standardization(data.rpn.features());
    p.frh.fit_standardization(data.frh.features());
    p.rpn.fit_target_scale(data.rpn.positives.iter().map(|s| s.target.as_slice()));
    p.frh.fit_target_scale(data.frh.positives.iter().map(|s| s.target.as_slice()));
    p
}

/// Clusters anchors, builds the sample pools and trains both stages.
pub fn fit(
    scenes: &[LabeledScene],
    det: &DetectorConfig,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(ModelParams, Vec<LogRow>)> {
    cfg.validate()?;
    let dims = anchor_dims_for(scenes, det.anchor_clusters, cfg.seed)?;
    let data = build_dataset(scenes, det, &dims, cfg.seed, exec)?;
    let num_slices = scenes.first().map_or(0, |s| s.grid.spec.num_slices);
    let init = initial_params(&data, num_slices, det, cfg, dims);
    train(init, &data, cfg, exec)
}
