//! Training samples for both stages, built from rasterized scenes with
//! noisy labels.
//!
//! Stage 1 sees non-empty anchors: every positive plus a random subset of
//! negatives. Stage 2 sees axis-aligned ROIs jittered around each label plus
//! random non-empty anchors, assigned with the stage-2 thresholds.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::derive_seed;
use super::features::{featurize, OccupancyIndex};
use super::model::DetectorConfig;
use crate::bevraster::BevGrid;
use crate::boxgeom::Box3D;
use crate::codec::{assign, encode_frh, encode_rpn, generate_anchors, AnchorConfig, AssignLabel};
use crate::error::Result;
use crate::par::Exec;
use crate::synthgen::noisy_label;

/// One rasterized scene with clean boxes and the per-object label noise
/// magnitude.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub grid: BevGrid,
    pub gts: Vec<Box3D>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub positive: bool,
    /// Regression target; empty for negatives.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagePool {
    pub positives: Vec<Sample>,
    pub negatives: Vec<Sample>,
}

impl StagePool {
    fn extend(&mut self, other: StagePool) {
        self.positives.extend(other.positives);
        self.negatives.extend(other.negatives);
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .map(|s| s.features.as_slice())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rpn: StagePool,
    pub frh: StagePool,
}

/// The training labels for one scene: each box moved once by its own noise
/// magnitude.
pub fn training_labels(scene: &LabeledScene, seed: u64, scene_index: usize) -> Vec<Box3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, scene_index as u64));
    scene
        .gts
        .iter()
        .zip(&scene.sigma)
        .map(|(b, &s)| noisy_label(b, s, &mut rng))
        .collect()
}

/// Anchor boxes whose footprint covers at least one occupied cell.
pub fn occupied_anchor_boxes(grid: &BevGrid, det: &DetectorConfig, dims: &[[f64; 3]]) -> Vec<Box3D> {
    let anchors = generate_anchors(
        &grid.spec,
        &AnchorConfig {
            stride_cells: det.anchor_stride,
            dims: dims.to_vec(),
            ground_z: det.ground_z,
        },
    );
    let occ = OccupancyIndex::new(grid);
    anchors
        .iter()
        .map(|a| a.to_box())
        .filter(|b| occ.count_in(grid, b) > 0)
        .collect()
}

fn scene_samples(
    scene: &LabeledScene,
    index: usize,
    det: &DetectorConfig,
    dims: &[[f64; 3]],
    seed: u64,
) -> Result<Dataset> {
    let labels = training_labels(scene, seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, index as u64));
    let anchors = occupied_anchor_boxes(&scene.grid, det, dims);
    let mut out = Dataset::default();

    let asg = assign(&anchors, &labels, det.rpn_pos_iou, det.rpn_neg_iou);
    let mut neg_idx = Vec::new();
    for (a, g) in anchors.iter().zip(&asg) {
        if g.label == AssignLabel::Positive {
            let gt = &labels[g.matched_gt.unwrap()];
            out.rpn.positives.push(Sample {
                features: featurize(&scene.grid, a, &det.rpn_features)?,
                positive: true,
                target: encode_rpn(a, gt).to_vec(),
            });
        }
    }
    for (i, g) in asg.iter().enumerate() {
        if g.label == AssignLabel::Negative {
            neg_idx.push(i);
        }
    }
    let take = det.rpn_neg_per_scene.min(neg_idx.len());
    let mut picked: Vec<usize> = sample_indices(&mut rng, neg_idx.len(), take).into_vec();
    picked.sort_unstable();
    for k in picked {
        out.rpn.negatives.push(Sample {
            features: featurize(&scene.grid, &anchors[neg_idx[k]], &det.rpn_features)?,
            positive: false,
            target: Vec::new(),
        });
    }

    // stage-2 candidates
    let mut rois = Vec::with_capacity(det.proposals_train);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let half = det.proposals_train / 2;
    if !labels.is_empty() {
        for k in 0..half {
            let g = labels[k % labels.len()].to_axis_aligned();
            let spread = if k % 4 == 3 { 1.2 } else { 0.25 };
            rois.push(Box3D::axis_aligned(
                g.cx + spread * unit.sample(&mut rng),
                g.cy + spread * unit.sample(&mut rng),
                g.cz + 0.1 * unit.sample(&mut rng),
                g.l * (0.08 * unit.sample(&mut rng)).exp(),
                g.w * (0.08 * unit.sample(&mut rng)).exp(),
                g.h * (0.08 * unit.sample(&mut rng)).exp(),
            ));
        }
    }
    while rois.len() < det.proposals_train && !anchors.is_empty() {
        rois.push(anchors[rng.gen_range(0..anchors.len())]);
    }
    let asg = assign(&rois, &labels, det.frh_pos_iou, det.frh_neg_iou);
    for (roi, g) in rois.iter().zip(&asg) {
        let features = match featurize(&scene.grid, roi, &det.frh_features) {
            Ok(f) => f,
            Err(crate::error::Error::OutOfGrid) => continue,
            Err(e) => return Err(e),
        };
        match g.label {
            AssignLabel::Positive => {
                let t = encode_frh(roi, &labels[g.matched_gt.unwrap()], det.ground_z);
                let mut target = t.t_v.to_vec();
                target.extend_from_slice(&t.r_v);
                out.frh.positives.push(Sample {
                    features,
                    positive: true,
                    target,
                });
            }
            AssignLabel::Negative => out.frh.negatives.push(Sample {
                features,
                positive: false,
                target: Vec::new(),
            }),
            AssignLabel::Ignore => {}
        }
    }
    Ok(out)
}

/// Samples from every scene, concatenated in scene order.
pub fn build_dataset(
    scenes: &[LabeledScene],
    det: &DetectorConfig,
    anchor_dims: &[[f64; 3]],
    seed: u64,
    exec: Exec,
) -> Result<Dataset> {
    let parts = exec.map_range(scenes.len(), |i| scene_samples(&scenes[i], i, det, anchor_dims, seed));
    let mut data = Dataset::default();
    for p in parts {
        let p = p?;
        data.rpn.extend(p.rpn);
        data.frh.extend(p.frh);
    }
    Ok(data)
}
