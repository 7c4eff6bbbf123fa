//! Glue between stored scenes, the detector and the analysis records.

use crate::bevraster::{rasterize_with, RangeSpec};
use crate::boxgeom::{iou_bev_rotated, ScoredBox};
use crate::detection::Detection;
use crate::error::Result;
use crate::metrics::match_detections;
use crate::par::Exec;
use crate::pcio::GroundTruthObject;
use crate::synthgen::StoredScene;
use crate::toymodel::LabeledScene;
use crate::uncstats::UncertaintyRecord;

/// BEV IoU a detection needs with a ground truth to inherit its difficulty
/// and label noise in the analysis records.
pub const RECORD_MATCH_IOU: f64 = 0.5;

/// Rasterizes a stored scene. Objects without a noise record get zero label
/// noise.
pub fn labeled_scene(scene: &StoredScene, spec: &RangeSpec, exec: Exec) -> Result<LabeledScene> {
    let grid = rasterize_with(&scene.cloud, spec, exec)?;
    let gts = scene.gts.iter().map(|g| g.bbox).collect();
    let sigma = match &scene.noise {
        Some(n) if n.len() == scene.gts.len() => n.iter().map(|r| r.sigma_label).collect(),
        _ => vec![0.0; scene.gts.len()],
    };
    Ok(LabeledScene { grid, gts, sigma })
}

/// Ground-truth index each detection is matched to at [`RECORD_MATCH_IOU`].
pub fn matched_gts(dets: &[Detection], gts: &[GroundTruthObject]) -> Vec<Option<usize>> {
    let scored: Vec<ScoredBox> = dets.iter().map(|d| d.scored()).collect();
    let boxes: Vec<_> = gts.iter().map(|g| g.bbox).collect();
    let m = match_detections(&scored, &boxes, iou_bev_rotated, RECORD_MATCH_IOU);
    let mut matched = vec![None; dets.len()];
    for &(i, j, _) in &m.matches {
        matched[i] = Some(j);
    }
    matched
}

/// One record per detection. Detections matched to a ground truth carry its
/// difficulty and, when known, its label noise magnitude.
pub fn uncertainty_records(
    scene: &str,
    dets: &[Detection],
    gts: &[GroundTruthObject],
    sigma: Option<&[f64]>,
) -> Vec<UncertaintyRecord> {
    let matched = matched_gts(dets, gts);
    dets.iter()
        .enumerate()
        .map(|(i, d)| UncertaintyRecord {
            scene: scene.to_string(),
            det_id: i,
            score: d.score,
            distance: d.bbox.range(),
            yaw: d.bbox.yaw,
            difficulty: matched[i].map(|j| gts[j].difficulty),
            rpn_tv: d.rpn_tv(),
            frh_loc_tv: d.loc_tv(),
            frh_orient_tv: d.orient_tv(),
            sigma_label: matched[i].and_then(|j| sigma.map(|s| s[j])),
        })
        .collect()
}
