//! Two-stage inference over one BEV grid.

use super::dataset::occupied_anchor_boxes;
use super::features::featurize;
use super::model::{DetectorConfig, ModelParams};
use crate::attnloss::softmax;
use crate::bevraster::BevGrid;
use crate::boxgeom::{iou_bev_aa, iou_bev_rotated, nms_indices_with, Box3D, ScoredBox};
use crate::codec::{decode_frh, decode_rpn, LOC_DIM, ORIENT_DIM, RPN_DIM};
use crate::detection::Detection;
use crate::par::Exec;

/// A stage-1 output kept for the second stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box3D,
    pub score: f64,
    pub log_var: [f64; RPN_DIM],
}

/// Scores and refines every occupied anchor, then keeps the top proposals
/// after axis-aligned suppression.
pub fn propose(params: &ModelParams, grid: &BevGrid, det: &DetectorConfig, exec: Exec) -> Vec<Proposal> {
    let anchors = occupied_anchor_boxes(grid, det, &params.anchor_dims);
    let scored: Vec<Option<Proposal>> = exec.map(&anchors, |a| {
        let f = featurize(grid, a, &det.rpn_features).ok()?;
        let (mut o, _) = params.rpn.forward(&f, None).ok()?;
        params.rpn.to_target_units(&mut o);
        let mut log_var = [0.0; RPN_DIM];
        log_var.copy_from_slice(&o.log_var);
        Some(Proposal {
            bbox: decode_rpn(a, &o.reg),
            score: softmax(&o.logits)[1],
            log_var,
        })
    });
    let props: Vec<Proposal> = scored.into_iter().flatten().collect();
    let boxes: Vec<ScoredBox> = props
        .iter()
        .map(|p| ScoredBox {
            bbox: p.bbox,
            score: p.score,
        })
        .collect();
    nms_indices_with(&boxes, det.nms_iou, det.proposals_test, iou_bev_aa)
        .into_iter()
        .map(|i| props[i])
        .collect()
}

/// Full detection pass: proposals, stage-2 refinement, score filtering and
/// rotated suppression.
pub fn infer(params: &ModelParams, grid: &BevGrid, det: &DetectorConfig, exec: Exec) -> Vec<Detection> {
    let props = propose(params, grid, det, exec);
    let refined: Vec<Option<Detection>> = exec.map(&props, |p| {
        let f = featurize(grid, &p.bbox, &det.frh_features).ok()?;
        let (mut o, _) = params.frh.forward(&f, None).ok()?;
        params.frh.to_target_units(&mut o);
        let bbox = decode_frh(&p.bbox, &o.reg[..LOC_DIM], &o.reg[LOC_DIM..], det.ground_z);
        let mut loc_log_var = [0.0; LOC_DIM];
        loc_log_var.copy_from_slice(&o.log_var[..LOC_DIM]);
        let mut orient_log_var = [0.0; ORIENT_DIM];
        orient_log_var.copy_from_slice(&o.log_var[LOC_DIM..]);
        Some(Detection {
            bbox,
            score: softmax(&o.logits)[1],
            rpn_log_var: p.log_var,
            loc_log_var,
            orient_log_var,
        })
    });
    let dets: Vec<Detection> = refined
        .into_iter()
        .flatten()
        .filter(|d| d.score >= det.score_threshold && d.bbox.is_valid())
        .collect();
    let boxes: Vec<ScoredBox> = dets.iter().map(|d| d.scored()).collect();
    nms_indices_with(&boxes, det.final_nms_iou, det.max_detections, iou_bev_rotated)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}
