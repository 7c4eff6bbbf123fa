//! Greedy detection matching and interpolated average precision.

use crate::boxgeom::{score_order, Box3D, ScoredBox};
use crate::error::{Error, Result};
use crate::pcio::Difficulty;

/// Recall sampling used by [`average_precision`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Recall levels `0, 0.1, ..., 1`.
    #[default]
    ElevenPoint,
    /// Recall levels `1/40, 2/40, ..., 1`.
    FortyPoint,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    /// `(detection index, gt index, iou)` in processing order.
    pub matches: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    /// Detection indices in descending score order.
    pub order: Vec<usize>,
}

/// Matches detections to ground truths. Detections are visited by descending
/// score (ties by index); each takes the unmatched gt of highest overlap if
/// that overlap reaches `threshold`.
pub fn match_detections<F>(dets: &[ScoredBox], gts: &[Box3D], iou_fn: F, threshold: f64) -> MatchOutcome
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let order = score_order(dets.iter().map(|d| d.score));
    let mut taken = vec![false; gts.len()];
    let mut out = MatchOutcome {
        order: order.clone(),
        ..Default::default()
    };
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let iou = iou_fn(&dets[i].bbox, g);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= threshold => {
                taken[j] = true;
                out.matches.push((i, j, iou));
            }
            _ => out.false_positives.push(i),
        }
    }
    out.false_negatives = (0..gts.len()).filter(|&j| !taken[j]).collect();
    out
}

/// `(recall, precision)` after each ranked detection.
pub fn pr_curve(ranked_tp: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    ranked_tp
        .iter()
        .enumerate()
        .map(|(k, &is_tp)| {
            tp += is_tp as usize;
            (tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Interpolated AP over a ranked list of true/false positive flags: the mean,
/// over the recall levels, of the best precision at recall at least that level.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize, interp: Interpolation) -> Result<f64> {
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let (levels, start) = match interp {
        Interpolation::ElevenPoint => (10usize, 0usize),
        Interpolation::FortyPoint => (40, 1),
    };
    // best precision among points reaching each recall level; recall >= i/levels
    // is tested in integers as levels * tp >= i * num_gt
    let mut best = vec![0.0f64; levels + 1];
    let mut tp = 0usize;
    for (k, &is_tp) in ranked_tp.iter().enumerate() {
        tp += is_tp as usize;
        let precision = tp as f64 / (k + 1) as f64;
        for (i, b) in best.iter_mut().enumerate() {
            if levels * tp >= i * num_gt && precision > *b {
                *b = precision;
            }
        }
    }
    let used = &best[start..];
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

/// One scene's inputs to [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct SceneEval<'a> {
    pub dets: &'a [ScoredBox],
    pub gts: &'a [Box3D],
    pub difficulties: &'a [Difficulty],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub ap: f64,
    pub num_gt: usize,
    /// `(recall, precision)` along the score sweep.
    pub curve: Vec<(f64, f64)>,
    /// `(scene, detection, gt, iou)` for every true positive.
    pub matches: Vec<(usize, usize, usize, f64)>,
}

/// AP over several scenes, optionally restricted to one difficulty. Detections
/// matched to ground truths of another difficulty are dropped from the sweep.
/// Returns `NoGroundTruth` when the subset has no objects.
pub fn evaluate<F>(
    scenes: &[SceneEval<'_>],
    iou_fn: F,
    threshold: f64,
    only: Option<Difficulty>,
    interp: Interpolation,
) -> Result<EvalResult>
where
    F: Fn(&Box3D, &Box3D) -> f64 + Copy,
{
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut matches = Vec::new();
    let mut num_gt = 0;
    for (s, scene) in scenes.iter().enumerate() {
        let keep = |j: usize| only.map_or(true, |d| scene.difficulties[j] == d);
        num_gt += (0..scene.gts.len()).filter(|&j| keep(j)).count();
        let m = match_detections(scene.dets, scene.gts, iou_fn, threshold);
        for &(i, j, iou) in &m.matches {
            if keep(j) {
                ranked.push((scene.dets[i].score, s, i, true));
                matches.push((s, i, j, iou));
            }
        }
        for &i in &m.false_positives {
            ranked.push((scene.dets[i].score, s, i, false));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
    let ap = average_precision(&flags, num_gt, interp)?;
    Ok(EvalResult {
        ap,
        num_gt,
        curve: pr_curve(&flags, num_gt),
        matches,
    })
}

/// Overall AP followed by per-difficulty AP (`None` where a subset is empty).
pub fn evaluate_table<F>(
    scenes: &[SceneEval<'_>],
    iou_fn: F,
    threshold: f64,
    interp: Interpolation,
) -> Result<(EvalResult, Vec<(Difficulty, Option<f64>)>)>
where
    F: Fn(&Box3D, &Box3D) -> f64 + Copy,
{
    let overall = evaluate(scenes, iou_fn, threshold, None, interp)?;
    let per = Difficulty::ALL
        .iter()
        .map(|&d| {
            let ap = evaluate(scenes, iou_fn, threshold, Some(d), interp).ok().map(|r| r.ap);
            (d, ap)
        })
        .collect();
    Ok((overall, per))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxgeom::iou_bev_rotated;

    fn car(cx: f64) -> Box3D {
        Box3D::new(cx, 0.0, 0.8, 4.0, 1.8, 1.6, 0.2)
    }

    #[test]
    fn one_exact_detection() {
        let g = [car(10.0)];
        let d = [ScoredBox { bbox: g[0], score: 0.9 }];
        let m = match_detections(&d, &g, iou_bev_rotated, 0.7);
        assert_eq!(m.matches.len(), 1);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());
    }

    #[test]
    fn duplicate_detections_tie_by_index() {
        let g = [car(10.0)];
        let d = [
            ScoredBox { bbox: g[0], score: 0.5 },
            ScoredBox { bbox: g[0], score: 0.5 },
        ];
        let m = match_detections(&d, &g, iou_bev_rotated, 0.7);
        assert_eq!(m.matches[0].0, 0);
        assert_eq!(m.false_positives, vec![1]);
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, true], 2, Interpolation::ElevenPoint).unwrap(), 1.0);
        assert_eq!(average_precision(&[], 3, Interpolation::ElevenPoint).unwrap(), 0.0);
        assert_eq!(average_precision(&[true, false], 1, Interpolation::ElevenPoint).unwrap(), 1.0);
        assert!(matches!(
            average_precision(&[true], 0, Interpolation::ElevenPoint),
            Err(Error::NoGroundTruth)
        ));
        // FP then TP over one gt: precision 0.5 at every recall level
        assert_eq!(average_precision(&[false, true], 1, Interpolation::ElevenPoint).unwrap(), 0.5);
        assert_eq!(average_precision(&[false, true], 1, Interpolation::FortyPoint).unwrap(), 0.5);
    }

    #[test]
    fn difficulty_subset_ignores_other_objects() {
        let gts = [car(10.0), car(50.0)];
        let diffs = [Difficulty::Easy, Difficulty::Hard];
        let dets = [
            ScoredBox { bbox: gts[0], score: 0.9 },
            ScoredBox { bbox: gts[1], score: 0.8 },
        ];
        let scenes = [SceneEval {
            dets: &dets,
            gts: &gts,
            difficulties: &diffs,
        }];
        let r = evaluate(&scenes, iou_bev_rotated, 0.7, Some(Difficulty::Hard), Interpolation::ElevenPoint).unwrap();
        assert_eq!(r.num_gt, 1);
        assert_eq!(r.ap, 1.0);
        let (all, per) = evaluate_table(&scenes, iou_bev_rotated, 0.7, Interpolation::ElevenPoint).unwrap();
        assert_eq!(all.ap, 1.0);
        assert_eq!(per[1], (Difficulty::Moderate, None));
    }
}
