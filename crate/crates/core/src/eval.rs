//! Instance-segmentation metrics: per-class AP over IoU thresholds, AP50,
//! AP25, and precision/recall at IoU 0.5 after a confidence filter.
//!
//! Matching is greedy per class: predictions are visited by descending score
//! (ties: larger mask, then input order) and each takes the unmatched
//! ground-truth instance it overlaps most, if that IoU reaches the threshold.
//! AP uses all-point interpolation.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{GroundTruthInstance, InstancePrediction, Scene};
use crate::scoring::intersection_len;

/// Thresholds 0.50, 0.55, …, 0.95 averaged into the headline AP.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

fn mask_iou(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection_len(a, b);
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Indices of `preds` with class `class_id`, in matching order.
fn class_order(preds: &[InstancePrediction], class_id: i32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].class_id() == class_id)
        .collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score()
            .partial_cmp(&preds[a].score())
            .unwrap_or(Ordering::Equal)
            .then(preds[b].point_idx().len().cmp(&preds[a].point_idx().len()))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching of one class. Returns `(prediction index, matched gt index)` in
/// matching order, and the number of ground-truth instances of the class.
pub fn match_class(
    preds: &[InstancePrediction],
    gt: &[GroundTruthInstance],
    class_id: i32,
    iou_thresh: f64,
) -> (Vec<(usize, Option<usize>)>, usize) {
    let gt_idx: Vec<usize> = (0..gt.len())
        .filter(|&g| gt[g].class_id == class_id)
        .collect();
    let mut taken = vec![false; gt_idx.len()];
    let mut out = Vec::new();
    for p in class_order(preds, class_id) {
        let mut best: Option<(usize, f64)> = None;
        for (slot, &g) in gt_idx.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let v = mask_iou(preds[p].point_idx(), &gt[g].point_idx);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((slot, v));
            }
        }
        match best {
            Some((slot, v)) if v >= iou_thresh => {
                taken[slot] = true;
                out.push((p, Some(gt_idx[slot])));
            }
            _ => out.push((p, None)),
        }
    }
    (out, gt_idx.len())
}

/// Cumulative precision/recall after each prediction of the class; empty when
/// the class has no ground truth or no predictions.
pub fn match_and_pr(
    preds: &[InstancePrediction],
    gt: &[GroundTruthInstance],
    class_id: i32,
    iou_thresh: f64,
) -> Vec<PrPoint> {
    let (matches, n_gt) = match_class(preds, gt, class_id, iou_thresh);
    if n_gt == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    matches
        .iter()
        .enumerate()
        .map(|(k, (_, m))| {
            tp += usize::from(m.is_some());
            PrPoint {
                precision: tp as f64 / (k + 1) as f64,
                recall: tp as f64 / n_gt as f64,
            }
        })
        .collect()
}

/// `Σ (R_k − R_{k−1}) · max_{j ≥ k} P_j`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        ap += (p.recall - prev) * env;
        prev = p.recall;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Thresholds averaged into the headline AP.
    pub thresholds: Vec<f64>,
    /// Predictions below this score are ignored for precision/recall.
    pub score_filter: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: standard_thresholds(),
            score_filter: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub class_id: i32,
    pub n_gt: usize,
    /// AP at each of `EvalConfig::thresholds`.
    pub ap_at: Vec<f64>,
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub precision50: f64,
    pub recall50: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub classes: Vec<ClassResult>,
    pub map: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub mprec50: f64,
    pub mrec50: f64,
    /// For every prediction, the ground-truth instance it matched at IoU 0.5.
    pub matches: Vec<Option<usize>>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluates predictions against explicit ground-truth instances.
pub fn evaluate_instances(
    preds: &[InstancePrediction],
    gt: &[GroundTruthInstance],
    config: &EvalConfig,
) -> Result<EvalResult> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth instances"));
    }
    if config.thresholds.is_empty() {
        return Err(Error::InvalidArgument("no IoU thresholds".into()));
    }
    if !(0.0..=1.0).contains(&config.score_filter) {
        return Err(Error::InvalidArgument(format!(
            "score filter {} outside [0, 1]",
            config.score_filter
        )));
    }
    let mut classes: Vec<i32> = gt.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let filtered: Vec<InstancePrediction> = preds
        .iter()
        .filter(|p| p.score() >= config.score_filter)
        .cloned()
        .collect();

    let results: Vec<ClassResult> = classes
        .par_iter()
        .map(|&c| {
            let ap_for = |t: f64| average_precision(&match_and_pr(preds, gt, c, t));
            let ap_at: Vec<f64> = config.thresholds.iter().map(|&t| ap_for(t)).collect();
            let (m, n_gt) = match_class(&filtered, gt, c, 0.5);
            let tp = m.iter().filter(|(_, g)| g.is_some()).count();
            ClassResult {
                class_id: c,
                n_gt,
                ap: mean(ap_at.iter().copied()),
                ap_at,
                ap50: ap_for(0.5),
                ap25: ap_for(0.25),
                precision50: if m.is_empty() {
                    0.0
                } else {
                    tp as f64 / m.len() as f64
                },
                recall50: tp as f64 / n_gt as f64,
            }
        })
        .collect();

    let mut matches = vec![None; preds.len()];
    let mut pred_classes: Vec<i32> = preds.iter().map(|p| p.class_id()).collect();
    pred_classes.sort_unstable();
    pred_classes.dedup();
    for c in pred_classes {
        for (p, g) in match_class(preds, gt, c, 0.5).0 {
            matches[p] = g;
        }
    }

    Ok(EvalResult {
        map: mean(results.iter().map(|r| r.ap)),
        ap50: mean(results.iter().map(|r| r.ap50)),
        ap25: mean(results.iter().map(|r| r.ap25)),
        mprec50: mean(results.iter().map(|r| r.precision50)),
        mrec50: mean(results.iter().map(|r| r.recall50)),
        classes: results,
        matches,
    })
}

/// Evaluates predictions against the instances recorded in `gt_scene`.
pub fn evaluate(
    preds: &[InstancePrediction],
    gt_scene: &Scene,
    config: &EvalConfig,
) -> Result<EvalResult> {
    if gt_scene.n_instances() == 0 {
        return Err(Error::Empty("scene has no instances"));
    }
    if let Some(p) = preds
        .iter()
        .flat_map(|p| p.point_idx())
        .find(|&&i| i as usize >= gt_scene.n_points())
    {
        return Err(Error::IndexOutOfRange {
            index: *p as usize,
            len: gt_scene.n_points(),
        });
    }
    evaluate_instances(preds, &gt_scene.gt_instances(), config)
}
