//! Greedy non-maximum suppression over cluster masks.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scene::Cluster;
use crate::scoring::intersection_len;

/// Order in which clusters are considered: higher score first, then original
/// coordinates before shifted, then lower smallest member, then input position.
pub fn nms_order(clusters: &[Cluster], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(clusters[a].source().cmp(&clusters[b].source()))
            .then(clusters[a].min_index().cmp(&clusters[b].min_index()))
            .then(a.cmp(&b))
    });
    order
}

fn mask_iou(a: &Cluster, b: &Cluster) -> f64 {
    let inter = intersection_len(a.point_idx(), b.point_idx());
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Indices of the kept clusters, in keep order. A cluster is suppressed when its
/// IoU with any already-kept cluster is `>= iou_thresh`.
pub fn nms(clusters: &[Cluster], scores: &[f64], iou_thresh: f64) -> Result<Vec<usize>> {
    if clusters.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "scores",
            got: scores.len(),
            expected: clusters.len(),
        });
    }
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "NMS IoU threshold {iou_thresh} outside (0, 1]"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("cluster scores"));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in nms_order(clusters, scores) {
        let c = &clusters[i];
        if kept.iter().all(|&k| mask_iou(c, &clusters[k]) < iou_thresh) {
            kept.push(i);
        }
    }
    Ok(kept)
}
