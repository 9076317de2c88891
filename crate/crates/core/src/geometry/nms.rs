use serde::{Deserialize, Serialize};

use super::{iou, BBox};

/// A scored detection. `score` is the fused ranking score used for NMS and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub cls_prob: f64,
    pub loc_conf: f64,
    pub score: f64,
}

impl Detection {
    /// Detection whose three probabilities all equal `score`.
    pub fn with_score(bbox: BBox, class_id: usize, score: f64) -> Self {
        Detection { bbox, class_id, cls_prob: score, loc_conf: score, score }
    }
}

/// Greedy per-class NMS.
///
/// Detections are visited by `ranking` descending (ties keep input order); a detection is
/// dropped when its IoU with an already kept detection of the same class exceeds
/// `iou_threshold`. The result is ordered by ranking descending.
pub fn nms<F>(dets: &[Detection], ranking: F, iou_threshold: f64) -> Vec<Detection>
where
    F: Fn(&Detection) -> f64,
{
    let keys: Vec<f64> = dets.iter().map(&ranking).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable: equal keys stay in index order
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let d = &dets[idx];
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].class_id == d.class_id && iou(&dets[k].bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
