use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignerConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// A ground truth rescues its best anchor only when that IoU exceeds this.
    pub min_rescue_iou: f64,
}

impl Default for AssignerConfig {
    fn default() -> Self {
        AssignerConfig { pos_iou: 0.5, neg_iou: 0.4, min_rescue_iou: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive { class: usize, gt_index: usize },
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub labels: Vec<AnchorLabel>,
    pub num_positive: usize,
}

impl AssignmentResult {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match *l {
            AnchorLabel::Positive { class, gt_index } => Some((i, class, gt_index)),
            _ => None,
        })
    }
}

/// Max-IoU anchor assignment.
///
/// An anchor is positive when its best IoU is at least `pos_iou`, negative below
/// `neg_iou`, ignored in between. Each ground truth then also claims every anchor that
/// attains its own best IoU, so no ground truth is left without a positive.
pub fn assign_targets(anchors: &[BBox], gts: &[(BBox, usize)], cfg: &AssignerConfig) -> AssignmentResult {
    if gts.is_empty() {
        return AssignmentResult { labels: vec![AnchorLabel::Negative; anchors.len()], num_positive: 0 };
    }
    let mut gt_best = vec![0.0f64; gts.len()];
    let mut anchor_best = Vec::with_capacity(anchors.len());
    let mut ious = Vec::with_capacity(anchors.len() * gts.len());
    for anchor in anchors {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (g, (gt, _)) in gts.iter().enumerate() {
            let v = iou(anchor, gt);
            ious.push(v);
            if v > best.0 {
                best = (v, g);
            }
            gt_best[g] = gt_best[g].max(v);
        }
        anchor_best.push(best);
    }

    let mut labels: Vec<AnchorLabel> = anchor_best
        .iter()
        .map(|&(v, g)| {
            if v >= cfg.pos_iou {
                AnchorLabel::Positive { class: gts[g].1, gt_index: g }
            } else if v < cfg.neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();

    for (g, &best) in gt_best.iter().enumerate() {
        if best <= cfg.min_rescue_iou {
            continue;
        }
        for (a, label) in labels.iter_mut().enumerate() {
            if ious[a * gts.len() + g] == best {
                *label = AnchorLabel::Positive { class: gts[g].1, gt_index: g };
            }
        }
    }
    let num_positive = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive { .. })).count();
    AssignmentResult { labels, num_positive }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::encode_deltas;

    #[test]
    fn exact_anchor_is_positive_with_zero_deltas() {
        let gt = BBox::new(8.0, 8.0, 40.0, 40.0);
        let anchors = [gt, BBox::new(100.0, 100.0, 120.0, 120.0)];
        let r = assign_targets(&anchors, &[(gt, 2)], &AssignerConfig::default());
        assert_eq!(r.labels[0], AnchorLabel::Positive { class: 2, gt_index: 0 });
        assert_eq!(r.labels[1], AnchorLabel::Negative);
        assert_eq!(r.num_positive, 1);
        assert_eq!(encode_deltas(&anchors[0], &gt).unwrap(), [0.0; 4]);
    }

    #[test]
    fn thresholds() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        // IoU 0.3: overlap 30 of union 100 (widths chosen so union stays 100)
        let low = BBox::new(0.0, 0.0, 3.0, 10.0);
        // IoU 0.45
        let mid = BBox::new(0.0, 0.0, 4.5, 10.0);
        let exact = gt;
        let r = assign_targets(&[low, mid, exact], &[(gt, 0)], &AssignerConfig::default());
        assert_eq!(r.labels[0], AnchorLabel::Negative);
        assert_eq!(r.labels[1], AnchorLabel::Ignore);
        assert!(matches!(r.labels[2], AnchorLabel::Positive { .. }));
    }

    #[test]
    fn best_anchor_rescue() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let anchors = [BBox::new(0.0, 0.0, 3.0, 10.0), BBox::new(0.0, 0.0, 2.0, 10.0)];
        let r = assign_targets(&anchors, &[(gt, 0)], &AssignerConfig::default());
        assert_eq!(r.labels[0], AnchorLabel::Positive { class: 0, gt_index: 0 });
        assert_eq!(r.labels[1], AnchorLabel::Negative);
    }

    #[test]
    fn no_ground_truth() {
        let anchors = [BBox::new(0.0, 0.0, 3.0, 10.0); 4];
        let r = assign_targets(&anchors, &[], &AssignerConfig::default());
        assert_eq!(r.num_positive, 0);
        assert!(r.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }
}
