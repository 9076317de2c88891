use serde::{Deserialize, Serialize};

use crate::geometry::{encode_deltas, BBox, Deltas, DEFAULT_MAX_LOG_RATIO};

use super::regression::box_grad_to_deltas;
use super::{
    bgs_loss_grad, decode_with_jacobian, focal_loss_grad, giou_loss_grad, opcl_gap_loss_through_decode,
    smooth_l1_loss_grad, AnchorLabel, AssignmentResult, BgsLossKind, FocalConfig, LossError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocLossKind {
    #[default]
    Giou,
    SmoothL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cls: f64,
    pub loc: f64,
    pub gap: f64,
    pub bgs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 1.0, loc: 5.0, gap: 1.0, bgs: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub loc_loss: LocLossKind,
    pub smooth_l1_beta: f64,
    pub cls_focal: FocalConfig,
    pub bgs_kind: BgsLossKind,
    pub bgs_focal: FocalConfig,
    pub iou_grad: bool,
    pub max_log_ratio: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            loc_loss: LocLossKind::Giou,
            smooth_l1_beta: 1.0 / 9.0,
            cls_focal: FocalConfig::default(),
            bgs_kind: BgsLossKind::Focal,
            bgs_focal: FocalConfig::boundary(),
            iou_grad: true,
            max_log_ratio: DEFAULT_MAX_LOG_RATIO,
        }
    }
}

/// Raw head outputs for one image, flattened in anchor order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadPredictions {
    /// `num_anchors * num_classes` logits, class-minor.
    pub cls_logits: Vec<f64>,
    pub deltas: Vec<Deltas>,
    pub gap_logits: Vec<f64>,
}

pub type HeadGrads = HeadPredictions;

pub struct ImageLossInput<'a> {
    pub anchors: &'a [BBox],
    pub gt_boxes: &'a [BBox],
    pub assignment: &'a AssignmentResult,
    pub preds: &'a HeadPredictions,
}

/// Boundary probabilities and targets for the whole batch.
pub struct BoundaryInput<'a> {
    pub probs: &'a [f64],
    pub target: &'a [bool],
}

/// Unweighted value of each term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub loc: f64,
    pub gap: f64,
    pub bgs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub breakdown: LossBreakdown,
    /// Gradients of `total`, one entry per image.
    pub grads: Vec<HeadGrads>,
    /// Gradient of `total` on the boundary probabilities (empty without boundary input).
    pub boundary_grad: Vec<f64>,
}

struct PositiveRef {
    image: usize,
    anchor: usize,
    class: usize,
    gt: usize,
}

fn check(term: &'static str, value: f64) -> Result<f64, LossError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LossError::NonFinite { term, value })
    }
}

/// `cls + λ_loc loc + λ_gap gap + λ_bgs bgs` over a batch, with all positives of the
/// batch sharing one normalizer.
pub fn total_loss(
    images: &[ImageLossInput<'_>],
    boundary: Option<BoundaryInput<'_>>,
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<TotalLoss, LossError> {
    let w = cfg.weights;
    let mut grads = Vec::with_capacity(images.len());
    let mut positives = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let n = img.anchors.len();
        let shape = |what, expected, got| if expected == got { Ok(()) } else { Err(LossError::Shape { what, expected, got }) };
        shape("cls_logits", n * num_classes, img.preds.cls_logits.len())?;
        shape("deltas", n, img.preds.deltas.len())?;
        shape("gap_logits", n, img.preds.gap_logits.len())?;
        shape("assignment", n, img.assignment.labels.len())?;
        grads.push(HeadGrads {
            cls_logits: vec![0.0; n * num_classes],
            deltas: vec![[0.0; 4]; n],
            gap_logits: vec![0.0; n],
        });
        positives.extend(img.assignment.positives().map(|(anchor, class, gt)| PositiveRef { image: i, anchor, class, gt }));
    }
    let normalizer = positives.len().max(1) as f64;

    // classification over every non-ignored anchor
    let mut cls_value = 0.0;
    for (img, g) in images.iter().zip(grads.iter_mut()) {
        let mut logits = Vec::new();
        let mut targets = Vec::new();
        let mut index = Vec::new();
        for (a, label) in img.assignment.labels.iter().enumerate() {
            let positive_class = match *label {
                AnchorLabel::Ignore => continue,
                AnchorLabel::Negative => None,
                AnchorLabel::Positive { class, .. } => Some(class),
            };
            for k in 0..num_classes {
                let idx = a * num_classes + k;
                logits.push(img.preds.cls_logits[idx]);
                targets.push(positive_class == Some(k));
                index.push(idx);
            }
        }
        let lg = focal_loss_grad(&logits, &targets, &cfg.cls_focal, normalizer);
        cls_value += lg.value;
        for (idx, d) in index.into_iter().zip(lg.grad) {
            g.cls_logits[idx] += w.cls * d;
        }
    }
    let cls_value = check("cls", cls_value)?;

    // localization
    let loc_value = match cfg.loc_loss {
        LocLossKind::Giou => {
            let mut pred = Vec::with_capacity(positives.len());
            let mut jacs = Vec::with_capacity(positives.len());
            let mut target = Vec::with_capacity(positives.len());
            for p in &positives {
                let img = &images[p.image];
                let (b, jac) = decode_with_jacobian(&img.anchors[p.anchor], &img.preds.deltas[p.anchor], cfg.max_log_ratio);
                pred.push(b);
                jacs.push(jac);
                target.push(img.gt_boxes[p.gt]);
            }
            let lg = giou_loss_grad(&pred, &target);
            for (k, p) in positives.iter().enumerate() {
                let gb = [lg.grad[4 * k], lg.grad[4 * k + 1], lg.grad[4 * k + 2], lg.grad[4 * k + 3]];
                let dd = box_grad_to_deltas(&gb, &jacs[k]);
                let slot = &mut grads[p.image].deltas[p.anchor];
                for c in 0..4 {
                    slot[c] += w.loc * dd[c];
                }
            }
            lg.value
        }
        LocLossKind::SmoothL1 => {
            let mut pred = Vec::with_capacity(positives.len());
            let mut target = Vec::with_capacity(positives.len());
            for p in &positives {
                let img = &images[p.image];
                pred.push(img.preds.deltas[p.anchor]);
                let t = encode_deltas(&img.anchors[p.anchor], &img.gt_boxes[p.gt])
                    .map_err(|e| LossError::Config(format!("regression target: {e}")))?;
                target.push(t);
            }
            let lg = smooth_l1_loss_grad(&pred, &target, cfg.smooth_l1_beta);
            for (k, p) in positives.iter().enumerate() {
                let slot = &mut grads[p.image].deltas[p.anchor];
                for c in 0..4 {
                    slot[c] += w.loc * lg.grad[4 * k + c];
                }
            }
            lg.value
        }
    };
    let loc_value = check("loc", loc_value)?;

    // gap between classification and localization confidence
    let mut cls_at = Vec::with_capacity(positives.len());
    let mut gap_at = Vec::with_capacity(positives.len());
    let mut anchors_at = Vec::with_capacity(positives.len());
    let mut deltas_at = Vec::with_capacity(positives.len());
    let mut gts_at = Vec::with_capacity(positives.len());
    for p in &positives {
        let img = &images[p.image];
        cls_at.push(img.preds.cls_logits[p.anchor * num_classes + p.class]);
        gap_at.push(img.preds.gap_logits[p.anchor]);
        anchors_at.push(img.anchors[p.anchor]);
        deltas_at.push(img.preds.deltas[p.anchor]);
        gts_at.push(img.gt_boxes[p.gt]);
    }
    let (gap, d_deltas) = opcl_gap_loss_through_decode(
        &cls_at,
        &gap_at,
        &anchors_at,
        &deltas_at,
        &gts_at,
        cfg.iou_grad,
        cfg.max_log_ratio,
    );
    for (k, p) in positives.iter().enumerate() {
        let g = &mut grads[p.image];
        g.cls_logits[p.anchor * num_classes + p.class] += w.gap * gap.d_cls[k];
        g.gap_logits[p.anchor] += w.gap * gap.d_gap[k];
        for c in 0..4 {
            g.deltas[p.anchor][c] += w.gap * d_deltas[k][c];
        }
    }
    let gap_value = check("gap", gap.value)?;

    let (bgs_value, boundary_grad) = match boundary {
        Some(b) => {
            if b.probs.len() != b.target.len() {
                return Err(LossError::Shape { what: "boundary map", expected: b.target.len(), got: b.probs.len() });
            }
            let lg = bgs_loss_grad(b.probs, b.target, cfg.bgs_kind, &cfg.bgs_focal);
            (lg.value, lg.grad.into_iter().map(|d| w.bgs * d).collect())
        }
        None => (0.0, Vec::new()),
    };
    let bgs_value = check("bgs", bgs_value)?;

    let total = w.cls * cls_value + w.loc * loc_value + w.gap * gap_value + w.bgs * bgs_value;
    Ok(TotalLoss {
        total: check("total", total)?,
        breakdown: LossBreakdown { cls: cls_value, loc: loc_value, gap: gap_value, bgs: bgs_value },
        grads,
        boundary_grad,
    })
}
