use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Deltas};

use super::regression::{box_grad_to_deltas, decode_with_jacobian, iou_with_grad};
use super::{log_sigmoid, sigmoid, softplus};

/// Which tower's final feature map feeds the gap head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttachHead {
    #[default]
    Classification,
    Regression,
    /// Both towers concatenated, then one 3x3 convolution.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpclConfig {
    pub attach_head: AttachHead,
    /// Exponent on the localization confidence when fusing scores, in `[0, 1]`.
    pub alpha: f64,
    /// Let the gap loss differentiate through the IoU target into the box regressor.
    pub iou_grad: bool,
}

impl Default for OpclConfig {
    fn default() -> Self {
        OpclConfig { attach_head: AttachHead::Classification, alpha: 0.7, iou_grad: true }
    }
}

impl OpclConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("opcl alpha must lie in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

/// Gap loss value and its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GapLoss {
    pub value: f64,
    pub d_cls: Vec<f64>,
    pub d_gap: Vec<f64>,
    /// Zero when the IoU targets are detached.
    pub d_iou: Vec<f64>,
}

/// Binary cross-entropy between `sigmoid(cls + gap)` and the IoU of each positive,
/// averaged over positives.
pub fn opcl_gap_loss(cls_logits: &[f64], gap_logits: &[f64], ious: &[f64], iou_grad: bool) -> GapLoss {
    assert!(
        cls_logits.len() == gap_logits.len() && gap_logits.len() == ious.len(),
        "opcl_gap_loss: input lengths differ"
    );
    let n = cls_logits.len();
    if n == 0 {
        return GapLoss { value: 0.0, d_cls: Vec::new(), d_gap: Vec::new(), d_iou: Vec::new() };
    }
    let norm = n as f64;
    let mut value = 0.0;
    let mut d_loc = Vec::with_capacity(n);
    let mut d_iou = Vec::with_capacity(n);
    for ((&c, &g), &t) in cls_logits.iter().zip(gap_logits).zip(ious) {
        let z = c + g;
        value += t * softplus(-z) + (1.0 - t) * softplus(z);
        d_loc.push((sigmoid(z) - t) / norm);
        d_iou.push(if iou_grad { -z / norm } else { 0.0 });
    }
    GapLoss { value: value / norm, d_cls: d_loc.clone(), d_gap: d_loc, d_iou }
}

/// Gap loss where each IoU is measured between the decoded prediction and its matched
/// ground truth. Returns the loss and its gradient on the regression deltas, which is
/// exactly zero when `iou_grad` is off.
pub fn opcl_gap_loss_through_decode(
    cls_logits: &[f64],
    gap_logits: &[f64],
    anchors: &[BBox],
    deltas: &[Deltas],
    targets: &[BBox],
    iou_grad: bool,
    max_log_ratio: f64,
) -> (GapLoss, Vec<Deltas>) {
    let mut ious = Vec::with_capacity(anchors.len());
    let mut chains = Vec::with_capacity(anchors.len());
    for ((anchor, d), target) in anchors.iter().zip(deltas).zip(targets) {
        let (pred, jac) = decode_with_jacobian(anchor, d, max_log_ratio);
        let (v, g) = iou_with_grad(&pred, target);
        ious.push(v);
        chains.push(box_grad_to_deltas(&g, &jac));
    }
    let loss = opcl_gap_loss(cls_logits, gap_logits, &ious, iou_grad);
    let d_deltas = chains
        .iter()
        .zip(&loss.d_iou)
        .map(|(chain, &di)| std::array::from_fn(|c| if iou_grad { di * chain[c] } else { 0.0 }))
        .collect();
    (loss, d_deltas)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedScore {
    pub p_cls: f64,
    pub p_loc: f64,
    pub s_det: f64,
}

/// `S = P_loc^alpha * P_cls^(1 - alpha)` with `P_cls = sigmoid(cls)` and
/// `P_loc = sigmoid(cls + gap)`.
///
/// Evaluated as `P_cls * exp(alpha * (ln P_loc - ln P_cls))`, so `alpha = 0` and
/// `gap = 0` both return `P_cls` bit-exactly.
pub fn fuse_score(cls_logit: f64, gap_logit: f64, alpha: f64) -> FusedScore {
    let p_cls = sigmoid(cls_logit);
    let loc_logit = cls_logit + gap_logit;
    let p_loc = sigmoid(loc_logit);
    let s_det = if alpha == 1.0 {
        p_loc
    } else {
        let log_ratio = log_sigmoid(loc_logit) - log_sigmoid(cls_logit);
        (p_cls * (alpha * log_ratio).exp()).min(1.0)
    };
    FusedScore { p_cls, p_loc, s_det }
}
