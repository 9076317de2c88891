use serde::{Deserialize, Serialize};

use super::{FocalConfig, LossGrad, LOG_FLOOR};

/// Smoothing term of the Dice variant.
pub const DICE_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BgsLossKind {
    #[default]
    Focal,
    Bce,
    Dice,
}

impl BgsLossKind {
    pub const ALL: [BgsLossKind; 3] = [BgsLossKind::Focal, BgsLossKind::Bce, BgsLossKind::Dice];

    pub fn name(self) -> &'static str {
        match self {
            BgsLossKind::Focal => "focal",
            BgsLossKind::Bce => "bce",
            BgsLossKind::Dice => "dice",
        }
    }
}

/// Boundary-map loss on probabilities `pred` against binary `target`.
///
/// The focal and BCE variants sum over every pixel and divide by the number of
/// boundary pixels; with no boundary pixels they return 0.
pub fn bgs_loss(pred: &[f64], target: &[bool], kind: BgsLossKind, cfg: &FocalConfig) -> f64 {
    bgs_loss_grad(pred, target, kind, cfg).value
}

/// Gradient is with respect to the probabilities in `pred`.
pub fn bgs_loss_grad(pred: &[f64], target: &[bool], kind: BgsLossKind, cfg: &FocalConfig) -> LossGrad {
    assert_eq!(pred.len(), target.len(), "bgs_loss: map sizes differ");
    match kind {
        BgsLossKind::Focal => pixel_focal(pred, target, cfg.gamma, Some(cfg.alpha)),
        BgsLossKind::Bce => pixel_focal(pred, target, 0.0, None),
        BgsLossKind::Dice => dice(pred, target),
    }
}

fn pixel_focal(pred: &[f64], target: &[bool], gamma: f64, alpha: Option<f64>) -> LossGrad {
    let n_pos = target.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return LossGrad { value: 0.0, grad: vec![0.0; pred.len()] };
    }
    let norm = n_pos as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let (p_t, sign) = if t { (p, 1.0) } else { (1.0 - p, -1.0) };
        let alpha_t = match alpha {
            Some(a) if t => a,
            Some(a) => 1.0 - a,
            None => 1.0,
        };
        let clamped = p_t < LOG_FLOOR;
        let log_p = p_t.max(LOG_FLOOR).ln();
        let q = 1.0 - p_t;
        let modulator = q.powf(gamma);
        value += -alpha_t * modulator * log_p;
        // d/dp_t of -(1 - p_t)^g ln p_t
        let mut d = if gamma > 0.0 && q > 0.0 { gamma * q.powf(gamma - 1.0) * log_p } else { 0.0 };
        if !clamped {
            d -= modulator / p_t;
        }
        grad.push(alpha_t * sign * d / norm);
    }
    LossGrad { value: value / norm, grad }
}

fn dice(pred: &[f64], target: &[bool]) -> LossGrad {
    let inter: f64 = pred.iter().zip(target).filter(|(_, &t)| t).map(|(p, _)| p).sum();
    let denom = pred.iter().sum::<f64>() + target.iter().filter(|&&t| t).count() as f64 + DICE_EPS;
    let numer = 2.0 * inter + DICE_EPS;
    let grad = target
        .iter()
        .map(|&t| -((if t { 2.0 } else { 0.0 }) * denom - numer) / (denom * denom))
        .collect();
    LossGrad { value: 1.0 - numer / denom, grad }
}
