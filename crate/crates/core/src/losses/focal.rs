use serde::{Deserialize, Serialize};

use super::{log_sigmoid, sigmoid, LossGrad, LOG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Weight of the positive class; negatives get `1 - alpha`.
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalConfig {
    /// Settings used for the boundary map.
    pub fn boundary() -> Self {
        FocalConfig { gamma: 0.5, alpha: 0.5 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma >= 0.0) {
            return Err(format!("focal gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("focal alpha must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }
}

/// Sigmoid focal loss summed over elements and divided by `normalizer`.
pub fn focal_loss(logits: &[f64], targets: &[bool], cfg: &FocalConfig, normalizer: f64) -> f64 {
    focal_loss_grad(logits, targets, cfg, normalizer).value
}

pub fn focal_loss_grad(logits: &[f64], targets: &[bool], cfg: &FocalConfig, normalizer: f64) -> LossGrad {
    assert_eq!(logits.len(), targets.len(), "focal_loss: logits and targets differ in length");
    let log_floor = LOG_FLOOR.ln();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(targets) {
        let (sign, alpha_t) = if t { (1.0, cfg.alpha) } else { (-1.0, 1.0 - cfg.alpha) };
        let p_t = sigmoid(sign * x);
        let q_t = sigmoid(-sign * x); // 1 - p_t without cancellation
        let raw_log = log_sigmoid(sign * x);
        let clamped = raw_log < log_floor;
        let log_p = if clamped { log_floor } else { raw_log };
        let modulator = q_t.powf(cfg.gamma);
        value += -alpha_t * modulator * log_p;
        // d/dx of -a (1-p_t)^g ln p_t, with dp_t/dx = sign * p_t (1 - p_t)
        let mut d = cfg.gamma * modulator * p_t * log_p;
        if !clamped {
            d -= modulator * q_t;
        }
        grad.push(alpha_t * sign * d / normalizer);
    }
    LossGrad { value: value / normalizer, grad }
}
