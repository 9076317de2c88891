//! Training objectives with analytic gradients.
//!
//! Every loss here works on plain `f64` slices and returns its gradient alongside the
//! value, so the detector can run its network in any tensor framework and inject these
//! gradients back. Gradients are checked against central finite differences in tests.

mod assign;
mod bgs;
mod focal;
mod opcl;
mod regression;
mod total;

pub use assign::{assign_targets, AnchorLabel, AssignerConfig, AssignmentResult};
pub use bgs::{bgs_loss, bgs_loss_grad, BgsLossKind, DICE_EPS};
pub use focal::{focal_loss, focal_loss_grad, FocalConfig};
pub use opcl::{
    fuse_score, opcl_gap_loss, opcl_gap_loss_through_decode, AttachHead, FusedScore, GapLoss, OpclConfig,
};
pub use regression::{
    decode_with_jacobian, giou_loss, giou_loss_grad, giou_with_grad, iou_with_grad, smooth_l1, smooth_l1_loss,
    smooth_l1_loss_grad,
};
pub use total::{
    total_loss, BoundaryInput, HeadGrads, HeadPredictions, ImageLossInput, LocLossKind, LossBreakdown, LossConfig,
    LossWeights, TotalLoss,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// Value of a scalar loss and its gradient with respect to the primary input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(sigmoid(x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Central difference gradient of `f` at `x`.
    pub fn numeric_grad(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + step;
                let up = f(&probe);
                probe[i] = orig - step;
                let down = f(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    /// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(b));
        if scale == 0.0 {
            0.0
        } else {
            norm(&diff) / scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_logistic_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
