use serde::{Deserialize, Serialize};

use scd_core::geometry::AnchorConfig;
use scd_core::losses::{AssignerConfig, BgsLossKind, FocalConfig, LocLossKind, LossConfig, LossWeights, OpclConfig};

use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BgsConfig {
    pub enabled: bool,
    /// Band width around polygon edges, in input pixels.
    pub thickness: u32,
    pub loss: BgsLossKind,
    pub focal: FocalConfig,
}

impl Default for BgsConfig {
    fn default() -> Self {
        BgsConfig { enabled: true, thickness: 40, loss: BgsLossKind::Focal, focal: FocalConfig::boundary() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output widths of the four backbone stages (strides 4, 8, 16, 32).
    pub backbone_channels: Vec<usize>,
    /// Pyramid and tower width `C`.
    pub channels: usize,
    pub tower_depth: usize,
    pub num_classes: usize,
    /// Group normalization after every hidden convolution; 0 disables it.
    pub norm_groups: usize,
    pub anchors: AnchorConfig,
    /// Builds the gap head; without it the model is a plain detector.
    pub gap_head: bool,
    pub opcl: OpclConfig,
    pub bgs: BgsConfig,
    /// Foreground prior used for the classification bias.
    pub prior_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_channels: vec![16, 32, 64, 128],
            channels: 32,
            tower_depth: 4,
            num_classes: 4,
            norm_groups: 8,
            anchors: AnchorConfig::default(),
            gap_head: true,
            opcl: OpclConfig::default(),
            bgs: BgsConfig::default(),
            prior_prob: 0.01,
        }
    }
}

/// Levels the pyramid produces; the anchor strides must match them exactly.
pub const PYRAMID_STRIDES: [usize; 5] = [8, 16, 32, 64, 128];

impl ModelConfig {
    pub fn anchors_per_location(&self) -> usize {
        self.anchors.anchors_per_location()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.backbone_channels.len() != 4 || self.backbone_channels.contains(&0) {
            return fail(format!("backbone_channels needs four positive widths, got {:?}", self.backbone_channels));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.tower_depth < 1 {
            return fail("tower_depth must be at least 1".into());
        }
        if self.num_classes < 1 {
            return fail("num_classes must be at least 1".into());
        }
        if self.norm_groups > 0 {
            let widths = self.backbone_channels.iter().chain(std::iter::once(&self.channels));
            if let Some(c) = widths.into_iter().find(|&&c| c % self.norm_groups != 0) {
                return fail(format!("width {c} is not divisible by norm_groups {}", self.norm_groups));
            }
        }
        if self.anchors.strides != PYRAMID_STRIDES {
            return fail(format!("anchor strides must be {PYRAMID_STRIDES:?}, got {:?}", self.anchors.strides));
        }
        if self.anchors.anchors_per_location() == 0 {
            return fail("anchor scales and ratios must be non-empty".into());
        }
        self.opcl.validate().map_err(ModelError::Config)?;
        if self.bgs.enabled && (self.bgs.thickness as usize) < PYRAMID_STRIDES[0] {
            return fail(format!("bgs thickness {} is below the P3 stride {}", self.bgs.thickness, PYRAMID_STRIDES[0]));
        }
        self.bgs.focal.validate().map_err(ModelError::Config)?;
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return fail(format!("prior_prob must lie in (0, 1), got {}", self.prior_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    /// Learning rate at `reference_batch`; scaled linearly with the actual batch size.
    pub base_lr: f64,
    pub reference_batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    /// Learning-rate multiplier at the first warmup step.
    pub warmup_ratio: f64,
    /// Iterations at which the rate is multiplied by `lr_decay`.
    pub lr_steps: Vec<usize>,
    pub lr_decay: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_grad_norm: Option<f64>,
    pub weights: LossWeights,
    pub loc_loss: LocLossKind,
    pub smooth_l1_beta: f64,
    pub cls_focal: FocalConfig,
    pub assigner: AssignerConfig,
    pub seed: u64,
    /// Batches prepared ahead of the optimizer by a loader thread.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            iterations: 2000,
            base_lr: 0.01,
            reference_batch: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_iters: 500,
            warmup_ratio: 0.001,
            lr_steps: vec![1600, 1850],
            lr_decay: 0.1,
            clip_grad_norm: Some(35.0),
            weights: LossWeights::default(),
            loc_loss: LocLossKind::Giou,
            smooth_l1_beta: 1.0 / 9.0,
            cls_focal: FocalConfig::default(),
            assigner: AssignerConfig::default(),
            seed: 0,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 || self.reference_batch == 0 {
            return fail("batch_size and reference_batch must be positive".into());
        }
        if !(self.base_lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail("need base_lr >= 0, momentum in [0, 1) and weight_decay >= 0".into());
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio <= 1.0) {
            return fail(format!("warmup_ratio must lie in (0, 1], got {}", self.warmup_ratio));
        }
        if self.lr_steps.windows(2).any(|w| w[1] <= w[0]) {
            return fail("lr_steps must be strictly increasing".into());
        }
        if matches!(self.clip_grad_norm, Some(c) if !(c > 0.0)) {
            return fail("clip_grad_norm must be positive".into());
        }
        self.cls_focal.validate().map_err(ModelError::Config)?;
        Ok(())
    }

    /// Scheduled learning rate at 0-based iteration `iter`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        let lr = self.base_lr * self.batch_size as f64 / self.reference_batch as f64;
        let decays = self.lr_steps.iter().filter(|&&s| iter >= s).count();
        let lr = lr * self.lr_decay.powi(decays as i32);
        if iter < self.warmup_iters {
            let k = iter as f64 / self.warmup_iters as f64;
            lr * (self.warmup_ratio + (1.0 - self.warmup_ratio) * k)
        } else {
            lr
        }
    }

    pub fn loss_config(&self, model: &ModelConfig) -> LossConfig {
        let mut weights = self.weights;
        if !model.gap_head {
            weights.gap = 0.0;
        }
        if !model.bgs.enabled {
            weights.bgs = 0.0;
        }
        LossConfig {
            weights,
            loc_loss: self.loc_loss,
            smooth_l1_beta: self.smooth_l1_beta,
            cls_focal: self.cls_focal,
            bgs_kind: model.bgs.loss,
            bgs_focal: model.bgs.focal,
            iou_grad: model.opcl.iou_grad,
            ..LossConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Fusion exponent; `None` uses the model's configured alpha.
    pub alpha: Option<f64>,
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { alpha: None, score_thresh: 0.05, nms_iou: 0.5, max_detections: 100 }
    }
}
