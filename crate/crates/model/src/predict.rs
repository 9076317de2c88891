use image::RgbImage;

use scd_core::geometry::{decode_deltas, nms, BBox, Deltas, Detection, DEFAULT_MAX_LOG_RATIO};
use scd_core::losses::fuse_score;

use crate::config::PredictConfig;
use crate::net::{Detector, Mode};
use crate::ModelError;

/// Per-anchor outputs of one image, with its anchors. Gap logits are zero without a gap head.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    pub image_size: (usize, usize),
    pub num_classes: usize,
    pub anchors: Vec<BBox>,
    /// `anchors.len() * num_classes`, class-minor.
    pub cls_logits: Vec<f64>,
    pub deltas: Vec<Deltas>,
    pub gap_logits: Vec<f64>,
}

impl RawPredictions {
    /// Every (anchor, class) pair whose fused score reaches `score_thresh`, decoded and
    /// clipped to the image. Ordered by anchor then class.
    pub fn candidates(&self, alpha: f64, score_thresh: f64) -> Vec<Detection> {
        let (h, w) = self.image_size;
        let k = self.num_classes;
        let mut out = Vec::new();
        for (a, anchor) in self.anchors.iter().enumerate() {
            let mut decoded = None;
            for c in 0..k {
                let f = fuse_score(self.cls_logits[a * k + c], self.gap_logits[a], alpha);
                if f.s_det < score_thresh {
                    continue;
                }
                let bbox = *decoded.get_or_insert_with(|| decode_deltas(anchor, &self.deltas[a], DEFAULT_MAX_LOG_RATIO).clip(w as f64, h as f64));
                out.push(Detection { bbox, class_id: c, cls_prob: f.p_cls, loc_conf: f.p_loc, score: f.s_det });
            }
        }
        out
    }

    /// Thresholded candidates, per-class NMS ranked by `ranking`, capped at `max_detections`.
    pub fn detections_ranked_by(
        &self,
        alpha: f64,
        cfg: &PredictConfig,
        ranking: impl Fn(&Detection) -> f64,
    ) -> Vec<Detection> {
        let cands: Vec<Detection> = self.candidates(alpha, cfg.score_thresh).into_iter().filter(|d| d.bbox.is_valid()).collect();
        let mut kept = nms(&cands, ranking, cfg.nms_iou);
        kept.truncate(cfg.max_detections);
        kept
    }

    pub fn detections(&self, alpha: f64, cfg: &PredictConfig) -> Vec<Detection> {
        self.detections_ranked_by(alpha, cfg, |d| d.score)
    }
}

impl Detector {
    /// Inference-mode forward pass on one image. The boundary head is never run here.
    pub fn raw_predictions(&self, image: &RgbImage) -> Result<RawPredictions, ModelError> {
        let mut batch = self.raw_predictions_batch(&[image])?;
        Ok(batch.remove(0))
    }

    pub fn raw_predictions_batch(&self, images: &[&RgbImage]) -> Result<Vec<RawPredictions>, ModelError> {
        let (x, size) = self.images_to_tensor(images)?;
        let out = self.forward(&x, size, Mode::Inference)?;
        let anchors = self.anchor_boxes(size)?;
        let n = anchors.len();
        let k = self.config().num_classes;
        let cls = out.cls_logits()?.flatten_all()?.to_vec1::<f32>()?;
        let del = out.box_deltas()?.flatten_all()?.to_vec1::<f32>()?;
        let gap = match out.gap_logits()? {
            Some(t) => t.flatten_all()?.to_vec1::<f32>()?,
            None => vec![0.0; images.len() * n],
        };
        Ok((0..images.len())
            .map(|i| RawPredictions {
                image_size: size,
                num_classes: k,
                anchors: anchors.clone(),
                cls_logits: cls[i * n * k..(i + 1) * n * k].iter().map(|&v| v as f64).collect(),
                deltas: del[i * n * 4..(i + 1) * n * 4]
                    .chunks_exact(4)
                    .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64])
                    .collect(),
                gap_logits: gap[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect(),
            })
            .collect())
    }

    /// Fused-score detections after per-class NMS.
    pub fn predict(&self, image: &RgbImage, cfg: &PredictConfig) -> Result<Vec<Detection>, ModelError> {
        let alpha = cfg.alpha.unwrap_or(self.config().opcl.alpha);
        Ok(self.raw_predictions(image)?.detections(alpha, cfg))
    }
}
