use std::sync::mpsc;
use std::thread;

use candle_core::{Tensor, Var};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use scd_core::annotations::{ImageRecord, LabelTaxonomy};
use scd_core::geometry::{rasterize_boundary, BBox, Polygon};
use scd_core::losses::{
    assign_targets, sigmoid, total_loss, BoundaryInput, HeadPredictions, ImageLossInput, LossBreakdown, LossError,
};

use crate::config::{TrainConfig, PYRAMID_STRIDES};
use crate::net::{Detector, Mode};
use crate::ModelError;

/// One training image with its annotations.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: RgbImage,
    pub record: ImageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub breakdown: LossBreakdown,
    pub num_positive: usize,
    pub grad_norm: f64,
}

/// Optimizer state: iteration counter and per-parameter momentum buffers.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub taxonomy: LabelTaxonomy,
    pub iteration: usize,
    velocity: Vec<Option<Tensor>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, taxonomy: LabelTaxonomy) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Trainer { config, taxonomy, iteration: 0, velocity: Vec::new() })
    }

    /// One SGD step on `batch`.
    pub fn step(&mut self, model: &Detector, batch: &[&Sample]) -> Result<StepReport, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if self.taxonomy.num_classes() != model.config().num_classes {
            return Err(ModelError::Config(format!(
                "taxonomy has {} classes but the model predicts {}",
                self.taxonomy.num_classes(),
                model.config().num_classes
            )));
        }
        let cfg = &self.config;
        let images: Vec<&RgbImage> = batch.iter().map(|s| &s.image).collect();
        let (x, size) = model.images_to_tensor(&images)?;
        let out = model.forward(&x, size, Mode::Train)?;
        let anchors = model.anchor_boxes(size)?;
        let n = anchors.len();
        let k = model.config().num_classes;
        let b = batch.len();

        let cls_t = out.cls_logits()?;
        let del_t = out.box_deltas()?;
        let gap_t = out.gap_logits()?;
        let cls = to_f64(&cls_t)?;
        let del = to_f64(&del_t)?;
        let gap = match &gap_t {
            Some(t) => to_f64(t)?,
            None => vec![0.0; b * n],
        };

        let mut gts: Vec<Vec<(BBox, usize)>> = Vec::with_capacity(b);
        for s in batch {
            let mut g = Vec::with_capacity(s.record.instances.len());
            for inst in &s.record.instances {
                let class = self
                    .taxonomy
                    .map_label(inst.label)
                    .and_then(|l| self.taxonomy.class_index(l))
                    .ok_or_else(|| ModelError::Label { image_id: s.record.image_id, label: inst.label.to_string() })?;
                g.push((inst.bbox, class));
            }
            gts.push(g);
        }
        let assignments: Vec<_> = gts.iter().map(|g| assign_targets(&anchors, g, &cfg.assigner)).collect();
        let gt_boxes: Vec<Vec<BBox>> = gts.iter().map(|g| g.iter().map(|(bb, _)| *bb).collect()).collect();
        let preds: Vec<HeadPredictions> = (0..b)
            .map(|i| HeadPredictions {
                cls_logits: cls[i * n * k..(i + 1) * n * k].to_vec(),
                deltas: del[i * n * 4..(i + 1) * n * 4].chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
                gap_logits: gap[i * n..(i + 1) * n].to_vec(),
            })
            .collect();
        let inputs: Vec<ImageLossInput> = (0..b)
            .map(|i| ImageLossInput { anchors: &anchors, gt_boxes: &gt_boxes[i], assignment: &assignments[i], preds: &preds[i] })
            .collect();

        let mut boundary_probs = Vec::new();
        let mut boundary_target = Vec::new();
        if let Some(logits) = &out.boundary_logits {
            boundary_probs = to_f64(logits)?.into_iter().map(sigmoid).collect();
            let thickness = model.config().bgs.thickness;
            for s in batch {
                let polys: Vec<Polygon> = s.record.instances.iter().map(|i| i.polygon.clone()).collect();
                let map = rasterize_boundary(&polys, size, thickness, PYRAMID_STRIDES[0])?;
                boundary_target.extend(map.data.iter().map(|&v| v != 0));
            }
        }
        let boundary = out
            .boundary_logits
            .as_ref()
            .map(|_| BoundaryInput { probs: &boundary_probs, target: &boundary_target });

        let loss_cfg = cfg.loss_config(model.config());
        let loss = total_loss(&inputs, boundary, k, &loss_cfg).map_err(|e| match e {
            LossError::NonFinite { term, value } => ModelError::NonFiniteLoss { term, value, iteration: self.iteration },
            other => other.into(),
        })?;

        // feed the analytic gradients back: d/dθ Σ output·grad
        let dev = model.device();
        let g_cls: Vec<f32> = loss.grads.iter().flat_map(|g| g.cls_logits.iter().map(|&v| v as f32)).collect();
        let g_del: Vec<f32> = loss.grads.iter().flat_map(|g| g.deltas.iter().flatten().map(|&v| v as f32)).collect();
        let mut surrogate = (cls_t * Tensor::from_vec(g_cls, (b, n, k), dev)?)?.sum_all()?;
        surrogate = (surrogate + (del_t * Tensor::from_vec(g_del, (b, n, 4), dev)?)?.sum_all()?)?;
        if let Some(gap_t) = gap_t {
            let g_gap: Vec<f32> = loss.grads.iter().flat_map(|g| g.gap_logits.iter().map(|&v| v as f32)).collect();
            surrogate = (surrogate + (gap_t * Tensor::from_vec(g_gap, (b, n), dev)?)?.sum_all()?)?;
        }
        if let Some(logits) = &out.boundary_logits {
            let g: Vec<f32> = loss
                .boundary_grad
                .iter()
                .zip(&boundary_probs)
                .map(|(&d, &p)| (d * p * (1.0 - p)) as f32)
                .collect();
            let shape = logits.dims2()?;
            surrogate = (surrogate + (logits * Tensor::from_vec(g, shape, dev)?)?.sum_all()?)?;
        }
        let grads = surrogate.backward()?;

        let vars: Vec<&Var> = model.params.iter().map(|(_, v)| v).collect();
        let mut grad_list = Vec::with_capacity(vars.len());
        let mut sq = 0.0f64;
        for v in &vars {
            let g = grads.get(v.as_tensor()).cloned();
            if let Some(g) = &g {
                sq += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
            }
            grad_list.push(g);
        }
        let grad_norm = sq.sqrt();
        let scale = match cfg.clip_grad_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let lr = cfg.learning_rate(self.iteration);
        if self.velocity.len() != vars.len() {
            self.velocity = vec![None; vars.len()];
        }
        for ((var, g), vel) in vars.iter().zip(grad_list).zip(self.velocity.iter_mut()) {
            let Some(g) = g else { continue };
            let w = var.as_tensor().detach();
            let g = ((g.detach() * scale)? + (&w * cfg.weight_decay)?)?;
            let v = match vel.take() {
                Some(prev) => ((prev * cfg.momentum)? + g)?,
                None => g,
            };
            var.set(&(w - (&v * lr)?)?)?;
            *vel = Some(v);
        }

        let report = StepReport {
            iteration: self.iteration,
            lr,
            total: loss.total,
            breakdown: loss.breakdown,
            num_positive: assignments.iter().map(|a| a.num_positive).sum(),
            grad_norm,
        };
        self.iteration += 1;
        Ok(report)
    }
}

fn to_f64(t: &Tensor) -> Result<Vec<f64>, ModelError> {
    Ok(t.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
}

/// Single training step; see [`Trainer::step`].
pub fn train_step(model: &Detector, batch: &[&Sample], state: &mut Trainer) -> Result<StepReport, ModelError> {
    state.step(model, batch)
}

/// Batch index lists for `iterations` steps: a seeded shuffle per epoch, cut into batches.
fn batch_plan(n: usize, batch_size: usize, iterations: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(iterations);
    let mut order: Vec<usize> = Vec::new();
    while plan.len() < iterations {
        if order.len() < batch_size {
            let mut epoch: Vec<usize> = (0..n).collect();
            epoch.shuffle(&mut rng);
            order.extend(epoch);
        }
        plan.push(order.drain(..batch_size.min(n)).collect());
    }
    plan
}

/// Trains for `trainer.config.iterations` steps. A loader thread assembles batches ahead
/// of the optimizer through a bounded queue; `on_step` sees every report.
pub fn fit(
    model: &Detector,
    trainer: &mut Trainer,
    samples: &[Sample],
    mut on_step: impl FnMut(&StepReport),
) -> Result<Vec<StepReport>, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let cfg = trainer.config.clone();
    let remaining = cfg.iterations.saturating_sub(trainer.iteration);
    let plan = batch_plan(samples.len(), cfg.batch_size, remaining, cfg.seed ^ trainer.iteration as u64);
    let mut reports = Vec::with_capacity(remaining);
    thread::scope(|scope| -> Result<(), ModelError> {
        let (tx, rx) = mpsc::sync_channel::<Vec<&Sample>>(cfg.prefetch.max(1));
        scope.spawn(move || {
            for idx in plan {
                if tx.send(idx.iter().map(|&i| &samples[i]).collect()).is_err() {
                    break;
                }
            }
        });
        for batch in rx {
            let report = trainer.step(model, &batch)?;
            on_step(&report);
            reports.push(report);
        }
        Ok(())
    })?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_covers_epochs() {
        let plan = batch_plan(5, 2, 5, 1);
        assert_eq!(plan.len(), 5);
        assert!(plan.iter().all(|b| b.len() == 2));
        let mut first: Vec<usize> = plan[..2].iter().flatten().copied().collect();
        first.sort();
        first.dedup();
        assert_eq!(first.len(), 4);
        assert_eq!(batch_plan(5, 2, 5, 1), plan);
    }
}
