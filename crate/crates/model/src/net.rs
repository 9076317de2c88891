use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{Device, Tensor, D};
use image::RgbImage;
use scd_core::geometry::{AnchorGrid, BBox};
use scd_core::losses::AttachHead;

use crate::config::{ModelConfig, PYRAMID_STRIDES};
use crate::params::{Init, ParamStore};
use crate::ModelError;

/// Inputs are zero-padded on the right and bottom to a multiple of this.
pub const PAD_MULTIPLE: usize = 128;
const GN_EPS: f64 = 1e-5;
const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
struct Conv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    norm: Option<(Tensor, Tensor, usize)>,
}

impl Conv {
    fn forward(&self, x: &Tensor, relu: bool) -> Result<Tensor, ModelError> {
        let c = self.bias.dim(0)?;
        let mut y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        y = y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?;
        if let Some((gamma, beta, groups)) = &self.norm {
            y = group_norm(&y, *groups, gamma, beta)?;
        }
        Ok(if relu { y.relu()? } else { y })
    }
}

fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<Tensor, ModelError> {
    let (b, c, h, w) = x.dims4()?;
    let g = x.reshape((b, groups, (c / groups) * h * w))?;
    let mean = g.mean_keepdim(D::Minus1)?;
    let centered = g.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + GN_EPS)?.sqrt()?)?.reshape((b, c, h, w))?;
    Ok(normed.broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?.broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    device: &'a Device,
    groups: usize,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, norm: bool, init: Option<Init>, bias: f64) -> Result<Conv, ModelError> {
        let fan_in = c_in * k * k;
        let init = init.unwrap_or(Init::He { fan_in });
        let weight = self.store.create(format!("{name}.weight"), &[c_out, c_in, k, k], init, self.seed, self.device)?;
        let bias = self.store.create(format!("{name}.bias"), &[c_out], Init::Constant(bias), self.seed, self.device)?;
        let norm = if norm && self.groups > 0 {
            let gamma = self.store.create(format!("{name}.gn.weight"), &[c_out], Init::Constant(1.0), self.seed, self.device)?;
            let beta = self.store.create(format!("{name}.gn.bias"), &[c_out], Init::Constant(0.0), self.seed, self.device)?;
            Some((gamma, beta, self.groups))
        } else {
            None
        };
        Ok(Conv { weight, bias, stride, padding: k / 2, norm })
    }

    fn tower(&mut self, name: &str, c_in: usize, c: usize, depth: usize) -> Result<Vec<Conv>, ModelError> {
        (0..depth).map(|i| self.conv(&format!("{name}.{i}"), if i == 0 { c_in } else { c }, c, 3, 1, true, None, 0.0)).collect()
    }
}

fn run_tower(tower: &[Conv], x: &Tensor) -> Result<Tensor, ModelError> {
    tower.iter().try_fold(x.clone(), |h, conv| conv.forward(&h, true))
}

/// Raw head outputs for one batch. Levels follow [`PYRAMID_STRIDES`]; every per-anchor
/// tensor is `[B, grid_h * grid_w * A, ...]` in the anchor order of `AnchorGrid`.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub image_size: (usize, usize),
    pub levels: Vec<LevelOutputs>,
    /// `[B, grid_h * grid_w]` at stride 8; only in training mode with BGS enabled.
    pub boundary_logits: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LevelOutputs {
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// `[B, H*W*A, K]`
    pub cls_logits: Tensor,
    /// `[B, H*W*A, 4]`
    pub box_deltas: Tensor,
    /// `[B, H*W*A]`
    pub gap_logits: Option<Tensor>,
}

impl HeadOutputs {
    pub fn cls_logits(&self) -> Result<Tensor, ModelError> {
        Ok(Tensor::cat(&self.levels.iter().map(|l| &l.cls_logits).collect::<Vec<_>>(), 1)?)
    }

    pub fn box_deltas(&self) -> Result<Tensor, ModelError> {
        Ok(Tensor::cat(&self.levels.iter().map(|l| &l.box_deltas).collect::<Vec<_>>(), 1)?)
    }

    pub fn gap_logits(&self) -> Result<Option<Tensor>, ModelError> {
        let parts: Option<Vec<&Tensor>> = self.levels.iter().map(|l| l.gap_logits.as_ref()).collect();
        Ok(match parts {
            Some(p) => Some(Tensor::cat(&p, 1)?),
            None => None,
        })
    }
}

/// The detector: backbone, pyramid, shared heads, optional gap and boundary heads.
#[derive(Debug)]
pub struct Detector {
    config: ModelConfig,
    seed: u64,
    device: Device,
    pub(crate) params: ParamStore,
    stem: Conv,
    stages: Vec<[Conv; 2]>,
    laterals: [Conv; 3],
    outputs: [Conv; 3],
    p6: Conv,
    p7: Conv,
    cls_tower: Vec<Conv>,
    reg_tower: Vec<Conv>,
    cls_out: Conv,
    reg_out: Conv,
    gap_out: Option<Conv>,
    bgs_tower: Vec<Conv>,
    bgs_out: Option<Conv>,
    bgs_evaluations: AtomicUsize,
}

impl Detector {
    /// Builds and initializes a model; equal `(config, seed)` give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let device = Device::Cpu;
        let mut params = ParamStore::default();
        let mut b = Builder { store: &mut params, seed, device: &device, groups: config.norm_groups };
        let bc = &config.backbone_channels;
        let c = config.channels;
        let a = config.anchors_per_location();
        let k = config.num_classes;

        let stem = b.conv("backbone.stem", 3, bc[0], 3, 2, true, None, 0.0)?;
        let mut stages = Vec::with_capacity(4);
        let mut c_in = bc[0];
        for (i, &width) in bc.iter().enumerate() {
            let down = b.conv(&format!("backbone.stage{i}.down"), c_in, width, 3, 2, true, None, 0.0)?;
            let conv = b.conv(&format!("backbone.stage{i}.conv"), width, width, 3, 1, true, None, 0.0)?;
            stages.push([down, conv]);
            c_in = width;
        }
        let laterals = [
            b.conv("fpn.lateral3", bc[1], c, 1, 1, false, None, 0.0)?,
            b.conv("fpn.lateral4", bc[2], c, 1, 1, false, None, 0.0)?,
            b.conv("fpn.lateral5", bc[3], c, 1, 1, false, None, 0.0)?,
        ];
        let outputs = [
            b.conv("fpn.out3", c, c, 3, 1, false, None, 0.0)?,
            b.conv("fpn.out4", c, c, 3, 1, false, None, 0.0)?,
            b.conv("fpn.out5", c, c, 3, 1, false, None, 0.0)?,
        ];
        let p6 = b.conv("fpn.p6", c, c, 3, 2, false, None, 0.0)?;
        let p7 = b.conv("fpn.p7", c, c, 3, 2, false, None, 0.0)?;

        let depth = config.tower_depth;
        let cls_tower = b.tower("head.cls_tower", c, c, depth)?;
        let reg_tower = b.tower("head.reg_tower", c, c, depth)?;
        let prior_bias = -((1.0 - config.prior_prob) / config.prior_prob).ln();
        let head_init = Some(Init::Std(0.01));
        let cls_out = b.conv("head.cls_out", c, a * k, 3, 1, false, head_init, prior_bias)?;
        let reg_out = b.conv("head.reg_out", c, a * 4, 3, 1, false, head_init, 0.0)?;
        let gap_out = if config.gap_head {
            let c_gap = if config.opcl.attach_head == AttachHead::Combined { 2 * c } else { c };
            Some(b.conv("head.gap_out", c_gap, a, 3, 1, false, head_init, 0.0)?)
        } else {
            None
        };
        let (bgs_tower, bgs_out) = if config.bgs.enabled {
            (b.tower("bgs.tower", c, c, depth)?, Some(b.conv("bgs.out", c, 1, 3, 1, false, head_init, 0.0)?))
        } else {
            (Vec::new(), None)
        };

        Ok(Detector {
            config,
            seed,
            device,
            params,
            stem,
            stages,
            laterals,
            outputs,
            p6,
            p7,
            cls_tower,
            reg_tower,
            cls_out,
            reg_out,
            gap_out,
            bgs_tower,
            bgs_out,
            bgs_evaluations: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    pub fn has_boundary_head(&self) -> bool {
        self.bgs_out.is_some()
    }

    /// How many times the boundary head has run.
    pub fn bgs_evaluations(&self) -> usize {
        self.bgs_evaluations.load(Ordering::Relaxed)
    }

    /// Zeroes the gap head so every gap logit is exactly 0.
    pub fn zero_gap_head(&self) -> Result<(), ModelError> {
        for name in ["head.gap_out.weight", "head.gap_out.bias"] {
            let var = self.params.get(name).ok_or_else(|| ModelError::Config("model has no gap head".into()))?;
            var.set(&var.zeros_like()?)?;
        }
        Ok(())
    }

    pub fn anchors(&self, image_size: (usize, usize)) -> Result<AnchorGrid, ModelError> {
        Ok(self.config.anchors.generate(image_size)?)
    }

    pub fn anchor_boxes(&self, image_size: (usize, usize)) -> Result<Vec<BBox>, ModelError> {
        Ok(self.anchors(image_size)?.boxes())
    }

    /// Normalized `[B, 3, H', W']` batch padded to [`PAD_MULTIPLE`], plus the common
    /// unpadded size (the largest height and width in the batch).
    pub fn images_to_tensor(&self, images: &[&RgbImage]) -> Result<(Tensor, (usize, usize)), ModelError> {
        if images.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let h = images.iter().map(|i| i.height() as usize).max().unwrap_or(0);
        let w = images.iter().map(|i| i.width() as usize).max().unwrap_or(0);
        if h == 0 || w == 0 {
            return Err(ModelError::ImageSize { height: h, width: w });
        }
        let (hp, wp) = (h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
        let mut data = vec![0f32; images.len() * 3 * hp * wp];
        for (n, img) in images.iter().enumerate() {
            for (x, y, px) in img.enumerate_pixels() {
                for ch in 0..3 {
                    let v = (px.0[ch] as f32 / 255.0 - PIXEL_MEAN[ch]) / PIXEL_STD[ch];
                    data[((n * 3 + ch) * hp + y as usize) * wp + x as usize] = v;
                }
            }
        }
        Ok((Tensor::from_vec(data, (images.len(), 3, hp, wp), &self.device)?, (h, w)))
    }

    /// Runs the network on a padded batch from [`Detector::images_to_tensor`].
    pub fn forward(&self, images: &Tensor, image_size: (usize, usize), mode: Mode) -> Result<HeadOutputs, ModelError> {
        let (batch, _, hp, wp) = images.dims4()?;
        let (h, w) = image_size;
        if h == 0 || w == 0 {
            return Err(ModelError::ImageSize { height: h, width: w });
        }
        if hp % PAD_MULTIPLE != 0 || wp % PAD_MULTIPLE != 0 || hp < h || wp < w {
            return Err(ModelError::Config(format!("input {hp}x{wp} is not a {PAD_MULTIPLE}-multiple padding of {h}x{w}")));
        }
        let mut x = self.stem.forward(images, true)?;
        let mut feats = Vec::with_capacity(4);
        for [down, conv] in &self.stages {
            x = conv.forward(&down.forward(&x, true)?, true)?;
            feats.push(x.clone());
        }
        let lat5 = self.laterals[2].forward(&feats[3], false)?;
        let lat4 = self.laterals[1].forward(&feats[2], false)?.add(&upsample2(&lat5)?)?;
        let lat3 = self.laterals[0].forward(&feats[1], false)?.add(&upsample2(&lat4)?)?;
        let p3 = self.outputs[0].forward(&lat3, false)?;
        let p4 = self.outputs[1].forward(&lat4, false)?;
        let p5 = self.outputs[2].forward(&lat5, false)?;
        let p6 = self.p6.forward(&p5, false)?;
        let p7 = self.p7.forward(&p6.relu()?, false)?;

        let k = self.config.num_classes;
        let mut levels = Vec::with_capacity(5);
        let mut boundary_logits = None;
        for (i, p) in [p3, p4, p5, p6, p7].into_iter().enumerate() {
            let stride = PYRAMID_STRIDES[i];
            let (gh, gw) = (h.div_ceil(stride), w.div_ceil(stride));
            let p = p.narrow(2, 0, gh)?.narrow(3, 0, gw)?;
            let cls_feat = run_tower(&self.cls_tower, &p)?;
            let reg_feat = run_tower(&self.reg_tower, &p)?;
            let cls = to_anchor_major(&self.cls_out.forward(&cls_feat, false)?, batch, k)?;
            let deltas = to_anchor_major(&self.reg_out.forward(&reg_feat, false)?, batch, 4)?;
            let gap = match &self.gap_out {
                Some(conv) => {
                    let input = match self.config.opcl.attach_head {
                        AttachHead::Classification => cls_feat.clone(),
                        AttachHead::Regression => reg_feat.clone(),
                        AttachHead::Combined => Tensor::cat(&[&cls_feat, &reg_feat], 1)?,
                    };
                    Some(to_anchor_major(&conv.forward(&input, false)?, batch, 1)?.squeeze(2)?)
                }
                None => None,
            };
            if i == 0 && mode == Mode::Train {
                if let Some(out) = &self.bgs_out {
                    self.bgs_evaluations.fetch_add(1, Ordering::Relaxed);
                    let feat = run_tower(&self.bgs_tower, &p)?;
                    boundary_logits = Some(out.forward(&feat, false)?.reshape((batch, gh * gw))?);
                }
            }
            levels.push(LevelOutputs { stride, grid_h: gh, grid_w: gw, cls_logits: cls, box_deltas: deltas, gap_logits: gap });
        }
        Ok(HeadOutputs { image_size, levels, boundary_logits })
    }
}

fn upsample2(x: &Tensor) -> Result<Tensor, ModelError> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

/// `[B, A*per, H, W]` to `[B, H*W*A, per]`.
fn to_anchor_major(x: &Tensor, batch: usize, per: usize) -> Result<Tensor, ModelError> {
    let (_, ch, h, w) = x.dims4()?;
    let a = ch / per;
    Ok(x.permute((0, 2, 3, 1))?.contiguous()?.reshape((batch, h * w * a, per))?)
}
