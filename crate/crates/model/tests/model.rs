use candle_core::Tensor;
use image::RgbImage;
use scd_core::annotations::LabelTaxonomy;
use scd_core::losses::{AttachHead, LossWeights};
use scd_core::synthgen::{generate_dataset, SceneConfig, SplitRule};
use scd_model::{
    load_checkpoint, save_checkpoint, BgsConfig, Detector, Mode, ModelConfig, ModelError, PredictConfig, Sample,
    TrainConfig, Trainer,
};

fn tiny(num_classes: usize) -> ModelConfig {
    ModelConfig {
        backbone_channels: vec![8, 8, 8, 8],
        channels: 8,
        tower_depth: 1,
        num_classes,
        norm_groups: 4,
        ..ModelConfig::default()
    }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let scene = SceneConfig {
        width: 64,
        height: 64,
        count_min: 1,
        count_max: 4,
        size_min: 0.2,
        size_max: 0.45,
        rows_max: 2,
        cols_max: 2,
        ..SceneConfig::default()
    };
    let data = generate_dataset(&scene, n, seed, SplitRule::Ratio(0.0)).unwrap();
    data.images.into_iter().zip(data.records).map(|(image, record)| Sample { image, record }).collect()
}

fn quiet_train(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, warmup_iters: 0, lr_steps: vec![], batch_size: 2, reference_batch: 2, ..TrainConfig::default() }
}

fn flat(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

#[test]
fn shape_contract_for_64x64() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let img = RgbImage::new(64, 64);
    let (x, size) = model.images_to_tensor(&[&img]).unwrap();
    let out = model.forward(&x, size, Mode::Train).unwrap();
    let grids: Vec<(usize, usize)> = out.levels.iter().map(|l| (l.grid_h, l.grid_w)).collect();
    assert_eq!(grids, vec![(8, 8), (4, 4), (2, 2), (1, 1), (1, 1)]);
    let p3 = &out.levels[0];
    assert_eq!(p3.stride, 8);
    assert_eq!(p3.cls_logits.dims(), &[1, 8 * 8 * 9, 4]);
    assert_eq!(p3.box_deltas.dims(), &[1, 8 * 8 * 9, 4]);
    assert_eq!(p3.gap_logits.as_ref().unwrap().dims(), &[1, 8 * 8 * 9]);
    assert_eq!(out.boundary_logits.as_ref().unwrap().dims(), &[1, 64]);
    assert_eq!(out.cls_logits().unwrap().dims()[1], model.anchor_boxes(size).unwrap().len());
}

#[test]
fn shape_contract_for_odd_sizes() {
    let model = Detector::new(tiny(2), 0).unwrap();
    let img = RgbImage::new(77, 50);
    let (x, size) = model.images_to_tensor(&[&img, &img]).unwrap();
    assert_eq!(size, (50, 77));
    let out = model.forward(&x, size, Mode::Train).unwrap();
    for l in &out.levels {
        assert_eq!((l.grid_h, l.grid_w), (50usize.div_ceil(l.stride), 77usize.div_ceil(l.stride)));
        assert_eq!(l.cls_logits.dims(), &[2, l.grid_h * l.grid_w * 9, 2]);
    }
    assert_eq!(out.boundary_logits.unwrap().dims(), &[2, 7 * 10]);
}

#[test]
fn one_class_gives_nine_cls_channels_per_location() {
    let model = Detector::new(tiny(1), 0).unwrap();
    let img = RgbImage::new(64, 64);
    let (x, size) = model.images_to_tensor(&[&img]).unwrap();
    let out = model.forward(&x, size, Mode::Inference).unwrap();
    let p3 = &out.levels[0];
    let dims = p3.cls_logits.dims();
    assert_eq!(dims[1] * dims[2] / (p3.grid_h * p3.grid_w), 9);
    assert!(out.boundary_logits.is_none());
}

#[test]
fn zero_sized_image_is_rejected() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let img = RgbImage::new(0, 10);
    assert!(model.images_to_tensor(&[&img]).is_err());
    assert!(model.images_to_tensor(&[]).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(Detector::new(ModelConfig { tower_depth: 0, ..tiny(4) }, 0), Err(ModelError::Config(_))));
    assert!(matches!(Detector::new(ModelConfig { num_classes: 0, ..tiny(4) }, 0), Err(ModelError::Config(_))));
    let thin = ModelConfig { bgs: BgsConfig { thickness: 4, ..BgsConfig::default() }, ..tiny(4) };
    assert!(matches!(Detector::new(thin, 0), Err(ModelError::Config(_))));
}

#[test]
fn initialization_is_deterministic() {
    let a = Detector::new(tiny(4), 7).unwrap();
    let b = Detector::new(tiny(4), 7).unwrap();
    let c = Detector::new(tiny(4), 8).unwrap();
    assert_eq!(a.params().checksum().unwrap(), b.params().checksum().unwrap());
    assert_ne!(a.params().checksum().unwrap(), c.params().checksum().unwrap());
    assert!(a.num_parameters() > 0);
}

#[test]
fn classification_bias_encodes_prior() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let bias = flat(model.params().get("head.cls_out.bias").unwrap().as_tensor());
    let want = -((1.0f64 - 0.01) / 0.01).ln();
    assert!(bias.iter().all(|&b| (b as f64 - want).abs() < 1e-5));
}

#[test]
fn disabled_bgs_has_no_boundary_parameters() {
    let cfg = ModelConfig { bgs: BgsConfig { enabled: false, ..BgsConfig::default() }, ..tiny(4) };
    let model = Detector::new(cfg, 0).unwrap();
    assert!(!model.has_boundary_head());
    assert!(!model.params().contains_prefix("bgs."));
    assert!(Detector::new(tiny(4), 0).unwrap().params().contains_prefix("bgs."));
    let img = RgbImage::new(64, 64);
    let (x, size) = model.images_to_tensor(&[&img]).unwrap();
    assert!(model.forward(&x, size, Mode::Train).unwrap().boundary_logits.is_none());
}

#[test]
fn combined_attachment_reads_both_towers() {
    let mut cfg = tiny(4);
    for (attach, width) in [(AttachHead::Classification, 8), (AttachHead::Regression, 8), (AttachHead::Combined, 16)] {
        cfg.opcl.attach_head = attach;
        let model = Detector::new(cfg.clone(), 0).unwrap();
        let w = model.params().get("head.gap_out.weight").unwrap();
        assert_eq!(w.as_tensor().dims(), &[9, width, 3, 3], "{attach:?}");
    }
}

#[test]
fn plain_detector_has_no_gap_head() {
    let model = Detector::new(ModelConfig { gap_head: false, ..tiny(4) }, 0).unwrap();
    assert!(!model.params().contains_prefix("head.gap_out"));
    assert!(model.zero_gap_head().is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let data = samples(2, 3);
    let before = model.params().checksum().unwrap();
    let mut trainer = Trainer::new(TrainConfig { base_lr: 0.0, ..quiet_train(3) }, LabelTaxonomy::FOUR_LABEL).unwrap();
    for _ in 0..3 {
        trainer.step(&model, &[&data[0], &data[1]]).unwrap();
    }
    assert_eq!(model.params().checksum().unwrap(), before);
}

#[test]
fn empty_batch_is_an_error() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let mut trainer = Trainer::new(quiet_train(1), LabelTaxonomy::FOUR_LABEL).unwrap();
    assert!(matches!(trainer.step(&model, &[]), Err(ModelError::EmptyBatch)));
}

#[test]
fn zero_auxiliary_weights_match_plain_detector() {
    let aux = Detector::new(tiny(4), 5).unwrap();
    let plain_cfg = ModelConfig { gap_head: false, bgs: BgsConfig { enabled: false, ..BgsConfig::default() }, ..tiny(4) };
    let plain = Detector::new(plain_cfg, 5).unwrap();
    let data = samples(2, 11);
    let batch = [&data[0], &data[1]];
    let weights = LossWeights { gap: 0.0, bgs: 0.0, ..LossWeights::default() };
    let mut ta = Trainer::new(TrainConfig { weights, ..quiet_train(5) }, LabelTaxonomy::FOUR_LABEL).unwrap();
    let mut tp = Trainer::new(quiet_train(5), LabelTaxonomy::FOUR_LABEL).unwrap();
    for _ in 0..5 {
        let ra = ta.step(&aux, &batch).unwrap();
        let rp = tp.step(&plain, &batch).unwrap();
        assert!((ra.total - rp.total).abs() <= 1e-5 * rp.total.abs().max(1.0), "{} vs {}", ra.total, rp.total);
    }
    let mut compared = 0;
    for (name, var) in plain.params().iter() {
        let a = flat(aux.params().get(name).unwrap().as_tensor());
        let p = flat(var.as_tensor());
        let scale = p.iter().fold(1e-3f32, |m, v| m.max(v.abs()));
        let diff = a.iter().zip(&p).fold(0f32, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-4 * scale, "{name}: {diff}");
        compared += 1;
    }
    assert_eq!(compared, plain.params().len());
}

#[test]
fn fixed_batch_loss_decreases_over_every_50_step_window() {
    let model = Detector::new(tiny(4), 1).unwrap();
    let data = samples(2, 21);
    let batch = [&data[0], &data[1]];
    let cfg = TrainConfig {
        base_lr: 0.003,
        warmup_iters: 20,
        lr_steps: vec![40, 80, 120, 160],
        lr_decay: 0.3,
        ..quiet_train(200)
    };
    let mut trainer = Trainer::new(cfg, LabelTaxonomy::FOUR_LABEL).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| trainer.step(&model, &batch).unwrap().total).collect();
    for t in 0..150 {
        assert!(losses[t + 50] < losses[t], "step {t}: {} -> {}", losses[t], losses[t + 50]);
    }
}

#[test]
fn non_finite_loss_names_the_term() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let bias = model.params().get("head.cls_out.bias").unwrap();
    bias.set(&Tensor::full(f32::NAN, bias.as_tensor().dims(), model.device()).unwrap()).unwrap();
    let data = samples(1, 2);
    let mut trainer = Trainer::new(quiet_train(1), LabelTaxonomy::FOUR_LABEL).unwrap();
    match trainer.step(&model, &[&data[0]]) {
        Err(ModelError::NonFiniteLoss { term, iteration, .. }) => {
            assert_eq!(term, "cls");
            assert_eq!(iteration, 0);
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let model = Detector::new(tiny(4), 9).unwrap();
    let data = samples(2, 4);
    let mut trainer = Trainer::new(quiet_train(2), LabelTaxonomy::FOUR_LABEL).unwrap();
    trainer.step(&model, &[&data[0], &data[1]]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.seed(), 9);
    assert_eq!(back.params().checksum().unwrap(), model.params().checksum().unwrap());
    let cfg = PredictConfig { score_thresh: 0.0, ..PredictConfig::default() };
    assert_eq!(back.predict(&data[0].image, &cfg).unwrap(), model.predict(&data[0].image, &cfg).unwrap());
}

#[test]
fn corrupt_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.safetensors");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint { .. })));
}

#[test]
fn predict_never_runs_the_boundary_head() {
    let model = Detector::new(tiny(4), 0).unwrap();
    let data = samples(3, 8);
    let mut trainer = Trainer::new(quiet_train(1), LabelTaxonomy::FOUR_LABEL).unwrap();
    trainer.step(&model, &[&data[0]]).unwrap();
    let after_train = model.bgs_evaluations();
    assert_eq!(after_train, 1);
    for s in &data {
        model.predict(&s.image, &PredictConfig::default()).unwrap();
    }
    model.raw_predictions_batch(&[&data[0].image, &data[1].image]).unwrap();
    assert_eq!(model.bgs_evaluations(), after_train);
}

#[test]
fn alpha_zero_keeps_the_class_score_ranking() {
    let model = Detector::new(tiny(4), 3).unwrap();
    let data = samples(3, 6);
    let cfg = PredictConfig { score_thresh: 0.0, ..PredictConfig::default() };
    for s in &data {
        let raw = model.raw_predictions(&s.image).unwrap();
        let fused = raw.detections(0.0, &cfg);
        let baseline = raw.detections_ranked_by(0.0, &cfg, |d| d.cls_prob);
        assert_eq!(fused, baseline);
        assert!(!fused.is_empty());
    }
}

#[test]
fn zero_gap_makes_predictions_alpha_invariant() {
    let model = Detector::new(tiny(4), 3).unwrap();
    model.zero_gap_head().unwrap();
    let data = samples(2, 6);
    for s in &data {
        let reference = model.predict(&s.image, &PredictConfig { alpha: Some(0.0), ..PredictConfig::default() }).unwrap();
        for alpha in [0.3, 0.7, 1.0] {
            let got = model.predict(&s.image, &PredictConfig { alpha: Some(alpha), ..PredictConfig::default() }).unwrap();
            assert_eq!(got, reference, "alpha {alpha}");
        }
    }
}
