use scd_core::annotations::{validate_taxonomy, Label, LabelTaxonomy};
use scd_core::synthgen::{
    compute_truths, derive_labels, generate_dataset, generate_layout, generate_scene, PixelRect, SceneConfig,
    SceneLayout, SplitRule,
};

fn oracle_labels(layout: &SceneLayout) -> Vec<Label> {
    let rects: Vec<[i32; 4]> = layout.rects.iter().map(|r| [r.x0, r.y0, r.x1, r.y1]).collect();
    scd_oracles::carton_labels(&rects, layout.width as i32, layout.height as i32)
        .into_iter()
        .map(|(inner, all)| Label::from_parts(inner, all))
        .collect()
}

#[test]
fn labels_agree_with_raster_oracle_on_1000_scenes() {
    let small = SceneConfig { width: 96, height: 96, count_max: 20, occluder_prob: 0.5, truncation_prob: 0.4, ..SceneConfig::default() };
    let big = SceneConfig::default();
    let mut seen = std::collections::HashSet::new();
    for seed in 0..1000u64 {
        let cfg = if seed % 4 == 0 { &big } else { &small };
        let layout = generate_layout(cfg, seed).unwrap();
        let truths = compute_truths(&layout);
        let got = derive_labels(&truths);
        let want = oracle_labels(&layout);
        assert_eq!(got, want, "seed {seed}");
        seen.extend(got);
    }
    // the scenes must exercise every label
    assert_eq!(seen.len(), 4, "{seen:?}");
}

#[test]
fn center_of_3x3_stack_is_inner_all() {
    let rects = (0..9).map(|k| {
        let (r, c) = (k / 3, k % 3);
        PixelRect::new(20 + c * 10, 20 + r * 10, 30 + c * 10, 30 + r * 10)
    });
    let layout = SceneLayout { width: 80, height: 80, rects: rects.collect(), styles: vec![0; 9] };
    let labels = derive_labels(&compute_truths(&layout));
    assert_eq!(labels[4], Label::from_parts(true, true));
    assert_eq!(labels[0], Label::from_parts(false, true));
}

#[test]
fn visible_masks_without_occluders_match_full_raster() {
    let cfg = SceneConfig { occluder_prob: 0.0, truncation_prob: 0.0, ..SceneConfig::default() };
    for seed in 0..30 {
        let scene = generate_scene(&cfg, seed).unwrap();
        let w = cfg.width as i32;
        for t in &scene.truths {
            for (k, &v) in t.visible.iter().enumerate() {
                let (x, y) = (k as i32 % w, k as i32 / w);
                assert_eq!(v, t.rect.contains(x, y));
            }
            assert!(t.face_complete);
        }
    }
}

#[test]
fn visible_mask_is_subset_and_equal_iff_complete() {
    let cfg = SceneConfig { occluder_prob: 0.6, ..SceneConfig::default() };
    for seed in 0..60 {
        let scene = generate_scene(&cfg, seed).unwrap();
        let w = cfg.width as i32;
        for t in &scene.truths {
            let mut area = 0;
            for (k, _) in t.visible.iter().enumerate().filter(|(_, v)| **v) {
                assert!(t.rect.contains(k as i32 % w, k as i32 / w));
                area += 1;
            }
            assert_eq!(area, t.visible_area);
            assert!(area as i64 <= t.rect.area());
            assert_eq!(area as i64 == t.rect.area(), t.face_complete, "seed {seed}");
            assert_eq!(t.segments.len() as i32, 2 * (t.rect.x1 - t.rect.x0 + t.rect.y1 - t.rect.y0));
        }
    }
}

#[test]
fn adding_an_occluder_never_restores_a_face() {
    let cfg = SceneConfig { width: 128, height: 128, occluder_prob: 0.5, ..SceneConfig::default() };
    for seed in 0..200u64 {
        let layout = generate_layout(&cfg, seed).unwrap();
        let before = derive_labels(&compute_truths(&layout));
        let mut grown = layout.clone();
        let s = (seed % 100) as i32;
        grown.rects.push(PixelRect::new(s, 100 - s, s + 20, 125 - s));
        grown.styles.push(0);
        let after = derive_labels(&compute_truths(&grown));
        for (b, a) in before.iter().zip(&after) {
            let (_, was_all) = b.parts().unwrap();
            let (_, now_all) = a.parts().unwrap();
            assert!(was_all || !now_all, "seed {seed}: {b} -> {a}");
        }
    }
}

#[test]
fn default_dataset_spans_sparse_to_dense() {
    let data = generate_dataset(&SceneConfig::default(), 100, 11, SplitRule::Parity).unwrap();
    let counts: Vec<usize> = data.records.iter().map(|r| r.instances.len()).collect();
    assert!(counts.iter().any(|&c| c <= 5), "{counts:?}");
    assert!(counts.iter().any(|&c| c >= 30), "{counts:?}");
    for r in &data.records {
        assert!(validate_taxonomy(r, LabelTaxonomy::FOUR_LABEL).is_empty());
    }
}

#[test]
fn dataset_writes_pngs_and_annotations() {
    let cfg = SceneConfig { width: 64, height: 64, count_max: 6, ..SceneConfig::default() };
    let data = generate_dataset(&cfg, 3, 5, SplitRule::Ratio(0.34)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = data.write(dir.path()).unwrap();
    assert_eq!(written.len(), 5);
    let img = image::open(&written[0]).unwrap().to_rgb8();
    assert_eq!(img, data.images[0]);
    let back = scd_core::annotations::import_dataset(
        &dir.path().join("annotations.json"),
        scd_core::annotations::DatasetFormat::CocoJson,
        LabelTaxonomy::FOUR_LABEL,
    )
    .unwrap();
    assert_eq!(back, data.records);
}
