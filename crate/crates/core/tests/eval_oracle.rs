use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd_core::annotations::{ImageRecord, ImageSource, InstanceAnnotation, LabelTaxonomy};
use scd_core::eval::{evaluate, ApTable, ImageDetections};
use scd_core::geometry::{nms, BBox, Detection, Polygon};

use scd_oracles::{ap_table, random_problem as random_instance, EvalProblem as Instance, Rect};

fn taxonomy(inst: &Instance) -> LabelTaxonomy {
    if inst.classes == 1 { LabelTaxonomy::ONE_LABEL } else { LabelTaxonomy::FOUR_LABEL }
}

fn to_bbox(r: &Rect) -> BBox {
    BBox::new(r[0], r[1], r[2], r[3])
}

fn to_records(inst: &Instance) -> (Vec<ImageRecord>, Vec<ImageDetections>) {
    let tax = taxonomy(inst);
    let mut records = Vec::new();
    let mut dets = Vec::new();
    for (i, (gts, ds)) in inst.images.iter().enumerate() {
        let id = i as u64 + 1;
        records.push(ImageRecord {
            image_id: id,
            file_name: format!("{id}.png"),
            width: 512,
            height: 512,
            instances: gts
                .iter()
                .enumerate()
                .map(|(k, (r, c))| {
                    InstanceAnnotation::new(k as u64, tax.label_of_class(*c).unwrap(), Polygon::rectangle(&to_bbox(r)))
                })
                .collect(),
            source: ImageSource::Synthetic,
        });
        dets.push(ImageDetections {
            image_id: id,
            detections: ds.iter().map(|(r, c, s)| Detection::with_score(to_bbox(r), *c, *s)).collect(),
        });
    }
    (records, dets)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-6,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn evaluator_matches_brute_force_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let inst = random_instance(&mut rng);
        let (records, dets) = to_records(&inst);
        let table = evaluate(&dets, &records, taxonomy(&inst)).unwrap();
        let want = ap_table(&inst);
        for (t, (a, b)) in table.ap.iter().zip(&want.per_threshold).enumerate() {
            assert!(close(*a, *b), "trial {trial} threshold {t}: {a:?} vs {b:?}");
        }
        assert!(close(table.map, want.map), "trial {trial} mAP");
        assert!(close(table.ap_small, want.small), "trial {trial} small {:?} {:?}", table.ap_small, want.small);
        assert!(close(table.ap_medium, want.medium), "trial {trial} medium");
        assert!(close(table.ap_large, want.large), "trial {trial} large");
    }
}

fn transformed(dets: &[ImageDetections], f: impl Fn(f64) -> f64) -> Vec<ImageDetections> {
    dets.iter()
        .map(|img| ImageDetections {
            image_id: img.image_id,
            detections: img.detections.iter().map(|d| Detection { score: f(d.score), ..*d }).collect(),
        })
        .collect()
}

fn same_table(a: &ApTable, b: &ApTable) -> bool {
    a == b
}

#[test]
fn ap_table_is_invariant_to_monotone_score_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100 {
        let inst = random_instance(&mut rng);
        let (records, dets) = to_records(&inst);
        let base = evaluate(&dets, &records, taxonomy(&inst)).unwrap();
        let k = rng.random_range(0.5..4.0);
        let shifted = transformed(&dets, |s| (k * s).exp() - 3.0);
        let squashed = transformed(&dets, |s| s / (1.0 + s));
        assert!(same_table(&base, &evaluate(&shifted, &records, taxonomy(&inst)).unwrap()), "trial {trial}");
        assert!(same_table(&base, &evaluate(&squashed, &records, taxonomy(&inst)).unwrap()), "trial {trial}");
    }
}

#[test]
fn nms_kept_set_is_invariant_to_monotone_score_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for trial in 0..100 {
        let inst = random_instance(&mut rng);
        let (_, dets) = to_records(&inst);
        let all: Vec<Detection> = dets.iter().flat_map(|d| d.detections.clone()).collect();
        let thr = rng.random_range(0.3..0.7);
        let kept = nms(&all, |d| d.score, thr);
        let kept_t = nms(&all, |d| (3.0 * d.score).exp() + 0.25, thr);
        assert_eq!(kept, kept_t, "trial {trial}");
    }
}

#[test]
fn duplicate_lower_detection_never_raises_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    for trial in 0..100 {
        let inst = random_instance(&mut rng);
        let (records, mut dets) = to_records(&inst);
        let base = evaluate(&dets, &records, taxonomy(&inst)).unwrap();
        let Some(img) = dets.iter_mut().find(|d| !d.detections.is_empty()) else { continue };
        let mut dup = img.detections[0];
        dup.score *= 0.5;
        img.detections.push(dup);
        let after = evaluate(&dets, &records, taxonomy(&inst)).unwrap();
        for (a, b) in after.ap.iter().zip(&base.ap) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(*a <= *b + 1e-12, "trial {trial}: {a} > {b}");
            }
        }
    }
}
