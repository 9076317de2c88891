//! COCO-style box AP: ten IoU thresholds, 101-point interpolated precision, size buckets.

mod results;

pub use results::{read_results, write_results, ResultEntry};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ImageRecord, LabelTaxonomy};
use crate::geometry::{iou, BBox, Detection};

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
pub const RECALL_POINTS: usize = 101;
pub const MAX_DETECTIONS: usize = 100;
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const LARGE_AREA: f64 = 96.0 * 96.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detections reference unknown image id {0}")]
    UnknownImage(u64),
    #[error("detection class {class} is outside the {num_classes}-class taxonomy")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("ground truth label {label} in image {image_id} is not in the taxonomy")]
    UnknownLabel { image_id: u64, label: String },
    #[error("non-finite score {score} in image {image_id}")]
    NonFiniteScore { image_id: u64, score: f64 },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

/// Ground-truth area bucket; bounds are on box area in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < SMALL_AREA,
            AreaRange::Medium => (SMALL_AREA..=LARGE_AREA).contains(&area),
            AreaRange::Large => area > LARGE_AREA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// Aligned with the input detections.
    pub det_tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

/// Greedy matching of one image and class at one threshold.
///
/// Detections are visited by descending score (ties keep input order); each takes the
/// unmatched gt with the highest IoU at or above `iou_threshold`.
pub fn match_detections(dets: &[(BBox, f64)], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let ignore = vec![false; gts.len()];
    let m = match_with_ignore(dets, gts, &ignore, iou_threshold);
    MatchResult { det_tp: m.det_gt.iter().map(Option::is_some).collect(), gt_matched: m.gt_matched }
}

struct IgnoreMatch {
    det_gt: Vec<Option<usize>>,
    gt_matched: Vec<bool>,
}

/// Matching where non-ignored gts are preferred: once a regular gt is matched,
/// ignored ones are not considered for the same detection.
fn match_with_ignore(dets: &[(BBox, f64)], gts: &[BBox], gt_ignore: &[bool], thr: f64) -> IgnoreMatch {
    let mut det_order: Vec<usize> = (0..dets.len()).collect();
    det_order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignore[g]);

    let thr = thr.min(1.0 - 1e-10);
    let mut det_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for d in det_order {
        let mut best: Option<usize> = None;
        let mut best_iou = thr;
        for &g in &gt_order {
            if gt_matched[g] {
                continue;
            }
            if let Some(b) = best {
                if !gt_ignore[b] && gt_ignore[g] {
                    break;
                }
            }
            let v = iou(&dets[d].0, &gts[g]);
            if v < best_iou {
                continue;
            }
            best_iou = v;
            best = Some(g);
        }
        if let Some(g) = best {
            gt_matched[g] = true;
            det_gt[d] = Some(g);
        }
    }
    IgnoreMatch { det_gt, gt_matched }
}

/// Interpolated AP over 101 recall points; `None` when there is no ground truth.
pub fn average_precision(tp: &[bool], scores: &[f64], n_gt: usize) -> Option<f64> {
    assert_eq!(tp.len(), scores.len(), "flags and scores must align");
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut ctp, mut cfp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for i in order {
        if tp[i] {
            ctp += 1;
        } else {
            cfp += 1;
        }
        recall.push(ctp as f64 / n_gt as f64);
        precision.push(ctp as f64 / (ctp + cfp) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

/// Detections of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub label: String,
    pub num_gt: usize,
    /// One entry per IoU threshold.
    pub ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub iou_thresholds: Vec<f64>,
    /// Mean over classes at each threshold, all sizes.
    pub ap: Vec<Option<f64>>,
    pub map: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub per_class: Vec<ClassAp>,
}

impl ApTable {
    /// AP at a threshold from the evaluated set, matched to 1e-9.
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        let i = self.iou_thresholds.iter().position(|t| (t - threshold).abs() < 1e-9)?;
        self.ap[i]
    }

    pub fn ap50(&self) -> Option<f64> {
        self.ap_at(0.5)
    }

    pub fn ap75(&self) -> Option<f64> {
        self.ap_at(0.75)
    }

    pub const COLUMNS: [&'static str; 10] = ["mAP", "AP50", "AP60", "AP70", "AP75", "AP80", "AP90", "AP_S", "AP_M", "AP_L"];

    /// Values in the order of `COLUMNS`.
    pub fn row(&self) -> [Option<f64>; 10] {
        [
            self.map,
            self.ap_at(0.5),
            self.ap_at(0.6),
            self.ap_at(0.7),
            self.ap_at(0.75),
            self.ap_at(0.8),
            self.ap_at(0.9),
            self.ap_small,
            self.ap_medium,
            self.ap_large,
        ]
    }

    /// Aligned table of percentages; absent values print as `-`.
    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        for c in Self::COLUMNS {
            let _ = write!(s, "{c:>7}");
        }
        s.push('\n');
        for v in self.row() {
            match v {
                Some(v) => {
                    let _ = write!(s, "{:>7.1}", 100.0 * v);
                }
                None => {
                    let _ = write!(s, "{:>7}", "-");
                }
            }
        }
        s.push('\n');
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ApTable always serializes")
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per (class, area range, threshold) AP over the whole dataset.
fn class_ap(
    per_image: &[(Vec<(BBox, f64)>, Vec<BBox>)],
    area: AreaRange,
    thr: f64,
) -> Option<f64> {
    let mut tp = Vec::new();
    let mut scores = Vec::new();
    let mut n_gt = 0;
    for (dets, gts) in per_image {
        let ignore: Vec<bool> = gts.iter().map(|g| !area.contains(g.area())).collect();
        n_gt += ignore.iter().filter(|&&i| !i).count();
        let m = match_with_ignore(dets, gts, &ignore, thr);
        for (d, g) in dets.iter().zip(&m.det_gt) {
            let skip = match g {
                Some(g) => ignore[*g],
                None => !area.contains(d.0.area()),
            };
            if !skip {
                tp.push(g.is_some());
                scores.push(d.1);
            }
        }
    }
    average_precision(&tp, &scores, n_gt)
}

/// Evaluates detections against records.
///
/// Each image keeps its `MAX_DETECTIONS` best detections per class. Classes without any
/// ground truth in a bucket are left out of that bucket's mean.
pub fn evaluate(
    detections: &[ImageDetections],
    records: &[ImageRecord],
    taxonomy: LabelTaxonomy,
) -> Result<ApTable, EvalError> {
    let k = taxonomy.num_classes();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        index.insert(r.image_id, i);
    }
    // data[class][image] = (dets, gts)
    let mut data: Vec<Vec<(Vec<(BBox, f64)>, Vec<BBox>)>> = vec![vec![(Vec::new(), Vec::new()); records.len()]; k];
    for (i, r) in records.iter().enumerate() {
        for inst in &r.instances {
            let class = taxonomy
                .map_label(inst.label)
                .and_then(|l| taxonomy.class_index(l))
                .ok_or_else(|| EvalError::UnknownLabel { image_id: r.image_id, label: inst.label.to_string() })?;
            data[class][i].1.push(inst.bbox);
        }
    }
    for img in detections {
        let &i = index.get(&img.image_id).ok_or(EvalError::UnknownImage(img.image_id))?;
        for d in &img.detections {
            if d.class_id >= k {
                return Err(EvalError::UnknownClass { class: d.class_id, num_classes: k });
            }
            if !d.score.is_finite() {
                return Err(EvalError::NonFiniteScore { image_id: img.image_id, score: d.score });
            }
            data[d.class_id][i].0.push((d.bbox, d.score));
        }
    }
    for per_class in &mut data {
        for (dets, _) in per_class.iter_mut() {
            dets.sort_by(|a, b| b.1.total_cmp(&a.1));
            dets.truncate(MAX_DETECTIONS);
        }
    }

    let grid = |area: AreaRange| -> Vec<Vec<Option<f64>>> {
        data.iter().map(|per_image| IOU_THRESHOLDS.iter().map(|&t| class_ap(per_image, area, t)).collect()).collect()
    };
    let all = grid(AreaRange::All);
    let bucket = |area: AreaRange| mean(grid(area).into_iter().flatten());

    let ap: Vec<Option<f64>> = (0..IOU_THRESHOLDS.len()).map(|t| mean(all.iter().map(|c| c[t]))).collect();
    let per_class = all
        .iter()
        .enumerate()
        .map(|(c, aps)| ClassAp {
            class_id: c,
            label: taxonomy.label_of_class(c).map(|l| l.to_string()).unwrap_or_default(),
            num_gt: data[c].iter().map(|(_, g)| g.len()).sum(),
            ap: aps.clone(),
        })
        .collect();
    Ok(ApTable {
        iou_thresholds: IOU_THRESHOLDS.to_vec(),
        map: mean(ap.iter().copied()),
        ap,
        ap_small: bucket(AreaRange::Small),
        ap_medium: bucket(AreaRange::Medium),
        ap_large: bucket(AreaRange::Large),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ImageSource, InstanceAnnotation, Label};
    use crate::geometry::Polygon;

    fn record(id: u64, boxes: &[BBox]) -> ImageRecord {
        ImageRecord {
            image_id: id,
            file_name: format!("{id}.png"),
            width: 512,
            height: 512,
            instances: boxes
                .iter()
                .enumerate()
                .map(|(k, b)| InstanceAnnotation::new(k as u64 + 1, Label::Carton, Polygon::rectangle(b)))
                .collect(),
            source: ImageSource::Synthetic,
        }
    }

    fn dets(id: u64, d: &[(BBox, f64)]) -> ImageDetections {
        ImageDetections { image_id: id, detections: d.iter().map(|&(b, s)| Detection::with_score(b, 0, s)).collect() }
    }

    #[test]
    fn exact_detection_is_tp_everywhere() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        for t in IOU_THRESHOLDS {
            let m = match_detections(&[(g, 0.9)], &[g], t);
            assert_eq!(m.det_tp, vec![true]);
            assert_eq!(m.gt_matched, vec![true]);
        }
    }

    #[test]
    fn second_detection_on_same_gt_is_fp() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let m = match_detections(&[(g, 0.3), (g, 0.9)], &[g], 0.5);
        assert_eq!(m.det_tp, vec![false, true]);
    }

    #[test]
    fn iou_055_detection() {
        let g = BBox::new(0.0, 0.0, 100.0, 100.0);
        let d = BBox::new(0.0, 0.0, 100.0, 55.0);
        assert!((iou(&d, &g) - 0.55).abs() < 1e-12);
        for t in IOU_THRESHOLDS {
            assert_eq!(match_detections(&[(d, 1.0)], &[g], t).det_tp[0], t <= 0.55 + 1e-12, "{t}");
        }
        let table = evaluate(&[dets(1, &[(d, 1.0)])], &[record(1, &[g])], LabelTaxonomy::ONE_LABEL).unwrap();
        assert!((table.map.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ap_edge_cases() {
        assert_eq!(average_precision(&[true], &[0.5], 1), Some(1.0));
        assert_eq!(average_precision(&[], &[], 3), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0), None);
        assert_eq!(average_precision(&[false], &[0.5], 0), None);
    }

    #[test]
    fn tp_fp_tp_case() {
        // recall 0.5 at precision 1, recall 1 at precision 2/3
        let ap = average_precision(&[true, false, true], &[0.9, 0.8, 0.7], 2).unwrap();
        let want = (51.0 * 1.0 + 50.0 * 2.0 / 3.0) / 101.0;
        assert!((ap - want).abs() < 1e-12);
    }

    #[test]
    fn exact_detections_give_perfect_table() {
        let gts = [BBox::new(10.0, 10.0, 20.0, 20.0), BBox::new(100.0, 100.0, 160.0, 150.0), BBox::new(0.0, 200.0, 300.0, 400.0)];
        let table = evaluate(&[dets(1, &gts.map(|g| (g, 1.0)))], &[record(1, &gts)], LabelTaxonomy::ONE_LABEL).unwrap();
        for v in table.row() {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn large_only_dataset_has_no_small_ap() {
        let g = BBox::new(0.0, 0.0, 200.0, 200.0);
        let table = evaluate(&[dets(1, &[(g, 0.7)])], &[record(1, &[g])], LabelTaxonomy::ONE_LABEL).unwrap();
        assert_eq!(table.ap_small, None);
        assert_eq!(table.ap_medium, None);
        assert_eq!(table.ap_large, Some(1.0));
        let text = table.to_text_table();
        assert!(text.contains("  100.0") && text.contains("      -"), "{text}");
    }

    #[test]
    fn bucket_edges() {
        assert!(AreaRange::Small.contains(1023.0) && !AreaRange::Small.contains(1024.0));
        assert!(AreaRange::Medium.contains(1024.0) && AreaRange::Medium.contains(9216.0));
        assert!(AreaRange::Large.contains(9216.5) && !AreaRange::Large.contains(9216.0));
    }

    #[test]
    fn unknown_image_is_an_error() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let err = evaluate(&[dets(9, &[(g, 1.0)])], &[record(1, &[g])], LabelTaxonomy::ONE_LABEL).unwrap_err();
        assert!(matches!(err, EvalError::UnknownImage(9)));
    }

    #[test]
    fn absent_class_is_skipped() {
        let g = BBox::new(0.0, 0.0, 50.0, 50.0);
        let mut rec = record(1, &[g]);
        rec.instances[0].label = Label::CartonInnerAll;
        let table = evaluate(&[dets(1, &[(g, 1.0)])], &[rec], LabelTaxonomy::FOUR_LABEL).unwrap();
        assert_eq!(table.map, Some(1.0));
        assert_eq!(table.per_class.iter().filter(|c| c.ap[0].is_none()).count(), 3);
    }
}
