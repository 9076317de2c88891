use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationError, ImageRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        let edges = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
        Histogram { edges, counts: vec![0; bins] }
    }

    /// Adds `v` to its bin; values outside the range land in the end bins.
    fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        let idx = (((v - lo) / (hi - lo)) * bins as f64).floor();
        self.counts[(idx.max(0.0) as usize).min(bins - 1)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Log aspect ratios use an odd bin count centered on 0 and bin by magnitude, so
/// swapping every box's width and height mirrors the histogram exactly.
const ASPECT_HALF_RANGE: f64 = 3.0;
const ASPECT_BINS: usize = 25;
const UNIT_BINS: usize = 20;
const COUNT_BUCKET: usize = 10;

fn aspect_histogram(values: &[f64]) -> Histogram {
    let mut h = Histogram::uniform(-ASPECT_HALF_RANGE, ASPECT_HALF_RANGE, ASPECT_BINS);
    let center = ASPECT_BINS / 2;
    let width = 2.0 * ASPECT_HALF_RANGE / ASPECT_BINS as f64;
    for &v in values {
        let k = ((v.abs() + 0.5 * width) / width).floor() as usize;
        let k = k.min(center);
        let idx = if v >= 0.0 { center + k } else { center - k };
        h.counts[idx] += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelCount {
    pub images: u64,
    pub instances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatistics {
    /// `width`, `height`, `aspect` (log), `area`, and `instances_per_image`.
    pub histograms: BTreeMap<String, Histogram>,
    pub label_counts: BTreeMap<String, LabelCount>,
    pub degenerate: u64,
    pub num_images: u64,
    pub num_instances: u64,
    /// Raw per-instance values behind the histograms.
    #[serde(skip)]
    pub width_norm: Vec<f64>,
    #[serde(skip)]
    pub height_norm: Vec<f64>,
    #[serde(skip)]
    pub log_aspect: Vec<f64>,
    #[serde(skip)]
    pub area_norm: Vec<f64>,
}

impl DatasetStatistics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("statistics always serialize")
    }
}

/// Box size statistics normalized by image size, plus instance and label counts.
/// Zero-size boxes are skipped and tallied in `degenerate`.
pub fn compute_statistics(records: &[ImageRecord]) -> Result<DatasetStatistics, AnnotationError> {
    if records.is_empty() {
        return Err(AnnotationError::Empty);
    }
    let mut width_norm = Vec::new();
    let mut height_norm = Vec::new();
    let mut log_aspect = Vec::new();
    let mut area_norm = Vec::new();
    let mut degenerate = 0;
    let mut label_counts: BTreeMap<String, LabelCount> = BTreeMap::new();
    let mut per_image = Vec::with_capacity(records.len());

    for r in records {
        let (iw, ih) = (r.width as f64, r.height as f64);
        let mut labels_here = BTreeSet::new();
        for inst in &r.instances {
            labels_here.insert(inst.label.name());
            label_counts.entry(inst.label.name().into()).or_default().instances += 1;
            let (w, h) = (inst.bbox.width(), inst.bbox.height());
            if !(w > 0.0 && h > 0.0) || iw <= 0.0 || ih <= 0.0 {
                degenerate += 1;
                continue;
            }
            width_norm.push((w / iw).clamp(0.0, 1.0));
            height_norm.push((h / ih).clamp(0.0, 1.0));
            log_aspect.push((w / h).ln());
            area_norm.push((w * h / (iw * ih)).clamp(0.0, 1.0));
        }
        for name in labels_here {
            label_counts.entry(name.into()).or_default().images += 1;
        }
        per_image.push(r.instances.len());
    }

    let mut histograms = BTreeMap::new();
    for (name, values) in [("width", &width_norm), ("height", &height_norm), ("area", &area_norm)] {
        let mut h = Histogram::uniform(0.0, 1.0, UNIT_BINS);
        values.iter().for_each(|&v| h.add(v));
        histograms.insert(name.to_string(), h);
    }
    histograms.insert("aspect".into(), aspect_histogram(&log_aspect));

    let max_count = per_image.iter().copied().max().unwrap_or(0);
    let buckets = max_count / COUNT_BUCKET + 1;
    let mut counts = Histogram {
        edges: (0..=buckets).map(|i| (i * COUNT_BUCKET) as f64).collect(),
        counts: vec![0; buckets],
    };
    per_image.iter().for_each(|&c| counts.counts[c / COUNT_BUCKET] += 1);
    histograms.insert("instances_per_image".into(), counts);

    Ok(DatasetStatistics {
        histograms,
        label_counts,
        degenerate,
        num_images: records.len() as u64,
        num_instances: per_image.iter().sum::<usize>() as u64,
        width_norm,
        height_norm,
        log_aspect,
        area_norm,
    })
}
