use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use scd_core::geometry::{iou, BBox, Detection};

use crate::ModelError;

/// Spearman rank correlation with average ranks for ties; `None` for fewer than two
/// points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs must align");
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// For each detection, the best IoU with a same-class ground-truth box, kept when it
/// reaches `min_iou`. Returns `(detection index, iou)` pairs.
pub fn matched_ious(dets: &[Detection], gts: &[(BBox, usize)], min_iou: f64) -> Vec<(usize, f64)> {
    dets.iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let best = gts.iter().filter(|g| g.1 == d.class_id).map(|g| iou(&d.bbox, &g.0)).fold(0.0, f64::max);
            (best >= min_iou).then_some((i, best))
        })
        .collect()
}

/// Appends one JSON object per line.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self, ModelError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Ok(MetricsLog { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), ModelError> {
        let line = serde_json::to_string(record).expect("metrics records serialize");
        writeln!(self.out, "{line}").map_err(|source| ModelError::Io { path: self.path.clone(), source })
    }

    pub fn flush(&mut self) -> Result<(), ModelError> {
        self.out.flush().map_err(|source| ModelError::Io { path: self.path.clone(), source })
    }
}
