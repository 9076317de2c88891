use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, ImageDetections};
use crate::annotations::LabelTaxonomy;
use crate::geometry::{BBox, Detection};

/// One line of a COCO results file. `bbox` is `[x, y, w, h]`; `category_id` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

pub fn write_results(detections: &[ImageDetections], path: &Path) -> Result<(), EvalError> {
    let entries: Vec<ResultEntry> = detections
        .iter()
        .flat_map(|img| {
            img.detections.iter().map(|d| ResultEntry {
                image_id: img.image_id,
                category_id: d.class_id as u64 + 1,
                bbox: d.bbox.to_xywh(),
                score: d.score,
            })
        })
        .collect();
    let text = serde_json::to_string(&entries).expect("results always serialize");
    fs::write(path, text).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

/// Reads a results file, grouping entries by image id in ascending order.
pub fn read_results(path: &Path, taxonomy: LabelTaxonomy) -> Result<Vec<ImageDetections>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let entries: Vec<ResultEntry> =
        serde_json::from_str(&text).map_err(|e| EvalError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let mut grouped: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for (k, e) in entries.iter().enumerate() {
        let class = e.category_id.checked_sub(1).map(|c| c as usize).filter(|&c| c < taxonomy.num_classes());
        let Some(class) = class else {
            return Err(EvalError::Parse {
                path: path.to_path_buf(),
                message: format!("entry {k}: category_id {} is not in the taxonomy", e.category_id),
            });
        };
        let [x, y, w, h] = e.bbox;
        let bbox = BBox::from_xywh(x, y, w, h);
        grouped.entry(e.image_id).or_default().push(Detection::with_score(bbox, class, e.score));
    }
    Ok(grouped.into_iter().map(|(image_id, detections)| ImageDetections { image_id, detections }).collect())
}
