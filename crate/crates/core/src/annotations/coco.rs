use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sanitize_polygon, AnnotationError, ImageRecord, ImageSource, InstanceAnnotation, Label, LabelTaxonomy};
use crate::geometry::Polygon;

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    source: ImageSource,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: serde_json::Value,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    bbox_only: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    #[serde(default)]
    supercategory: String,
}

pub fn read_coco(path: &Path, taxonomy: LabelTaxonomy) -> Result<Vec<ImageRecord>, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: path.into(), source })?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| AnnotationError::Parse {
        file: path.into(),
        record: None,
        message: e.to_string(),
    })?;

    let mut categories = HashMap::new();
    for c in &file.categories {
        categories.insert(c.id, c.name.as_str());
    }

    let mut records: Vec<ImageRecord> = Vec::with_capacity(file.images.len());
    let mut by_id = HashMap::new();
    for img in file.images {
        if by_id.insert(img.id, records.len()).is_some() {
            return Err(AnnotationError::Parse {
                file: path.into(),
                record: Some(format!("image {}", img.id)),
                message: "duplicate image id".into(),
            });
        }
        records.push(ImageRecord {
            image_id: img.id,
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            instances: Vec::new(),
            source: img.source,
        });
    }

    for ann in file.annotations {
        let record_name = format!("annotation {}", ann.id);
        let parse_err = |message: String| AnnotationError::Parse {
            file: path.into(),
            record: Some(record_name.clone()),
            message,
        };
        let &slot = by_id.get(&ann.image_id).ok_or_else(|| parse_err(format!("unknown image id {}", ann.image_id)))?;
        let name = *categories.get(&ann.category_id).ok_or_else(|| parse_err(format!("unknown category id {}", ann.category_id)))?;
        let label = name.parse::<Label>().ok().and_then(|l| taxonomy.map_label(l)).ok_or_else(|| AnnotationError::Taxonomy {
            file: path.into(),
            record: Some(record_name.clone()),
            label: name.to_string(),
            mode: taxonomy.mode,
        })?;
        let rings: Vec<Vec<f64>> = serde_json::from_value(ann.segmentation)
            .map_err(|_| parse_err("segmentation must be a list of polygon coordinate lists".into()))?;
        let [ring] = <[Vec<f64>; 1]>::try_from(rings)
            .map_err(|r| parse_err(format!("expected exactly one polygon, found {}", r.len())))?;
        let polygon = Polygon::from_flat(&ring).ok_or_else(|| parse_err("odd number of polygon coordinates".into()))?;
        let rec = &mut records[slot];
        let polygon = sanitize_polygon(polygon, rec.width, rec.height, path, record_name.clone())?;
        let mut inst = InstanceAnnotation::new(ann.id, label, polygon);
        inst.bbox_only = ann.bbox_only;
        rec.instances.push(inst);
    }
    Ok(records)
}

pub fn write_coco(records: &[ImageRecord], path: &Path) -> Result<(), AnnotationError> {
    let taxonomy = LabelTaxonomy::infer(records);
    let categories = taxonomy
        .labels()
        .iter()
        .map(|&l| CocoCategory { id: taxonomy.category_id(l).unwrap_or(0), name: l.name().into(), supercategory: "carton".into() })
        .collect();
    let mut images = Vec::with_capacity(records.len());
    let mut annotations = Vec::new();
    for r in records {
        images.push(CocoImage {
            id: r.image_id,
            file_name: r.file_name.clone(),
            width: r.width,
            height: r.height,
            source: r.source,
        });
        for inst in &r.instances {
            let category_id = taxonomy.category_id(inst.label).ok_or_else(|| AnnotationError::Taxonomy {
                file: path.into(),
                record: Some(format!("instance {}", inst.instance_id)),
                label: inst.label.name().into(),
                mode: taxonomy.mode,
            })?;
            annotations.push(CocoAnnotation {
                id: inst.instance_id,
                image_id: r.image_id,
                category_id,
                segmentation: serde_json::json!([inst.polygon.to_flat()]),
                bbox: Some(inst.bbox.to_xywh()),
                area: Some(inst.polygon.area()),
                iscrowd: 0,
                bbox_only: inst.bbox_only,
            });
        }
    }
    let file = CocoFile { images, annotations, categories };
    let text = serde_json::to_string_pretty(&file).expect("COCO structures always serialize");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| AnnotationError::Io { path: parent.into(), source })?;
    }
    fs::write(path, text).map_err(|source| AnnotationError::Io { path: path.into(), source })
}
