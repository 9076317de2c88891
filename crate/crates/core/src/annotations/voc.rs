use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationError, ImageRecord, ImageSource, InstanceAnnotation, Label, LabelTaxonomy};
use crate::geometry::{BBox, Polygon};

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename = "annotation")]
struct VocAnnotation {
    folder: String,
    filename: String,
    /// Not part of stock VOC; readers fall back to file order when absent.
    #[serde(default)]
    image_id: Option<u64>,
    source: VocSource,
    size: VocSize,
    #[serde(default)]
    segmented: u8,
    #[serde(default, rename = "object")]
    objects: Vec<VocObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocSource {
    database: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocSize {
    width: u32,
    height: u32,
    depth: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocObject {
    name: String,
    #[serde(default)]
    instance_id: Option<u64>,
    #[serde(default)]
    truncated: u8,
    #[serde(default)]
    difficult: u8,
    bndbox: VocBox,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

const SYNTHETIC_DB: &str = "scd-synthetic";

pub fn write_voc_dir(records: &[ImageRecord], dir: &Path) -> Result<(), AnnotationError> {
    fs::create_dir_all(dir).map_err(|source| AnnotationError::Io { path: dir.into(), source })?;
    for r in records {
        let doc = VocAnnotation {
            folder: "SCD".into(),
            filename: r.file_name.clone(),
            image_id: Some(r.image_id),
            source: VocSource {
                database: match r.source {
                    ImageSource::Synthetic => SYNTHETIC_DB.into(),
                    ImageSource::Imported => "imported".into(),
                },
            },
            size: VocSize { width: r.width, height: r.height, depth: 3 },
            segmented: 0,
            objects: r
                .instances
                .iter()
                .map(|inst| {
                    let b = inst.bbox;
                    VocObject {
                        name: inst.label.name().into(),
                        instance_id: Some(inst.instance_id),
                        truncated: 0,
                        difficult: 0,
                        bndbox: VocBox { xmin: b.x_min, ymin: b.y_min, xmax: b.x_max, ymax: b.y_max },
                    }
                })
                .collect(),
        };
        let path = dir.join(format!("{:08}.xml", r.image_id));
        let body = quick_xml::se::to_string(&doc).map_err(|e| AnnotationError::Parse {
            file: path.clone(),
            record: Some(format!("image {}", r.image_id)),
            message: e.to_string(),
        })?;
        fs::write(&path, body).map_err(|source| AnnotationError::Io { path, source })?;
    }
    Ok(())
}

/// Reads every `*.xml` in `dir` (sorted by file name). Polygons are the box rectangles
/// and carry `bbox_only = true`.
pub fn read_voc_dir(dir: &Path, taxonomy: LabelTaxonomy) -> Result<Vec<ImageRecord>, AnnotationError> {
    let entries = fs::read_dir(dir).map_err(|source| AnnotationError::Io { path: dir.into(), source })?;
    let mut files = Vec::new();
    for e in entries {
        let e = e.map_err(|source| AnnotationError::Io { path: dir.into(), source })?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "xml") {
            files.push(p);
        }
    }
    files.sort();

    let mut records = Vec::with_capacity(files.len());
    let mut next_instance = 1u64;
    for (index, path) in files.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: path.clone(), source })?;
        let doc: VocAnnotation = quick_xml::de::from_str(&text).map_err(|e| AnnotationError::Parse {
            file: path.clone(),
            record: None,
            message: e.to_string(),
        })?;
        let image_id = doc.image_id.unwrap_or(index as u64 + 1);
        let mut instances = Vec::with_capacity(doc.objects.len());
        for (k, obj) in doc.objects.into_iter().enumerate() {
            let record = format!("object {k} of image {image_id}");
            let label = obj.name.parse::<Label>().ok().and_then(|l| taxonomy.map_label(l)).ok_or_else(|| {
                AnnotationError::Taxonomy { file: path.clone(), record: Some(record.clone()), label: obj.name.clone(), mode: taxonomy.mode }
            })?;
            let b = BBox::new(obj.bndbox.xmin, obj.bndbox.ymin, obj.bndbox.xmax, obj.bndbox.ymax);
            let polygon = super::sanitize_polygon(Polygon::rectangle(&b), doc.size.width, doc.size.height, path, record)?;
            let id = obj.instance_id.unwrap_or(next_instance);
            next_instance = next_instance.max(id) + 1;
            let mut inst = InstanceAnnotation::new(id, label, polygon);
            inst.bbox_only = true;
            instances.push(inst);
        }
        records.push(ImageRecord {
            image_id,
            file_name: doc.filename,
            width: doc.size.width,
            height: doc.size.height,
            instances,
            source: if doc.source.database == SYNTHETIC_DB { ImageSource::Synthetic } else { ImageSource::Imported },
        });
    }
    Ok(records)
}
