//! Carton instances, the label taxonomy, and dataset interchange.
//!
//! COCO JSON keeps full polygons. VOC XML only has boxes, so polygons exported to VOC
//! come back as rectangles flagged with `bbox_only`.

mod coco;
mod stats;
mod voc;

pub use coco::{read_coco, write_coco};
pub use stats::{compute_statistics, DatasetStatistics, Histogram, LabelCount};
pub use voc::{read_voc_dir, write_voc_dir};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Polygon};

/// Smallest polygon area accepted, in square pixels.
pub const MIN_POLYGON_AREA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{}: cannot parse{}: {message}", file.display(), fmt_record(record))]
    Parse { file: PathBuf, record: Option<String>, message: String },
    #[error("{}: label `{label}` is not part of the {mode} taxonomy{}", file.display(), fmt_record(record))]
    Taxonomy { file: PathBuf, record: Option<String>, label: String, mode: TaxonomyMode },
    #[error("{}: invalid instance{}: {message}", file.display(), fmt_record(record))]
    Validation { file: PathBuf, record: Option<String>, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("statistics need at least one record")]
    Empty,
}

fn fmt_record(record: &Option<String>) -> String {
    record.as_ref().map(|r| format!(" ({r})")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "Carton-inner-all")]
    CartonInnerAll,
    #[serde(rename = "Carton-inner-occlusion")]
    CartonInnerOcclusion,
    #[serde(rename = "Carton-outer-all")]
    CartonOuterAll,
    #[serde(rename = "Carton-outer-occlusion")]
    CartonOuterOcclusion,
    #[serde(rename = "Carton")]
    Carton,
}

impl Label {
    pub const FOUR: [Label; 4] =
        [Label::CartonInnerAll, Label::CartonInnerOcclusion, Label::CartonOuterAll, Label::CartonOuterOcclusion];

    /// `inner`: every contour segment touches another carton or the image edge.
    /// `all`: at least one complete face is visible.
    pub fn from_parts(inner: bool, all: bool) -> Label {
        match (inner, all) {
            (true, true) => Label::CartonInnerAll,
            (true, false) => Label::CartonInnerOcclusion,
            (false, true) => Label::CartonOuterAll,
            (false, false) => Label::CartonOuterOcclusion,
        }
    }

    /// `(inner, all)` for four-label members.
    pub fn parts(self) -> Option<(bool, bool)> {
        match self {
            Label::CartonInnerAll => Some((true, true)),
            Label::CartonInnerOcclusion => Some((true, false)),
            Label::CartonOuterAll => Some((false, true)),
            Label::CartonOuterOcclusion => Some((false, false)),
            Label::Carton => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::CartonInnerAll => "Carton-inner-all",
            Label::CartonInnerOcclusion => "Carton-inner-occlusion",
            Label::CartonOuterAll => "Carton-outer-all",
            Label::CartonOuterOcclusion => "Carton-outer-occlusion",
            Label::Carton => "Carton",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::FOUR
            .iter()
            .chain(std::iter::once(&Label::Carton))
            .find(|l| l.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyMode {
    #[default]
    FourLabel,
    OneLabel,
}

impl fmt::Display for TaxonomyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaxonomyMode::FourLabel => "four_label",
            TaxonomyMode::OneLabel => "one_label",
        })
    }
}

/// The active label set: four inner/outer × all/occlusion labels, or the single `Carton`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct LabelTaxonomy {
    pub mode: TaxonomyMode,
}

impl LabelTaxonomy {
    pub const FOUR_LABEL: LabelTaxonomy = LabelTaxonomy { mode: TaxonomyMode::FourLabel };
    pub const ONE_LABEL: LabelTaxonomy = LabelTaxonomy { mode: TaxonomyMode::OneLabel };

    pub fn labels(&self) -> &'static [Label] {
        match self.mode {
            TaxonomyMode::FourLabel => &Label::FOUR,
            TaxonomyMode::OneLabel => &[Label::Carton],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels().len()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.labels().contains(&label)
    }

    /// Maps any known label into this taxonomy; four-label names collapse to `Carton`.
    pub fn map_label(&self, label: Label) -> Option<Label> {
        match self.mode {
            TaxonomyMode::OneLabel => Some(Label::Carton),
            TaxonomyMode::FourLabel => self.contains(label).then_some(label),
        }
    }

    /// Zero-based detector class index.
    pub fn class_index(&self, label: Label) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    pub fn label_of_class(&self, class: usize) -> Option<Label> {
        self.labels().get(class).copied()
    }

    /// COCO category ids start at 1.
    pub fn category_id(&self, label: Label) -> Option<u64> {
        self.class_index(label).map(|i| i as u64 + 1)
    }

    /// The taxonomy a set of records is written in: one-label when every label is `Carton`.
    pub fn infer(records: &[ImageRecord]) -> LabelTaxonomy {
        let mut labels = records.iter().flat_map(|r| r.instances.iter().map(|i| i.label)).peekable();
        if labels.peek().is_some() && labels.all(|l| l == Label::Carton) {
            LabelTaxonomy::ONE_LABEL
        } else {
            LabelTaxonomy::FOUR_LABEL
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub instance_id: u64,
    pub label: Label,
    pub polygon: Polygon,
    pub bbox: BBox,
    /// Polygon was reconstructed from a box (VOC import).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bbox_only: bool,
}

impl InstanceAnnotation {
    /// Builds an instance whose box is the polygon's hull.
    pub fn new(instance_id: u64, label: Label, polygon: Polygon) -> Self {
        let bbox = polygon.bbox();
        InstanceAnnotation { instance_id, label, polygon, bbox, bbox_only: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Synthetic,
    #[default]
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceAnnotation>,
    pub source: ImageSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CocoJson,
    VocXml,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco_json" | "coco" => Ok(DatasetFormat::CocoJson),
            "voc_xml" | "voc" => Ok(DatasetFormat::VocXml),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

/// Reads a COCO file or a directory of VOC XML files, mapping labels into `taxonomy`.
///
/// Records come back sorted by `image_id`; every box is recomputed from its polygon.
pub fn import_dataset(
    path: &Path,
    format: DatasetFormat,
    taxonomy: LabelTaxonomy,
) -> Result<Vec<ImageRecord>, AnnotationError> {
    let mut records = match format {
        DatasetFormat::CocoJson => read_coco(path, taxonomy)?,
        DatasetFormat::VocXml => read_voc_dir(path, taxonomy)?,
    };
    records.sort_by_key(|r| r.image_id);
    Ok(records)
}

/// Writes records as one COCO file, or as one VOC XML per image into directory `path`.
pub fn export_dataset(records: &[ImageRecord], format: DatasetFormat, path: &Path) -> Result<(), AnnotationError> {
    match format {
        DatasetFormat::CocoJson => write_coco(records, path),
        DatasetFormat::VocXml => write_voc_dir(records, path),
    }
}

/// Shared import-time checks: vertex count, simplicity, minimum area, then clipping to
/// the image when the polygon leaves it.
pub(crate) fn sanitize_polygon(
    polygon: Polygon,
    width: u32,
    height: u32,
    file: &Path,
    record: String,
) -> Result<Polygon, AnnotationError> {
    let fail = |message: String| AnnotationError::Validation { file: file.to_path_buf(), record: Some(record.clone()), message };
    if polygon.len() < 3 {
        return Err(fail(format!("polygon has {} vertices, need at least 3", polygon.len())));
    }
    if polygon.vertices.iter().flatten().any(|v| !v.is_finite()) {
        return Err(fail("polygon has non-finite coordinates".into()));
    }
    if !polygon.is_simple() {
        return Err(fail("polygon self-intersects".into()));
    }
    let (w, h) = (width as f64, height as f64);
    let polygon = if polygon.within(w, h) { polygon } else { polygon.clip_to(w, h) };
    if polygon.len() < 3 || polygon.area() < MIN_POLYGON_AREA {
        return Err(fail(format!("polygon area {:.3} is below {MIN_POLYGON_AREA} px²", polygon.area())));
    }
    Ok(polygon)
}

/// Maps every label to `Carton`. Already collapsed input is returned unchanged.
pub fn collapse_labels(records: &[ImageRecord]) -> Vec<ImageRecord> {
    let already = records.iter().flat_map(|r| &r.instances).all(|i| i.label == Label::Carton);
    if already {
        log::warn!("collapse_labels: records are already in one-label mode");
    }
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for inst in &mut r.instances {
                inst.label = Label::Carton;
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InvalidImageSize { width: u32, height: u32 },
    UnknownLabel { instance_id: u64, label: Label },
    DegeneratePolygon { instance_id: u64, reason: String },
    BBoxMismatch { instance_id: u64 },
    OutOfBounds { instance_id: u64 },
    DuplicateInstanceId { instance_id: u64 },
}

/// Schema-level checks of one record against `taxonomy`. An empty list means valid.
pub fn validate_taxonomy(record: &ImageRecord, taxonomy: LabelTaxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.width == 0 || record.height == 0 {
        out.push(Violation::InvalidImageSize { width: record.width, height: record.height });
    }
    let mut seen = HashSet::new();
    for inst in &record.instances {
        let id = inst.instance_id;
        if !seen.insert(id) {
            out.push(Violation::DuplicateInstanceId { instance_id: id });
        }
        if !taxonomy.contains(inst.label) {
            out.push(Violation::UnknownLabel { instance_id: id, label: inst.label });
        }
        let p = &inst.polygon;
        if p.len() < 3 {
            out.push(Violation::DegeneratePolygon { instance_id: id, reason: format!("{} vertices", p.len()) });
        } else if !p.is_simple() {
            out.push(Violation::DegeneratePolygon { instance_id: id, reason: "self-intersecting".into() });
        } else if p.area() < MIN_POLYGON_AREA {
            out.push(Violation::DegeneratePolygon { instance_id: id, reason: format!("area {}", p.area()) });
        }
        if p.len() > 0 && p.bbox() != inst.bbox {
            out.push(Violation::BBoxMismatch { instance_id: id });
        }
        if !p.within(record.width as f64, record.height as f64) {
            out.push(Violation::OutOfBounds { instance_id: id });
        }
    }
    out
}
