use std::path::PathBuf;

use scd_core::annotations::{
    collapse_labels, export_dataset, import_dataset, DatasetFormat, ImageRecord, ImageSource, InstanceAnnotation,
    Label, LabelTaxonomy,
};
use scd_core::geometry::Polygon;
use scd_core::synthgen::{generate_dataset, SceneConfig, SplitRule};

fn golden_records() -> Vec<ImageRecord> {
    let tri = Polygon { vertices: vec![[10.0, 12.5], [40.0, 12.5], [25.0, 30.0]] };
    let quad = Polygon { vertices: vec![[50.0, 50.0], [90.0, 52.0], [88.0, 80.0], [52.0, 78.0]] };
    vec![ImageRecord {
        image_id: 7,
        file_name: "images/000007.png".into(),
        width: 128,
        height: 96,
        instances: vec![
            InstanceAnnotation::new(1, Label::CartonInnerAll, tri),
            InstanceAnnotation::new(2, Label::CartonOuterOcclusion, quad),
        ],
        source: ImageSource::Imported,
    }]
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn golden_coco_imports_to_expected_records() {
    let got = import_dataset(&data("golden_coco.json"), DatasetFormat::CocoJson, LabelTaxonomy::FOUR_LABEL).unwrap();
    assert_eq!(got, golden_records());
    assert_eq!(got[0].instances[0].bbox.to_array(), [10.0, 12.5, 40.0, 30.0]);
}

#[test]
fn golden_voc_imports_as_bbox_only() {
    let got = import_dataset(&data("golden_voc"), DatasetFormat::VocXml, LabelTaxonomy::FOUR_LABEL).unwrap();
    let want = golden_records();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].image_id, want[0].image_id);
    for (g, w) in got[0].instances.iter().zip(&want[0].instances) {
        assert!(g.bbox_only);
        assert_eq!(g.label, w.label);
        assert_eq!(g.instance_id, w.instance_id);
        assert_eq!(g.bbox, w.bbox);
    }
}

#[test]
fn coco_round_trip_of_generated_dataset() {
    let cfg = SceneConfig { width: 128, height: 128, count_max: 25, ..SceneConfig::default() };
    let records = generate_dataset(&cfg, 12, 3, SplitRule::Parity).unwrap().records;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.json");
    export_dataset(&records, DatasetFormat::CocoJson, &path).unwrap();
    let back = import_dataset(&path, DatasetFormat::CocoJson, LabelTaxonomy::FOUR_LABEL).unwrap();
    assert_eq!(back, records);

    let collapsed = collapse_labels(&records);
    let path = dir.path().join("one.json");
    export_dataset(&collapsed, DatasetFormat::CocoJson, &path).unwrap();
    assert_eq!(import_dataset(&path, DatasetFormat::CocoJson, LabelTaxonomy::ONE_LABEL).unwrap(), collapsed);
}

#[test]
fn voc_round_trip_keeps_boxes_and_flags_polygons() {
    let records = golden_records();
    let dir = tempfile::tempdir().unwrap();
    let voc = dir.path().join("voc");
    export_dataset(&records, DatasetFormat::VocXml, &voc).unwrap();
    let back = import_dataset(&voc, DatasetFormat::VocXml, LabelTaxonomy::FOUR_LABEL).unwrap();
    for (b, r) in back[0].instances.iter().zip(&records[0].instances) {
        assert!(b.bbox_only && !r.bbox_only);
        assert_eq!(b.bbox, r.bbox);
        assert_eq!(b.polygon, Polygon::rectangle(&r.bbox));
    }
    assert_eq!(back[0].width, 128);
    assert_eq!(back[0].source, ImageSource::Imported);
}

#[test]
fn empty_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    export_dataset(&[], DatasetFormat::CocoJson, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["annotations"].as_array().unwrap().len(), 0);
    assert!(import_dataset(&path, DatasetFormat::CocoJson, LabelTaxonomy::FOUR_LABEL).unwrap().is_empty());
}

#[test]
fn two_instances_give_two_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.json");
    export_dataset(&golden_records(), DatasetFormat::CocoJson, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["annotations"].as_array().unwrap().len(), 2);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let err = export_dataset(&golden_records(), DatasetFormat::CocoJson, &file.join("nested.json")).unwrap_err();
    assert!(err.to_string().contains("plain"), "{err}");
}

#[test]
fn collapse_preserves_geometry_and_is_idempotent() {
    let records = golden_records();
    let once = collapse_labels(&records);
    assert_eq!(collapse_labels(&once), once);
    for (a, b) in once[0].instances.iter().zip(&records[0].instances) {
        assert_eq!(a.label, Label::Carton);
        assert_eq!((a.polygon.clone(), a.bbox), (b.polygon.clone(), b.bbox));
    }
}
