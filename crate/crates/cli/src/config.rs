use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use scd_core::annotations::{DatasetFormat, LabelTaxonomy, TaxonomyMode};
use scd_core::losses::BgsLossKind;
use scd_core::synthgen::{SceneConfig, SplitRule};
use scd_model::{ModelConfig, PredictConfig, TrainConfig, PYRAMID_STRIDES};

use crate::CliError;

/// Everything a command needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed for scene generation, model initialization and batch order. It replaces
    /// `data.scene.seed` and `train.seed`.
    pub seed: u64,
    /// Artifact directory. Unset means `$SCD_OUTPUT_ROOT/<command>`, or `runs/<command>`.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scene: SceneConfig,
    pub num_images: usize,
    pub split: SplitRule,
    /// Existing dataset to read instead of generating scenes in memory. Image paths
    /// resolve against it; `split.json` is used when present.
    pub dataset_dir: Option<PathBuf>,
    /// `coco_json` reads `<dataset_dir>/annotations.json`; `voc_xml` reads the XML files
    /// directly inside `dataset_dir`.
    pub dataset_format: DatasetFormat,
    pub taxonomy: TaxonomyMode,
    /// Target format of `export`.
    pub export_format: DatasetFormat,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scene: SceneConfig::default(),
            num_images: 64,
            split: SplitRule::Parity,
            dataset_dir: None,
            dataset_format: DatasetFormat::CocoJson,
            taxonomy: TaxonomyMode::FourLabel,
            export_format: DatasetFormat::VocXml,
        }
    }
}

impl DataConfig {
    pub fn taxonomy(&self) -> LabelTaxonomy {
        LabelTaxonomy { mode: self.taxonomy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub predict: PredictConfig,
    /// COCO results file to score as-is.
    pub detections: Option<PathBuf>,
    /// Checkpoint for `eval` and `sweep-alpha`; `sweep-alpha` trains a model when unset.
    pub checkpoint: Option<PathBuf>,
    /// Images scored against.
    pub subset: Subset,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { predict: PredictConfig::default(), detections: None, checkpoint: None, subset: Subset::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub thicknesses: Vec<u32>,
    pub bgs_losses: Vec<BgsLossKind>,
    /// Trains sweep points concurrently, each in its own directory.
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            thicknesses: vec![16, 40, 96],
            bgs_losses: BgsLossKind::ALL.to_vec(),
            parallel: false,
        }
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

/// Sets `value` at a dotted `path`, creating intermediate objects.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_error(format!("malformed override key `{path}`")));
    }
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(config_error(format!("`{}` is not an object", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    unreachable!("override paths have at least one key")
}

/// Parses a `key=value` override. Values that are not valid JSON become strings.
pub fn parse_override(text: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| config_error(format!("override `{text}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Builds the run config: defaults, then the file, then each override in order.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(config_error("config must be a JSON object"));
    }
    for text in overrides {
        let (key, value) = parse_override(text)?;
        set_path(&mut root, &key, value)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| config_error(e.to_string()))?;
    cfg.data.scene.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.data.scene.validate()?;
        if self.data.num_images == 0 {
            return Err(config_error("data.num_images must be at least 1"));
        }
        if let SplitRule::Ratio(r) = self.data.split {
            if !(0.0..=1.0).contains(&r) {
                return Err(config_error(format!("data.split ratio must lie in [0, 1], got {r}")));
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        let classes = self.data.taxonomy().num_classes();
        if self.model.num_classes != classes {
            return Err(config_error(format!(
                "model.num_classes is {} but the {} taxonomy has {classes} classes",
                self.model.num_classes, self.data.taxonomy
            )));
        }
        let p = &self.eval.predict;
        if matches!(p.alpha, Some(a) if !(0.0..=1.0).contains(&a)) {
            return Err(config_error("eval.predict.alpha must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&p.score_thresh) || !(p.nms_iou > 0.0 && p.nms_iou <= 1.0) || p.max_detections == 0 {
            return Err(config_error(
                "eval.predict needs score_thresh in [0, 1], nms_iou in (0, 1] and max_detections >= 1",
            ));
        }
        let s = &self.sweep;
        if s.alphas.is_empty() || s.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config_error("sweep.alphas must be a non-empty list of values in [0, 1]"));
        }
        if s.thicknesses.is_empty() || s.thicknesses.iter().any(|&t| (t as usize) < PYRAMID_STRIDES[0]) {
            return Err(config_error(format!(
                "sweep.thicknesses must be a non-empty list of values >= {}",
                PYRAMID_STRIDES[0]
            )));
        }
        if s.bgs_losses.is_empty() {
            return Err(config_error("sweep.bgs_losses must not be empty"));
        }
        Ok(())
    }

    /// Snapshot that reproduces the run. The output directory is left out so that the
    /// same experiment written to two places has the same snapshot.
    pub fn snapshot(&self) -> String {
        let cfg = RunConfig { output_dir: None, ..self.clone() };
        serde_json::to_string_pretty(&cfg).expect("run config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_or_fall_back_to_strings() {
        assert_eq!(parse_override("train.iterations=5").unwrap(), ("train.iterations".into(), Value::from(5)));
        assert_eq!(parse_override("output_dir=out/a").unwrap().1, Value::from("out/a"));
        assert_eq!(parse_override("sweep.alphas=[0,1]").unwrap().1, serde_json::json!([0, 1]));
        assert!(parse_override("seed").is_err());
    }

    #[test]
    fn precedence_is_defaults_then_file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.json");
        fs::write(&file, r#"{"seed": 3, "train": {"iterations": 7, "batch_size": 2}}"#).unwrap();
        let cfg = resolve(Some(&file), &["train.iterations=9".into()]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.iterations, 9);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.momentum, TrainConfig::default().momentum);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.data.scene.seed, 3);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(resolve(None, &["colour=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, &["train.lr=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, &["seed.x=1".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = resolve(None, &["seed=11".into(), "output_dir=\"x\"".into()]).unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.snapshot()).unwrap();
        assert_eq!(back, RunConfig { output_dir: None, ..cfg });
    }

    #[test]
    fn taxonomy_must_match_class_count() {
        let err = resolve(None, &["data.taxonomy=one_label".into()]).unwrap_err();
        assert!(err.to_string().contains("num_classes"));
        resolve(None, &["data.taxonomy=one_label".into(), "model.num_classes=1".into()]).unwrap();
    }
}
