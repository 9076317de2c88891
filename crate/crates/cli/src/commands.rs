use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scd_core::annotations::{collapse_labels, compute_statistics, export_dataset, import_dataset, DatasetFormat, ImageRecord, TaxonomyMode};
use scd_core::eval::{evaluate, read_results, write_results, ApTable, ImageDetections};
use scd_core::losses::BgsLossKind;
use scd_core::synthgen::{generate_dataset, DatasetSplit};
use scd_model::{fit, load_checkpoint, save_checkpoint, Detector, MetricsLog, ModelConfig, RawPredictions, Sample, Trainer};

use crate::config::{RunConfig, Subset};
use crate::plot::{plot_data, read_summary, render_svg};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    fs::write(path, contents).map_err(io_error(path))?;
    Ok(path.to_path_buf())
}

/// Builds the manifest over `written` (files or directories), sorted by relative path.
pub fn build_manifest(command: &str, seed: u64, root: &Path, written: &[PathBuf]) -> Result<Manifest, CliError> {
    let mut files = BTreeSet::new();
    for path in written {
        for entry in walkdir::WalkDir::new(path) {
            let entry = entry.map_err(|e| CliError::Io { path: path.clone(), source: e.into() })?;
            if entry.file_type().is_file() {
                files.insert(entry.into_path());
            }
        }
    }
    let mut artifacts = Vec::with_capacity(files.len());
    for file in files {
        let bytes = fs::read(&file).map_err(io_error(&file))?;
        let rel = file.strip_prefix(root).unwrap_or(&file);
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        artifacts.push(Artifact {
            path: rel.join("/"),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { command: command.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), seed, artifacts })
}

/// Records, images (empty unless requested) and the train/test split, in the configured
/// taxonomy.
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub images: Vec<RgbImage>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn load(cfg: &RunConfig, with_images: bool) -> Result<Dataset, CliError> {
        let data = &cfg.data;
        let Some(dir) = &data.dataset_dir else {
            let generated = generate_dataset(&data.scene, data.num_images, cfg.seed, data.split)?;
            let records = match data.taxonomy {
                TaxonomyMode::FourLabel => generated.records,
                TaxonomyMode::OneLabel => collapse_labels(&generated.records),
            };
            let images = if with_images { generated.images } else { Vec::new() };
            return Ok(Dataset { records, images, split: generated.split });
        };
        let source = match data.dataset_format {
            DatasetFormat::CocoJson => dir.join("annotations.json"),
            DatasetFormat::VocXml => dir.clone(),
        };
        let records = import_dataset(&source, data.dataset_format, data.taxonomy())?;
        let split_path = dir.join("split.json");
        let split = if split_path.exists() {
            let text = fs::read_to_string(&split_path).map_err(io_error(&split_path))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", split_path.display())))?
        } else {
            let ids: Vec<u64> = records.iter().map(|r| r.image_id).collect();
            DatasetSplit { train: ids.clone(), test: ids }
        };
        let mut images = Vec::new();
        if with_images {
            for r in &records {
                let path = dir.join(&r.file_name);
                let img = image::open(&path).map_err(|e| CliError::Image { path: path.clone(), message: e.to_string() })?;
                images.push(img.to_rgb8());
            }
        }
        Ok(Dataset { records, images, split })
    }

    /// Record indices of a subset, in record order.
    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        let ids: BTreeSet<u64> = match subset {
            Subset::Train => self.split.train.iter().copied().collect(),
            Subset::Test => self.split.test.iter().copied().collect(),
            Subset::All => self.records.iter().map(|r| r.image_id).collect(),
        };
        (0..self.records.len()).filter(|&i| ids.contains(&self.records[i].image_id)).collect()
    }

    fn samples(&self, subset: Subset) -> Vec<Sample> {
        self.indices(subset)
            .into_iter()
            .map(|i| Sample { image: self.images[i].clone(), record: self.records[i].clone() })
            .collect()
    }

    fn records(&self, idx: &[usize]) -> Vec<ImageRecord> {
        idx.iter().map(|&i| self.records[i].clone()).collect()
    }
}

/// Trains a model on the train split, logging every step to `dir/metrics.jsonl` and
/// saving `dir/checkpoint.safetensors`.
fn train_model(
    cfg: &RunConfig,
    model_cfg: ModelConfig,
    data: &Dataset,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<Detector, CliError> {
    let samples = data.samples(Subset::Train);
    if samples.is_empty() {
        return Err(CliError::Config("the train split is empty".into()));
    }
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let model = Detector::new(model_cfg, cfg.seed)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.data.taxonomy())?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut metrics = MetricsLog::create(&metrics_path)?;
    let mut log_error = None;
    let every = (cfg.train.iterations / 20).max(1);
    fit(&model, &mut trainer, &samples, |report| {
        if report.iteration % every == 0 || report.iteration + 1 == cfg.train.iterations {
            log::info!("{}: iter {} loss {:.4} lr {:.5}", dir.display(), report.iteration, report.total, report.lr);
        }
        if let Err(e) = metrics.write(report) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    metrics.flush()?;
    let checkpoint = dir.join("checkpoint.safetensors");
    save_checkpoint(&model, &checkpoint)?;
    written.extend([metrics_path, checkpoint]);
    Ok(model)
}

fn raw_predictions(model: &Detector, data: &Dataset, idx: &[usize]) -> Result<Vec<(u64, RawPredictions)>, CliError> {
    idx.iter().map(|&i| Ok((data.records[i].image_id, model.raw_predictions(&data.images[i])?))).collect()
}

fn check_classes(model: &Detector, cfg: &RunConfig) -> Result<(), CliError> {
    let want = cfg.data.taxonomy().num_classes();
    if model.config().num_classes != want {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes but the {} taxonomy has {want}",
            model.config().num_classes,
            cfg.data.taxonomy
        )));
    }
    Ok(())
}

/// Scores detections and writes `detections.json`, `ap_table.json` and `ap_table.txt` into `dir`.
fn score(
    cfg: &RunConfig,
    data: &Dataset,
    idx: &[usize],
    detections: &[ImageDetections],
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<ApTable, CliError> {
    let table = evaluate(detections, &data.records(idx), cfg.data.taxonomy())?;
    let dets_path = dir.join("detections.json");
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_results(detections, &dets_path)?;
    written.push(dets_path);
    written.push(write_file(&dir.join("ap_table.json"), table.to_json())?);
    written.push(write_file(&dir.join("ap_table.txt"), table.to_text_table())?);
    Ok(table)
}

fn predict_all(raw: &[(u64, RawPredictions)], alpha: f64, cfg: &RunConfig) -> Vec<ImageDetections> {
    raw.iter()
        .map(|(id, r)| ImageDetections { image_id: *id, detections: r.detections(alpha, &cfg.eval.predict) })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_summary(path: &Path, column: &str, rows: &[(String, ApTable)]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io { path: path.to_path_buf(), source: e.into() };
    w.write_record([column, "mAP", "AP50", "AP75"]).map_err(csv_err)?;
    for (x, t) in rows {
        w.write_record([x.clone(), fmt_opt(t.map), fmt_opt(t.ap50()), fmt_opt(t.ap75())]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.into_error() })?;
    write_file(path, bytes)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = &cfg.data;
    let dataset = generate_dataset(&data.scene, data.num_images, cfg.seed, data.split)?;
    let written = dataset.write(out)?;
    println!("wrote {} images to {}", dataset.records.len(), out.display());
    Ok(written)
}

pub fn stats(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Dataset::load(cfg, false)?;
    let json = compute_statistics(&data.records)?.to_json();
    println!("{json}");
    Ok(vec![write_file(&out.join("statistics.json"), json)?])
}

pub fn export(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Dataset::load(cfg, false)?;
    let target = match cfg.data.export_format {
        DatasetFormat::CocoJson => out.join("annotations.json"),
        DatasetFormat::VocXml => out.join("voc"),
    };
    export_dataset(&data.records, cfg.data.export_format, &target)?;
    println!("exported {} records to {}", data.records.len(), target.display());
    Ok(vec![target])
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Dataset::load(cfg, true)?;
    let mut written = Vec::new();
    let model = train_model(cfg, cfg.model.clone(), &data, out, &mut written)?;
    let idx = data.indices(cfg.eval.subset);
    let alpha = cfg.eval.predict.alpha.unwrap_or(cfg.model.opcl.alpha);
    let dets = predict_all(&raw_predictions(&model, &data, &idx)?, alpha, cfg);
    let table = score(cfg, &data, &idx, &dets, out, &mut written)?;
    print!("{}", table.to_text_table());
    Ok(written)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let table = match (&cfg.eval.detections, &cfg.eval.checkpoint) {
        (Some(path), None) => {
            let data = Dataset::load(cfg, false)?;
            let idx = data.indices(cfg.eval.subset);
            let keep: BTreeSet<u64> = idx.iter().map(|&i| data.records[i].image_id).collect();
            let mut dets = read_results(path, cfg.data.taxonomy())?;
            dets.retain(|d| keep.contains(&d.image_id));
            score(cfg, &data, &idx, &dets, out, &mut written)?
        }
        (None, Some(path)) => {
            let model = load_checkpoint(path)?;
            check_classes(&model, cfg)?;
            let data = Dataset::load(cfg, true)?;
            let idx = data.indices(cfg.eval.subset);
            let alpha = cfg.eval.predict.alpha.unwrap_or(model.config().opcl.alpha);
            let dets = predict_all(&raw_predictions(&model, &data, &idx)?, alpha, cfg);
            score(cfg, &data, &idx, &dets, out, &mut written)?
        }
        _ => return Err(CliError::Config("eval needs exactly one of eval.detections and eval.checkpoint".into())),
    };
    print!("{}", table.to_text_table());
    Ok(written)
}

pub fn sweep_alpha(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = Dataset::load(cfg, true)?;
    let mut written = Vec::new();
    let model = match &cfg.eval.checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            check_classes(&model, cfg)?;
            model
        }
        None => train_model(cfg, cfg.model.clone(), &data, &out.join("model"), &mut written)?,
    };
    let idx = data.indices(cfg.eval.subset);
    let records = data.records(&idx);
    let raw = raw_predictions(&model, &data, &idx)?;
    let mut rows = Vec::with_capacity(cfg.sweep.alphas.len());
    for &alpha in &cfg.sweep.alphas {
        let table = evaluate(&predict_all(&raw, alpha, cfg), &records, cfg.data.taxonomy())?;
        log::info!("alpha {alpha}: mAP {}", fmt_opt(table.map));
        written.push(write_file(&out.join(format!("ap_alpha_{alpha:.2}.json")), table.to_json())?);
        rows.push((alpha.to_string(), table));
    }
    written.push(write_summary(&out.join("summary.csv"), "alpha", &rows)?);
    Ok(written)
}

/// Trains and scores one model per setting, each in `out/<name>/`.
fn sweep_models<T: Sync>(
    cfg: &RunConfig,
    out: &Path,
    column: &str,
    points: &[T],
    name: impl Fn(&T) -> String + Sync,
    configure: impl Fn(&T, &mut ModelConfig) + Sync,
) -> Result<Vec<PathBuf>, CliError> {
    let data = Dataset::load(cfg, true)?;
    let run_point = |p: &T| -> Result<(String, ApTable, Vec<PathBuf>), CliError> {
        let label = name(p);
        let dir = out.join(format!("{column}_{label}"));
        let mut model_cfg = cfg.model.clone();
        configure(p, &mut model_cfg);
        let mut written = Vec::new();
        let model = train_model(cfg, model_cfg, &data, &dir, &mut written)?;
        let idx = data.indices(cfg.eval.subset);
        let alpha = cfg.eval.predict.alpha.unwrap_or(cfg.model.opcl.alpha);
        let dets = predict_all(&raw_predictions(&model, &data, &idx)?, alpha, cfg);
        let table = score(cfg, &data, &idx, &dets, &dir, &mut written)?;
        log::info!("{column} {label}: mAP {}", fmt_opt(table.map));
        Ok((label, table, written))
    };
    let results: Vec<_> = if cfg.sweep.parallel {
        points.par_iter().map(run_point).collect::<Result<_, _>>()?
    } else {
        points.iter().map(run_point).collect::<Result<_, _>>()?
    };
    let mut written = Vec::new();
    let mut rows = Vec::with_capacity(results.len());
    for (label, table, files) in results {
        written.extend(files);
        rows.push((label, table));
    }
    written.push(write_summary(&out.join("summary.csv"), column, &rows)?);
    Ok(written)
}

pub fn sweep_thickness(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    sweep_models(cfg, out, "thickness", &cfg.sweep.thicknesses, |t| t.to_string(), |&t, m| {
        m.bgs.enabled = true;
        m.bgs.thickness = t;
    })
}

pub fn sweep_bgs_loss(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let name = |k: &BgsLossKind| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    sweep_models(cfg, out, "bgs_loss", &cfg.sweep.bgs_losses, name, |&k, m| {
        m.bgs.enabled = true;
        m.bgs.loss = k;
    })
}

/// Writes `<kind>.svg` and `<kind>.csv` per summary; repeated kinds get a `_2`, `_3`, ... suffix.
pub fn plot(summaries: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if summaries.is_empty() {
        return Err(CliError::Config("plot needs at least one summary file".into()));
    }
    let mut written = Vec::new();
    let mut used: Vec<&str> = Vec::new();
    for path in summaries {
        let summary = read_summary(path)?;
        let kind = summary.kind.column();
        used.push(kind);
        let n = used.iter().filter(|&&k| k == kind).count();
        let stem = if n == 1 { kind.to_string() } else { format!("{kind}_{n}") };
        written.push(write_file(&out.join(format!("{stem}.svg")), render_svg(&summary))?);
        written.push(write_file(&out.join(format!("{stem}.csv")), plot_data(&summary))?);
    }
    Ok(written)
}
