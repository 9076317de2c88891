//! Procedural stacked-carton scenes with automatically derived labels.
//!
//! A scene is a grid stack of frontal, axis-aligned cartons, optionally truncated by the
//! image border, plus a few loose cartons dropped on top that occlude the stack. All
//! geometry is in whole pixels: a carton covers pixels `x0..x1` by `y0..y1`.

mod render;
mod truth;

pub use render::{render_scene, Palette};
pub use truth::{compute_truths, derive_labels, Contact, SceneInstanceTruth, CONTACT_TOLERANCE};

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    export_dataset, DatasetFormat, ImageRecord, ImageSource, InstanceAnnotation, AnnotationError,
};
use crate::geometry::{BBox, Polygon};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("unsatisfiable layout: {0}")]
    Unsatisfiable(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub count_min: usize,
    pub count_max: usize,
    /// Carton side as a fraction of the image side.
    pub size_min: f64,
    pub size_max: f64,
    pub rows_min: usize,
    pub rows_max: usize,
    pub cols_min: usize,
    pub cols_max: usize,
    /// Chance of each of up to `max_occluders` loose cartons being dropped on the stack.
    pub occluder_prob: f64,
    pub max_occluders: usize,
    /// Chance that the stack runs past an image border.
    pub truncation_prob: f64,
    /// Stack columns (rows) shrink by up to this many pixels on their right (bottom) sides.
    pub jitter: u32,
    pub palette_seed: u64,
    /// Default base seed for dataset generation.
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 256,
            height: 256,
            count_min: 1,
            count_max: 48,
            size_min: 0.06,
            size_max: 0.4,
            rows_min: 1,
            rows_max: 8,
            cols_min: 1,
            cols_max: 8,
            occluder_prob: 0.3,
            max_occluders: 3,
            truncation_prob: 0.2,
            jitter: 1,
            palette_seed: 0x5cd,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Config(m));
        if self.width == 0 || self.height == 0 {
            return fail(format!("image size must be positive, got {}x{}", self.width, self.height));
        }
        if self.count_min < 1 || self.count_max < self.count_min {
            return fail(format!("instance count range [{}, {}] is invalid", self.count_min, self.count_max));
        }
        for (name, v) in [("size_min", self.size_min), ("size_max", self.size_max)] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.size_max < self.size_min {
            return fail("size_max is below size_min".into());
        }
        if self.rows_min < 1 || self.rows_max < self.rows_min || self.cols_min < 1 || self.cols_max < self.cols_min {
            return fail("stack rows/cols ranges must be non-empty and start at 1 or more".into());
        }
        for (name, p) in [("occluder_prob", self.occluder_prob), ("truncation_prob", self.truncation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Pixel rectangle covering `x0..x1` by `y0..y1`; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl PixelRect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        PixelRect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> i64 {
        (self.x1 - self.x0).max(0) as i64 * (self.y1 - self.y0).max(0) as i64
    }

    pub fn intersect(&self, o: &PixelRect) -> PixelRect {
        PixelRect::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1))
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn to_bbox(&self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64)
    }
}

/// Where the cartons sit, in drawing order, and which palette entry each uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub width: u32,
    pub height: u32,
    pub rects: Vec<PixelRect>,
    pub styles: Vec<usize>,
}

impl SceneLayout {
    pub fn image_rect(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i32, self.height as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub layout: SceneLayout,
    pub image: RgbImage,
    pub truths: Vec<SceneInstanceTruth>,
}

/// Smallest visible area any instance may be left with by occluders.
const MIN_VISIBLE_AREA: usize = 16;
const OCCLUDER_ATTEMPTS: usize = 200;
const LAYOUT_ATTEMPTS: usize = 8;

/// Deterministic scene for `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene, SynthError> {
    let layout = generate_layout(config, seed)?;
    let palette = Palette::from_seed(config.palette_seed);
    let image = render_scene(&layout, &palette);
    let truths = compute_truths(&layout);
    Ok(Scene { layout, image, truths })
}

pub fn generate_layout(config: &SceneConfig, seed: u64) -> Result<SceneLayout, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width as i32, config.height as i32);
    let n = rng.random_range(config.count_min..=config.count_max);
    let mut n_occ = (0..config.max_occluders).filter(|_| rng.random_bool(config.occluder_prob)).count();
    n_occ = n_occ.min(n - 1);
    let grid_n = n - n_occ;

    let min_cw = ((config.size_min * w as f64).round() as i32).max(2);
    let min_ch = ((config.size_min * h as f64).round() as i32).max(2);
    let shapes: Vec<(usize, usize)> = (config.cols_min..=config.cols_max)
        .filter_map(|c| {
            let r = grid_n.div_ceil(c);
            let fits = (config.rows_min..=config.rows_max).contains(&r) && w / c as i32 >= min_cw && h / r as i32 >= min_ch;
            fits.then_some((r, c))
        })
        .collect();
    if shapes.is_empty() {
        return Err(SynthError::Unsatisfiable(format!(
            "{grid_n} stacked cartons of at least {min_cw}x{min_ch} px do not fit a {}..={} x {}..={} grid in {w}x{h}",
            config.rows_min, config.rows_max, config.cols_min, config.cols_max
        )));
    }
    for _ in 0..LAYOUT_ATTEMPTS {
        if let Some(layout) = try_layout(config, &mut rng, grid_n, n_occ, &shapes) {
            return Ok(layout);
        }
    }
    Err(SynthError::Unsatisfiable(format!(
        "no occluder position leaves every carton at least {MIN_VISIBLE_AREA} visible pixels"
    )))
}

fn try_layout(
    config: &SceneConfig,
    rng: &mut ChaCha8Rng,
    grid_n: usize,
    n_occ: usize,
    shapes: &[(usize, usize)],
) -> Option<SceneLayout> {
    let (w, h) = (config.width as i32, config.height as i32);
    let min_cw = ((config.size_min * w as f64).round() as i32).max(2);
    let min_ch = ((config.size_min * h as f64).round() as i32).max(2);
    let (rows, cols) = shapes[rng.random_range(0..shapes.len())];

    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, side: i32| -> i32 {
        (rng.random_range(lo..=hi) * side as f64).round() as i32
    };
    let cw = draw(rng, config.size_min, config.size_max, w).clamp(min_cw, w / cols as i32);
    let ch = draw(rng, config.size_min, config.size_max, h).clamp(min_ch, h / rows as i32);
    let (stack_w, stack_h) = (cw * cols as i32, ch * rows as i32);
    let mut ox = rng.random_range(0..=w - stack_w);
    let mut oy = rng.random_range(0..=h - stack_h);
    if rng.random_bool(config.truncation_prob) {
        // push the stack over one border by up to half a carton
        match rng.random_range(0..4) {
            0 => ox = -rng.random_range(1..=(cw / 2).max(1)),
            1 => ox = w - stack_w + rng.random_range(1..=(cw / 2).max(1)),
            2 => oy = -rng.random_range(1..=(ch / 2).max(1)),
            _ => oy = h - stack_h + rng.random_range(1..=(ch / 2).max(1)),
        }
    }

    let main_style = rng.random_range(0..render::PALETTE_SIZE);
    let alt_style = (main_style + 1 + rng.random_range(0..render::PALETTE_SIZE - 1)) % render::PALETTE_SIZE;
    let mut rects = Vec::with_capacity(grid_n + n_occ);
    let mut styles = Vec::with_capacity(grid_n + n_occ);
    // shared per column and row so neighbouring edges stay aligned
    let shrink_x: Vec<i32> = (0..cols).map(|_| rng.random_range(0..=config.jitter as i32).min(cw / 4)).collect();
    let shrink_y: Vec<i32> = (0..rows).map(|_| rng.random_range(0..=config.jitter as i32).min(ch / 4)).collect();
    // bottom row first; the top row may be partial
    for k in 0..grid_n {
        let (row_from_bottom, col) = (k / cols, k % cols);
        let row = rows - 1 - row_from_bottom;
        let x0 = ox + col as i32 * cw;
        let y0 = oy + row as i32 * ch;
        rects.push(PixelRect::new(x0, y0, x0 + cw - shrink_x[col], y0 + ch - shrink_y[row]));
        styles.push(if rng.random_bool(0.8) { main_style } else { alt_style });
    }

    let image = PixelRect::new(0, 0, w, h);
    for _ in 0..n_occ {
        let mut placed = false;
        for _ in 0..OCCLUDER_ATTEMPTS {
            let ow = (cw as f64 * rng.random_range(0.5..=1.0)).round().max(2.0) as i32;
            let oh = (ch as f64 * rng.random_range(0.5..=1.0)).round().max(2.0) as i32;
            let x0 = rng.random_range((ox - ow / 2).max(0)..=(ox + stack_w - ow / 2).min(w - ow).max(0));
            let y0 = rng.random_range((oy - oh / 2).max(0)..=(oy + stack_h - oh / 2).min(h - oh).max(0));
            let candidate = PixelRect::new(x0, y0, x0 + ow, y0 + oh);
            if candidate.intersect(&image).is_empty() {
                continue;
            }
            rects.push(candidate);
            let ok = visible_areas(&rects, w, h).iter().all(|&a| a >= MIN_VISIBLE_AREA);
            if ok {
                styles.push(rng.random_range(0..render::PALETTE_SIZE));
                placed = true;
                break;
            }
            rects.pop();
        }
        if !placed {
            return None;
        }
    }
    Some(SceneLayout { width: config.width, height: config.height, rects, styles })
}

fn visible_areas(rects: &[PixelRect], w: i32, h: i32) -> Vec<usize> {
    let mut owner = vec![usize::MAX; (w * h) as usize];
    for (i, r) in rects.iter().enumerate() {
        let c = r.intersect(&PixelRect::new(0, 0, w, h));
        for y in c.y0..c.y1 {
            for x in c.x0..c.x1 {
                owner[(y * w + x) as usize] = i;
            }
        }
    }
    let mut areas = vec![0; rects.len()];
    for &o in &owner {
        if o != usize::MAX {
            areas[o] += 1;
        }
    }
    areas
}

/// Polygon annotated for an instance: the in-image part of the carton when nothing
/// covers it, otherwise the bounding rectangle of its visible pixels.
pub fn annotation_polygon(truth: &SceneInstanceTruth, layout: &SceneLayout) -> Polygon {
    let clipped = truth.rect.intersect(&layout.image_rect());
    if truth.visible_area as i64 == clipped.area() {
        Polygon::rectangle(&clipped.to_bbox())
    } else {
        Polygon::rectangle(&truth.visible_bounds.to_bbox())
    }
}

/// Seed of image `index` in a dataset with `base_seed` (SplitMix64 finalizer).
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum SplitRule {
    /// Odd indices go to test.
    #[default]
    Parity,
    /// Fraction of images (taken from the end) that go to test.
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub records: Vec<ImageRecord>,
    pub images: Vec<RgbImage>,
    pub split: DatasetSplit,
}

/// Generates `n_images` scenes; image `i` has id `i + 1` and seed `derive_seed(base_seed, i)`.
pub fn generate_dataset(
    config: &SceneConfig,
    n_images: usize,
    base_seed: u64,
    split: SplitRule,
) -> Result<GeneratedDataset, SynthError> {
    if n_images == 0 {
        return Err(SynthError::Config("n_images must be at least 1".into()));
    }
    config.validate()?;
    let scenes: Vec<Scene> = (0..n_images)
        .into_par_iter()
        .map(|i| generate_scene(config, derive_seed(base_seed, i as u64)))
        .collect::<Result<_, _>>()?;

    let mut next_id = 1u64;
    let mut records = Vec::with_capacity(n_images);
    let mut images = Vec::with_capacity(n_images);
    for (i, scene) in scenes.into_iter().enumerate() {
        let labels = derive_labels(&scene.truths);
        let instances = scene
            .truths
            .iter()
            .zip(labels)
            .map(|(t, label)| {
                let inst = InstanceAnnotation::new(next_id, label, annotation_polygon(t, &scene.layout));
                next_id += 1;
                inst
            })
            .collect();
        let image_id = i as u64 + 1;
        records.push(ImageRecord {
            image_id,
            file_name: format!("images/{image_id:06}.png"),
            width: config.width,
            height: config.height,
            instances,
            source: ImageSource::Synthetic,
        });
        images.push(scene.image);
    }

    let ids: Vec<u64> = records.iter().map(|r| r.image_id).collect();
    let split = match split {
        SplitRule::Parity => DatasetSplit {
            train: ids.iter().copied().filter(|id| (id - 1) % 2 == 0).collect(),
            test: ids.iter().copied().filter(|id| (id - 1) % 2 == 1).collect(),
        },
        SplitRule::Ratio(r) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::Config(format!("split ratio must lie in [0, 1], got {r}")));
            }
            let n_test = (r * n_images as f64).round() as usize;
            let cut = n_images - n_test;
            DatasetSplit { train: ids[..cut].to_vec(), test: ids[cut..].to_vec() }
        }
    };
    Ok(GeneratedDataset { records, images, split })
}

impl GeneratedDataset {
    /// Writes PNGs under `dir/images/`, `dir/annotations.json` and `dir/split.json`.
    /// Returns the written paths in a fixed order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
        let image_dir = dir.join("images");
        fs::create_dir_all(&image_dir).map_err(|source| SynthError::Io { path: image_dir.clone(), source })?;
        let mut written = Vec::with_capacity(self.records.len() + 2);
        for (rec, img) in self.records.iter().zip(&self.images) {
            let path = dir.join(&rec.file_name);
            img.save(&path).map_err(|e| SynthError::Image { path: path.clone(), message: e.to_string() })?;
            written.push(path);
        }
        let ann = dir.join("annotations.json");
        export_dataset(&self.records, DatasetFormat::CocoJson, &ann)?;
        written.push(ann);
        let split = dir.join("split.json");
        let text = serde_json::to_string_pretty(&self.split).expect("split always serializes");
        fs::write(&split, text).map_err(|source| SynthError::Io { path: split.clone(), source })?;
        written.push(split);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{validate_taxonomy, LabelTaxonomy};

    #[test]
    fn deterministic_scene() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, 42).unwrap();
        let b = generate_scene(&cfg, 42).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truths, b.truths);
        assert_eq!(a.layout, b.layout);
    }

    #[test]
    fn single_instance_range() {
        let cfg = SceneConfig { count_min: 1, count_max: 1, ..SceneConfig::default() };
        for seed in 0..20 {
            assert_eq!(generate_scene(&cfg, seed).unwrap().truths.len(), 1);
        }
    }

    #[test]
    fn counts_within_range() {
        let cfg = SceneConfig { count_min: 3, count_max: 9, ..SceneConfig::default() };
        for seed in 0..50 {
            let n = generate_layout(&cfg, seed).unwrap().rects.len();
            assert!((3..=9).contains(&n));
        }
    }

    #[test]
    fn unsatisfiable_layout_is_reported() {
        let cfg = SceneConfig { count_min: 40, count_max: 40, rows_max: 2, cols_max: 2, ..SceneConfig::default() };
        assert!(matches!(generate_layout(&cfg, 1), Err(SynthError::Unsatisfiable(_))));
        let cfg = SceneConfig { size_min: 0.6, size_max: 0.6, count_min: 4, count_max: 4, max_occluders: 0, ..SceneConfig::default() };
        assert!(matches!(generate_layout(&cfg, 1), Err(SynthError::Unsatisfiable(_))));
    }

    #[test]
    fn invalid_config() {
        let cfg = SceneConfig { size_min: 0.0, ..SceneConfig::default() };
        assert!(matches!(cfg.validate(), Err(SynthError::Config(_))));
        let cfg = SceneConfig { count_min: 0, ..SceneConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dataset_is_valid_and_deterministic() {
        let cfg = SceneConfig { width: 128, height: 128, count_max: 12, ..SceneConfig::default() };
        let a = generate_dataset(&cfg, 6, 9, SplitRule::Parity).unwrap();
        let b = generate_dataset(&cfg, 6, 9, SplitRule::Parity).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.images, b.images);
        assert_eq!(a.split.train, vec![1, 3, 5]);
        assert_eq!(a.split.test, vec![2, 4, 6]);
        for r in &a.records {
            assert!(validate_taxonomy(r, LabelTaxonomy::FOUR_LABEL).is_empty(), "{:?}", validate_taxonomy(r, LabelTaxonomy::FOUR_LABEL));
        }
        let ratio = generate_dataset(&cfg, 10, 9, SplitRule::Ratio(0.2)).unwrap();
        assert_eq!(ratio.split.test, vec![9, 10]);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
