use serde::{Deserialize, Serialize};

use super::{BBox, GeometryError};

/// Dense anchor tiling settings shared by the detector and target assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// Pyramid strides, strictly increasing (P3..P7 by default).
    pub strides: Vec<usize>,
    /// Anchor base size as a multiple of the level stride.
    pub octave_base_scale: f64,
    pub scales: Vec<f64>,
    /// Height / width ratios.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            strides: vec![8, 16, 32, 64, 128],
            octave_base_scale: 4.0,
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn levels(&self) -> Vec<(usize, f64)> {
        self.strides.iter().map(|&s| (s, s as f64 * self.octave_base_scale)).collect()
    }

    pub fn generate(&self, image: (usize, usize)) -> Result<AnchorGrid, GeometryError> {
        generate_anchors(&self.levels(), &self.scales, &self.ratios, image)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLevel {
    pub stride: usize,
    pub base_size: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Row-major over `(row, col, anchor)`.
    pub anchors: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
    pub per_location: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.anchors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.anchors.len()).collect()
    }

    /// All anchors, level by level, in the same order the detector flattens its outputs.
    pub fn boxes(&self) -> Vec<BBox> {
        self.levels.iter().flat_map(|l| l.anchors.iter().copied()).collect()
    }
}

/// Tiles `|scales| * |ratios|` anchors at every cell of every level.
///
/// Cell `(i, j)` of a level with stride `s` is centered at `((j + 0.5) s, (i + 0.5) s)`;
/// grids are `ceil(H / s) x ceil(W / s)`. Per location anchors are ordered ratio-major.
pub fn generate_anchors(
    levels: &[(usize, f64)],
    scales: &[f64],
    ratios: &[f64],
    image: (usize, usize),
) -> Result<AnchorGrid, GeometryError> {
    if scales.is_empty() || ratios.is_empty() {
        return Err(GeometryError::Config("anchor scales and ratios must be non-empty".into()));
    }
    if levels.is_empty() {
        return Err(GeometryError::Config("at least one pyramid level is required".into()));
    }
    let (height, width) = image;
    if height == 0 || width == 0 {
        return Err(GeometryError::Config(format!("image size must be positive, got {height}x{width}")));
    }
    if levels.windows(2).any(|w| w[1].0 <= w[0].0) || levels[0].0 == 0 {
        return Err(GeometryError::Config("strides must be positive and strictly increasing".into()));
    }
    if ratios.iter().chain(scales).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(GeometryError::Config("scales and ratios must be positive".into()));
    }

    let mut shapes = Vec::with_capacity(scales.len() * ratios.len());
    let per_location = scales.len() * ratios.len();
    let mut out = Vec::with_capacity(levels.len());
    for &(stride, base_size) in levels {
        shapes.clear();
        for &ratio in ratios {
            let h_ratio = ratio.sqrt();
            for &scale in scales {
                let size = base_size * scale;
                shapes.push((size / h_ratio, size * h_ratio));
            }
        }
        let grid_h = height.div_ceil(stride);
        let grid_w = width.div_ceil(stride);
        let mut anchors = Vec::with_capacity(grid_h * grid_w * per_location);
        for i in 0..grid_h {
            let cy = (i as f64 + 0.5) * stride as f64;
            for j in 0..grid_w {
                let cx = (j as f64 + 0.5) * stride as f64;
                anchors.extend(shapes.iter().map(|&(w, h)| BBox::from_center(cx, cy, w, h)));
            }
        }
        out.push(AnchorLevel { stride, base_size, grid_h, grid_w, anchors });
    }
    Ok(AnchorGrid { levels: out, per_location })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_count() {
        let cfg = AnchorConfig::default();
        let grid = generate_anchors(&[(8, 32.0)], &cfg.scales, &cfg.ratios, (64, 64)).unwrap();
        assert_eq!(grid.per_location, 9);
        assert_eq!(grid.len(), 576);
    }

    #[test]
    fn unit_anchor_at_origin_cell() {
        let grid = generate_anchors(&[(8, 32.0)], &[1.0], &[1.0], (64, 64)).unwrap();
        let a = grid.levels[0].anchors[0];
        assert_eq!(a.center(), (4.0, 4.0));
        assert_eq!((a.width(), a.height()), (32.0, 32.0));
    }

    #[test]
    fn default_pyramid_total() {
        // ceil(64/s)^2 for s in {8,16,32,64,128}: 64 + 16 + 4 + 1 + 1
        let expected: usize = [8usize, 16, 32, 64, 128].iter().map(|s| 64usize.div_ceil(*s).pow(2)).sum::<usize>() * 9;
        assert_eq!(expected, 774);
        let grid = AnchorConfig::default().generate((64, 64)).unwrap();
        assert_eq!(grid.len(), 774);
        assert_eq!(grid.counts(), vec![576, 144, 36, 9, 9]);
    }

    #[test]
    fn anchor_area_and_ratio() {
        let grid = generate_anchors(&[(16, 64.0)], &[2.0], &[0.5, 2.0], (16, 16)).unwrap();
        for (a, ratio) in grid.levels[0].anchors.iter().zip([0.5, 2.0]) {
            assert!((a.area() - 128.0 * 128.0).abs() < 1e-9);
            assert!((a.height() / a.width() - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn config_errors() {
        assert!(generate_anchors(&[(8, 32.0)], &[], &[1.0], (64, 64)).is_err());
        assert!(generate_anchors(&[(8, 32.0)], &[1.0], &[], (64, 64)).is_err());
        assert!(generate_anchors(&[(16, 32.0), (8, 32.0)], &[1.0], &[1.0], (64, 64)).is_err());
        assert!(generate_anchors(&[(8, 32.0)], &[1.0], &[1.0], (0, 64)).is_err());
    }
}
