use super::{GeometryError, Point, Polygon};

/// Binary boundary supervision target at `1/stride` of the input resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMap {
    pub stride: usize,
    /// Total band width in input pixels.
    pub thickness: u32,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `{0, 1}` cells.
    pub data: Vec<u8>,
}

impl BoundaryMap {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn active_cells(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Binary PGM (P5, maxval 255) with active cells at 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
        out
    }
}

fn segment_distance_sq(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy));
    ex * ex + ey * ey
}

/// Rasterizes the contour band of every polygon and max-pools it to stride `stride`.
///
/// A pixel is in the band when its center lies within `thickness / 2` of some polygon
/// edge. The output has `ceil(H / stride) x ceil(W / stride)` cells.
pub fn rasterize_boundary(
    polygons: &[Polygon],
    image: (usize, usize),
    thickness: u32,
    stride: usize,
) -> Result<BoundaryMap, GeometryError> {
    if stride == 0 {
        return Err(GeometryError::Config("boundary stride must be at least 1".into()));
    }
    if (thickness as usize) < stride {
        return Err(GeometryError::Config(format!(
            "boundary thickness {thickness} is below the output stride {stride}"
        )));
    }
    let (height, width) = image;
    let rows = height.div_ceil(stride);
    let cols = width.div_ceil(stride);
    let mut data = vec![0u8; rows * cols];
    let radius = thickness as f64 / 2.0;
    let radius_sq = radius * radius;

    for polygon in polygons {
        for (a, b) in polygon.edges() {
            let x_lo = (a[0].min(b[0]) - radius - 0.5).floor().max(0.0) as usize;
            let y_lo = (a[1].min(b[1]) - radius - 0.5).floor().max(0.0) as usize;
            let x_hi = (a[0].max(b[0]) + radius - 0.5).ceil().min(width as f64 - 1.0);
            let y_hi = (a[1].max(b[1]) + radius - 0.5).ceil().min(height as f64 - 1.0);
            if x_hi < 0.0 || y_hi < 0.0 {
                continue;
            }
            for y in y_lo..=y_hi as usize {
                let cell_row = (y / stride) * cols;
                for x in x_lo..=x_hi as usize {
                    let cell = cell_row + x / stride;
                    if data[cell] != 0 {
                        continue;
                    }
                    if segment_distance_sq([x as f64 + 0.5, y as f64 + 0.5], a, b) <= radius_sq {
                        data[cell] = 1;
                    }
                }
            }
        }
    }
    Ok(BoundaryMap { stride, thickness, rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    #[test]
    fn empty_scene_is_all_zero() {
        let m = rasterize_boundary(&[], (64, 64), 8, 8).unwrap();
        assert_eq!((m.rows, m.cols), (8, 8));
        assert_eq!(m.active_cells(), 0);
    }

    #[test]
    fn thickness_below_stride_rejected() {
        assert!(rasterize_boundary(&[], (64, 64), 4, 8).is_err());
        assert!(rasterize_boundary(&[], (64, 64), 4, 0).is_err());
    }

    #[test]
    fn square_ring() {
        let sq = Polygon::rectangle(&BBox::new(16.0, 16.0, 48.0, 48.0));
        let m = rasterize_boundary(&[sq], (64, 64), 8, 8).unwrap();
        // band spans x in [12, 52) around each edge: cells 1..=6 on the ring, interior cells 3,4 free
        for r in 0..8 {
            for c in 0..8 {
                let on_ring = (1..=6).contains(&r) && (1..=6).contains(&c) && !((3..=4).contains(&r) && (3..=4).contains(&c));
                assert_eq!(m.get(r, c), on_ring as u8, "cell {r},{c}");
            }
        }
    }

    #[test]
    fn pgm_header() {
        let m = rasterize_boundary(&[], (16, 24), 8, 8).unwrap();
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pgm.len(), b"P5\n3 2\n255\n".len() + 6);
    }

    #[test]
    fn non_multiple_image_size() {
        let sq = Polygon::rectangle(&BBox::new(2.0, 2.0, 18.0, 9.0));
        let m = rasterize_boundary(&[sq], (20, 19), 8, 8).unwrap();
        assert_eq!((m.rows, m.cols), (3, 3));
        assert!(m.active_cells() > 0);
    }
}
