use serde::{Deserialize, Serialize};

use super::BBox;

pub type Point = [f64; 2];

/// Closed polygon given by its vertices in order; the closing edge is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    pub fn rectangle(b: &BBox) -> Self {
        Polygon::new(vec![
            [b.x_min, b.y_min],
            [b.x_max, b.y_min],
            [b.x_max, b.y_max],
            [b.x_min, b.y_max],
        ])
    }

    /// Parses a flat COCO coordinate list `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(coords: &[f64]) -> Option<Self> {
        if coords.len() % 2 != 0 {
            return None;
        }
        Some(Polygon::new(coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let twice: f64 = self.edges().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum();
        0.5 * twice.abs()
    }

    /// Tight axis-aligned hull. Empty polygons give a zero box at the origin.
    pub fn bbox(&self) -> BBox {
        if self.vertices.is_empty() {
            return BBox::new(0.0, 0.0, 0.0, 0.0);
        }
        let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            b.x_min = b.x_min.min(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.x_max = b.x_max.max(p[0]);
            b.y_max = b.y_max.max(p[1]);
        }
        b
    }

    /// True when no two non-adjacent edges touch or cross.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.vertices
            .iter()
            .all(|p| p[0] >= 0.0 && p[0] <= width && p[1] >= 0.0 && p[1] <= height)
    }

    /// Sutherland–Hodgman clip against the image rectangle `[0, width] x [0, height]`.
    pub fn clip_to(&self, width: f64, height: f64) -> Polygon {
        let mut out = self.vertices.clone();
        // (axis, bound, keep_if_less)
        let planes = [(0usize, 0.0, false), (0, width, true), (1, 0.0, false), (1, height, true)];
        for (axis, bound, keep_less) in planes {
            if out.is_empty() {
                break;
            }
            let inside = |p: &Point| if keep_less { p[axis] <= bound } else { p[axis] >= bound };
            let input = std::mem::take(&mut out);
            for i in 0..input.len() {
                let cur = input[i];
                let prev = input[(i + input.len() - 1) % input.len()];
                let cross = |a: Point, b: Point| {
                    let t = (bound - a[axis]) / (b[axis] - a[axis]);
                    let mut p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    p[axis] = bound;
                    p
                };
                match (inside(&prev), inside(&cur)) {
                    (true, true) => out.push(cur),
                    (true, false) => out.push(cross(prev, cur)),
                    (false, true) => {
                        out.push(cross(prev, cur));
                        out.push(cur);
                    }
                    (false, false) => {}
                }
            }
        }
        out.dedup();
        if out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        Polygon::new(out)
    }
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_area_and_hull() {
        let p = Polygon::new(vec![[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0]]);
        assert_eq!(p.area(), 100.0);
        assert_eq!(p.bbox(), BBox::new(10.0, 10.0, 20.0, 20.0));
        assert!(p.is_simple());
    }

    #[test]
    fn bowtie_is_not_simple() {
        let p = Polygon::new(vec![[0.0, 0.0], [10.0, 10.0], [10.0, 0.0], [0.0, 10.0]]);
        assert!(!p.is_simple());
    }

    #[test]
    fn clip_truncates_to_image() {
        let p = Polygon::rectangle(&BBox::new(-5.0, -5.0, 10.0, 10.0));
        let c = p.clip_to(8.0, 100.0);
        assert_eq!(c.bbox(), BBox::new(0.0, 0.0, 8.0, 10.0));
        assert_eq!(c.area(), 80.0);
        assert!(c.within(8.0, 100.0));
    }

    #[test]
    fn flat_round_trip() {
        let p = Polygon::new(vec![[1.5, 2.0], [3.0, 4.0], [0.0, 7.0]]);
        assert_eq!(Polygon::from_flat(&p.to_flat()), Some(p));
        assert_eq!(Polygon::from_flat(&[1.0, 2.0, 3.0]), None);
    }
}
