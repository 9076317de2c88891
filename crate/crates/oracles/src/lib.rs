//! Slow, literal reference implementations for checking the optimized code paths.
//!
//! Nothing here depends on the crates under test; inputs are plain arrays.

use rand::Rng;

pub type Rect = [f64; 4];

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Boundary band by exhaustive search: for every pixel center, the minimum distance to
/// every polygon edge; cells of `stride` pixels are active when any pixel is within
/// `thickness / 2`.
pub fn boundary_band(polygons: &[Vec<[f64; 2]>], height: usize, width: usize, thickness: u32, stride: usize) -> Vec<u8> {
    let (rows, cols) = (height.div_ceil(stride), width.div_ceil(stride));
    let mut out = vec![0u8; rows * cols];
    let half = thickness as f64 / 2.0;
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = f64::INFINITY;
            for p in polygons {
                let n = p.len();
                for i in 0..n {
                    let (a, b) = (p[i], p[(i + 1) % n]);
                    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
                    let (wx, wy) = (px - a[0], py - a[1]);
                    let c1 = vx * wx + vy * wy;
                    let c2 = vx * vx + vy * vy;
                    let d2 = if c1 <= 0.0 || c2 == 0.0 {
                        wx * wx + wy * wy
                    } else if c1 >= c2 {
                        (px - b[0]).powi(2) + (py - b[1]).powi(2)
                    } else {
                        let u = c1 / c2;
                        (px - (a[0] + u * vx)).powi(2) + (py - (a[1] + u * vy)).powi(2)
                    };
                    best = best.min(d2);
                }
            }
            if best <= half * half {
                out[(y / stride) * cols + x / stride] = 1;
            }
        }
    }
    out
}

/// Carton labels from a full raster of `rects` (pixel spans `x0..x1`, `y0..y1`, drawn in
/// order). Returns `(inner, all)` per carton: `all` when every carton pixel is inside the
/// image and topmost; `inner` when every exposed pixel side faces the image border or has
/// another carton within two pixels outward.
pub fn carton_labels(rects: &[[i32; 4]], width: i32, height: i32) -> Vec<(bool, bool)> {
    let pad = 4 + rects
        .iter()
        .flat_map(|r| [-r[0], -r[1], r[2] - width, r[3] - height])
        .max()
        .unwrap_or(0)
        .max(0);
    let (cw, ch) = (width + 2 * pad, height + 2 * pad);
    let idx = |x: i32, y: i32| ((y + pad) * cw + (x + pad)) as usize;
    let in_canvas = |x: i32, y: i32| x + pad >= 0 && x + pad < cw && y + pad >= 0 && y + pad < ch;
    let in_image = |x: i32, y: i32| x >= 0 && y >= 0 && x < width && y < height;

    let mut cover = vec![vec![false; (cw * ch) as usize]; rects.len()];
    let mut top = vec![usize::MAX; (cw * ch) as usize];
    for (i, r) in rects.iter().enumerate() {
        for y in r[1]..r[3] {
            for x in r[0]..r[2] {
                cover[i][idx(x, y)] = true;
                top[idx(x, y)] = i;
            }
        }
    }
    let covered_by_other =
        |i: usize, x: i32, y: i32| in_canvas(x, y) && cover.iter().enumerate().any(|(j, c)| j != i && c[idx(x, y)]);

    (0..rects.len())
        .map(|i| {
            let mut complete = true;
            let mut closed = true;
            for y in -pad..ch - pad {
                for x in -pad..cw - pad {
                    if !cover[i][idx(x, y)] {
                        continue;
                    }
                    if !in_image(x, y) || top[idx(x, y)] != i {
                        complete = false;
                    }
                    for (dx, dy) in [(0, -1), (1, 0), (0, 1), (-1, 0)] {
                        let (nx, ny) = (x + dx, y + dy);
                        if in_canvas(nx, ny) && cover[i][idx(nx, ny)] {
                            continue;
                        }
                        let edge = !in_image(x, y) || !in_image(nx, ny);
                        let touch = (0..=2).any(|k| covered_by_other(i, x + k * dx, y + k * dy));
                        if !edge && !touch {
                            closed = false;
                        }
                    }
                }
            }
            (closed, complete)
        })
        .collect()
}

fn area(r: &Rect) -> f64 {
    (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0)
}

fn overlap(a: &Rect, b: &Rect) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    let inter = w.max(0.0) * h.max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Detection problem for the AP oracle: per image, gts `(box, class)` and detections
/// `(box, class, score)`.
pub struct EvalProblem {
    pub images: Vec<(Vec<(Rect, usize)>, Vec<(Rect, usize, f64)>)>,
    pub classes: usize,
}

/// AP for one class, threshold and gt-area range `[lo, hi]` straight from the protocol:
/// greedy matching per image by score, out-of-range gts and the detections they absorb
/// ignored, then at each of 101 recall levels the best precision at any rank reaching it.
pub fn class_ap(p: &EvalProblem, class: usize, thr: f64, lo: f64, hi: f64) -> Option<f64> {
    let in_range = |r: &Rect| area(r) >= lo && area(r) <= hi;
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for (im, (gts, dets)) in p.images.iter().enumerate() {
        let gts: Vec<&Rect> = gts.iter().filter(|g| g.1 == class).map(|g| &g.0).collect();
        n_gt += gts.iter().filter(|g| in_range(g)).count();
        let mut ds: Vec<&(Rect, usize, f64)> = dets.iter().filter(|d| d.1 == class).collect();
        ds.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("finite scores"));
        ds.truncate(100);
        let mut taken = vec![false; gts.len()];
        for (rank, d) in ds.iter().enumerate() {
            let pick = |want_in: bool| {
                let mut best: Option<(usize, f64)> = None;
                for (g, r) in gts.iter().enumerate() {
                    let v = overlap(&d.0, r);
                    if taken[g] || in_range(r) != want_in || v < thr {
                        continue;
                    }
                    if best.is_none_or(|(_, b)| v >= b) {
                        best = Some((g, v));
                    }
                }
                best.map(|b| b.0)
            };
            match pick(true).or_else(|| pick(false)) {
                Some(g) => {
                    taken[g] = true;
                    if in_range(gts[g]) {
                        ranked.push((d.2, im, rank, true));
                    }
                }
                None => {
                    if in_range(&d.0) {
                        ranked.push((d.2, im, rank, false));
                    }
                }
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (k, r) in ranked.iter().enumerate() {
        if r.3 {
            tp += 1.0;
        }
        points.push((tp / n_gt as f64, tp / (k + 1) as f64));
    }
    let total: f64 = (0..=100)
        .map(|i| {
            let level = i as f64 / 100.0;
            points.iter().filter(|p| p.0 >= level).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

fn mean(v: &[Option<f64>]) -> Option<f64> {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Summary of the protocol: per-threshold AP over classes for thresholds
/// `0.50, 0.55, ..., 0.95`, their mean, and the small / medium / large bucket means.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub per_threshold: Vec<Option<f64>>,
    pub map: Option<f64>,
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

pub fn ap_table(p: &EvalProblem) -> OracleTable {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let per_threshold: Vec<Option<f64>> = thresholds
        .iter()
        .map(|&t| mean(&(0..p.classes).map(|c| class_ap(p, c, t, 0.0, f64::INFINITY)).collect::<Vec<_>>()))
        .collect();
    let bucket = |lo: f64, hi: f64| {
        let all: Vec<Option<f64>> =
            thresholds.iter().flat_map(|&t| (0..p.classes).map(move |c| class_ap(p, c, t, lo, hi))).collect();
        mean(&all)
    };
    OracleTable {
        map: mean(&per_threshold),
        per_threshold,
        small: bucket(0.0, 1024.0 - 1e-9),
        medium: bucket(1024.0, 9216.0),
        large: bucket(9216.0 + 1e-9, f64::INFINITY),
    }
}

fn random_rect(rng: &mut impl Rng) -> Rect {
    let w = rng.random_range(5.0..140.0);
    let h = rng.random_range(5.0..140.0);
    let x = rng.random_range(0.0..300.0);
    let y = rng.random_range(0.0..300.0);
    [x, y, x + w, y + h]
}

fn jitter(rng: &mut impl Rng, r: &Rect) -> Rect {
    let s = rng.random_range(0.0..0.3) * (r[2] - r[0]).min(r[3] - r[1]);
    let mut out = *r;
    for v in &mut out {
        *v += rng.random_range(-s..=s);
    }
    if out[2] <= out[0] + 1.0 {
        out[2] = out[0] + 1.0;
    }
    if out[3] <= out[1] + 1.0 {
        out[3] = out[1] + 1.0;
    }
    out
}

/// Small random detection problem: 1 to 5 images, up to 10 gts and 10 detections each,
/// with most detections jittered copies of a gt.
pub fn random_problem(rng: &mut impl Rng) -> EvalProblem {
    let classes = if rng.random_bool(0.5) { 1 } else { 4 };
    let n_images = rng.random_range(1..=5);
    let images = (0..n_images)
        .map(|_| {
            let n_gt = rng.random_range(0..=10);
            let gts: Vec<(Rect, usize)> = (0..n_gt).map(|_| (random_rect(rng), rng.random_range(0..classes))).collect();
            let n_det = rng.random_range(0..=10);
            let dets = (0..n_det)
                .map(|_| {
                    let score = rng.random_range(0.0..1.0);
                    if !gts.is_empty() && rng.random_bool(0.7) {
                        let g = &gts[rng.random_range(0..gts.len())];
                        let class = if rng.random_bool(0.85) { g.1 } else { rng.random_range(0..classes) };
                        (jitter(rng, &g.0), class, score)
                    } else {
                        (random_rect(rng), rng.random_range(0..classes), score)
                    }
                })
                .collect();
            (gts, dets)
        })
        .collect();
    EvalProblem { images, classes }
}
