use crate::geometry::{decode_deltas, BBox, Deltas};

use super::LossGrad;

/// Elementwise smooth-L1 with transition point `beta`.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_derivative(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Sum of per-coordinate smooth-L1 over each box, averaged over boxes.
pub fn smooth_l1_loss(pred: &[Deltas], target: &[Deltas], beta: f64) -> f64 {
    smooth_l1_loss_grad(pred, target, beta).value
}

pub fn smooth_l1_loss_grad(pred: &[Deltas], target: &[Deltas], beta: f64) -> LossGrad {
    assert_eq!(pred.len(), target.len(), "smooth_l1_loss: length mismatch");
    if pred.is_empty() {
        return LossGrad { value: 0.0, grad: Vec::new() };
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len() * 4);
    for (p, t) in pred.iter().zip(target) {
        for c in 0..4 {
            let x = p[c] - t[c];
            value += smooth_l1(x, beta);
            grad.push(smooth_l1_derivative(x, beta) / n);
        }
    }
    LossGrad { value: value / n, grad }
}

struct Overlap {
    inter: f64,
    d_inter: [f64; 4],
    union: f64,
    d_union: [f64; 4],
}

fn overlap_with_grad(a: &BBox, b: &BBox) -> Overlap {
    let (aw, ah) = (a.width(), a.height());
    let area_a = aw * ah;
    let d_area = [-ah, -aw, ah, aw];
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
        let dx0 = if a.x_min > b.x_min { -1.0 } else { 0.0 };
        let dx1 = if a.x_max < b.x_max { 1.0 } else { 0.0 };
        let dy0 = if a.y_min > b.y_min { -1.0 } else { 0.0 };
        let dy1 = if a.y_max < b.y_max { 1.0 } else { 0.0 };
        (iw * ih, [dx0 * ih, dy0 * iw, dx1 * ih, dy1 * iw])
    } else {
        (0.0, [0.0; 4])
    };
    let union = area_a + b.area() - inter;
    let d_union = std::array::from_fn(|k| d_area[k] - d_inter[k]);
    Overlap { inter, d_inter, union, d_union }
}

/// IoU of `a` against `b` and its gradient with respect to `a`'s four coordinates.
pub fn iou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let o = overlap_with_grad(a, b);
    if o.union <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let u2 = o.union * o.union;
    let grad = std::array::from_fn(|k| (o.d_inter[k] * o.union - o.inter * o.d_union[k]) / u2);
    (o.inter / o.union, grad)
}

/// GIoU of `a` against `b` and its gradient with respect to `a`.
pub fn giou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let o = overlap_with_grad(a, b);
    if o.union <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let cw = a.x_max.max(b.x_max) - a.x_min.min(b.x_min);
    let ch = a.y_max.max(b.y_max) - a.y_min.min(b.y_min);
    let c = cw * ch;
    let dcw0 = if a.x_min < b.x_min { -1.0 } else { 0.0 };
    let dcw1 = if a.x_max > b.x_max { 1.0 } else { 0.0 };
    let dch0 = if a.y_min < b.y_min { -1.0 } else { 0.0 };
    let dch1 = if a.y_max > b.y_max { 1.0 } else { 0.0 };
    let d_c = [dcw0 * ch, dch0 * cw, dcw1 * ch, dch1 * cw];
    let u2 = o.union * o.union;
    let c2 = c * c;
    let value = o.inter / o.union - 1.0 + o.union / c;
    let grad = std::array::from_fn(|k| {
        (o.d_inter[k] * o.union - o.inter * o.d_union[k]) / u2 + (o.d_union[k] * c - o.union * d_c[k]) / c2
    });
    (value, grad)
}

/// Mean of `1 - GIoU` over box pairs.
pub fn giou_loss(pred: &[BBox], target: &[BBox]) -> f64 {
    giou_loss_grad(pred, target).value
}

/// Gradient is laid out as four coordinates per predicted box.
pub fn giou_loss_grad(pred: &[BBox], target: &[BBox]) -> LossGrad {
    assert_eq!(pred.len(), target.len(), "giou_loss: length mismatch");
    if pred.is_empty() {
        return LossGrad { value: 0.0, grad: Vec::new() };
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len() * 4);
    for (p, t) in pred.iter().zip(target) {
        let (g, dg) = giou_with_grad(p, t);
        value += 1.0 - g;
        grad.extend(dg.iter().map(|d| -d / n));
    }
    LossGrad { value: value / n, grad }
}

/// Decoded box plus `J[k][c] = d box[k] / d deltas[c]` (box as `x_min, y_min, x_max, y_max`).
pub fn decode_with_jacobian(anchor: &BBox, deltas: &Deltas, max_log_ratio: f64) -> (BBox, [[f64; 4]; 4]) {
    let b = decode_deltas(anchor, deltas, max_log_ratio);
    let (wa, ha) = (anchor.width(), anchor.height());
    let free = |d: f64| d > -max_log_ratio && d < max_log_ratio;
    let half_w = if free(deltas[2]) { 0.5 * b.width() } else { 0.0 };
    let half_h = if free(deltas[3]) { 0.5 * b.height() } else { 0.0 };
    let jac = [
        [wa, 0.0, -half_w, 0.0],
        [0.0, ha, 0.0, -half_h],
        [wa, 0.0, half_w, 0.0],
        [0.0, ha, 0.0, half_h],
    ];
    (b, jac)
}

/// Chains a gradient on box coordinates back to deltas.
pub(crate) fn box_grad_to_deltas(g: &[f64; 4], jac: &[[f64; 4]; 4]) -> Deltas {
    std::array::from_fn(|c| (0..4).map(|k| g[k] * jac[k][c]).sum())
}
