use super::{BBox, GeometryError};

/// `(dx, dy, dw, dh)` regression target relative to an anchor.
pub type Deltas = [f64; 4];

/// Default clamp on `|dw|`, `|dh|` at decode: `ln(1000 / 16)`.
pub const DEFAULT_MAX_LOG_RATIO: f64 = 4.135166556742356;

pub fn encode_deltas(anchor: &BBox, target: &BBox) -> Result<Deltas, GeometryError> {
    let (wa, ha) = (anchor.width(), anchor.height());
    if !(wa > 0.0 && ha > 0.0) {
        return Err(GeometryError::NonPositiveSize { width: wa, height: ha });
    }
    let (wt, ht) = (target.width(), target.height());
    if !(wt > 0.0 && ht > 0.0) {
        return Err(GeometryError::NonPositiveSize { width: wt, height: ht });
    }
    let (cxa, cya) = anchor.center();
    let (cxt, cyt) = target.center();
    Ok([(cxt - cxa) / wa, (cyt - cya) / ha, (wt / wa).ln(), (ht / ha).ln()])
}

/// Inverse of [`encode_deltas`]; `dw`, `dh` are clamped to `±max_log_ratio`.
pub fn decode_deltas(anchor: &BBox, deltas: &Deltas, max_log_ratio: f64) -> BBox {
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let dw = deltas[2].clamp(-max_log_ratio, max_log_ratio);
    let dh = deltas[3].clamp(-max_log_ratio, max_log_ratio);
    BBox::from_center(cxa + deltas[0] * wa, cya + deltas[1] * ha, wa * dw.exp(), ha * dh.exp())
}
