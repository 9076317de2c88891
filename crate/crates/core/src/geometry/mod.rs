//! Box algebra, anchors, delta coding, NMS and boundary rasterization.

mod anchors;
mod boundary;
mod boxes;
mod coder;
mod nms;
mod polygon;

pub use anchors::{generate_anchors, AnchorConfig, AnchorGrid, AnchorLevel};
pub use boundary::{rasterize_boundary, BoundaryMap};
pub use boxes::{giou, iou, iou_matrix, BBox};
pub use coder::{decode_deltas, encode_deltas, Deltas, DEFAULT_MAX_LOG_RATIO};
pub use nms::{nms, Detection};
pub use polygon::{Point, Polygon};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot encode against a box of non-positive size ({width} x {height})")]
    NonPositiveSize { width: f64, height: f64 },
}
