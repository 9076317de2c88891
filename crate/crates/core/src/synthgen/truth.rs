use serde::{Deserialize, Serialize};

use super::{PixelRect, SceneLayout};
use crate::annotations::Label;

/// Outward distance, in pixels, within which another carton counts as touching an edge.
pub const CONTACT_TOLERANCE: i32 = 1;

/// What lies just outside one unit segment of a carton contour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contact {
    Carton,
    ImageEdge,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstanceTruth {
    pub rect: PixelRect,
    /// Row-major, image sized; true where this carton is the topmost one.
    pub visible: Vec<bool>,
    pub visible_area: usize,
    /// Bounding rectangle of the visible pixels; empty when nothing is visible.
    pub visible_bounds: PixelRect,
    /// One flag per unit contour segment, clockwise from the top-left corner.
    pub segments: Vec<Contact>,
    /// Entirely inside the image and not covered by any later carton.
    pub face_complete: bool,
}

impl SceneInstanceTruth {
    pub fn is_inner(&self) -> bool {
        self.segments.iter().all(|&c| c != Contact::Free)
    }

    pub fn label(&self) -> Label {
        Label::from_parts(self.is_inner(), self.face_complete)
    }
}

/// Contour walk: for each unit segment, the pixel just inside it and the outward step.
pub(crate) fn contour(r: &PixelRect) -> Vec<((i32, i32), (i32, i32))> {
    let mut out = Vec::with_capacity(2 * ((r.x1 - r.x0) + (r.y1 - r.y0)).max(0) as usize);
    out.extend((r.x0..r.x1).map(|x| ((x, r.y0), (0, -1))));
    out.extend((r.y0..r.y1).map(|y| ((r.x1 - 1, y), (1, 0))));
    out.extend((r.x0..r.x1).rev().map(|x| ((x, r.y1 - 1), (0, 1))));
    out.extend((r.y0..r.y1).rev().map(|y| ((r.x0, y), (-1, 0))));
    out
}

pub fn compute_truths(layout: &SceneLayout) -> Vec<SceneInstanceTruth> {
    let (w, h) = (layout.width as i32, layout.height as i32);
    let image = layout.image_rect();
    let mut owner = vec![usize::MAX; (w * h) as usize];
    for (i, r) in layout.rects.iter().enumerate() {
        let c = r.intersect(&image);
        for y in c.y0..c.y1 {
            for x in c.x0..c.x1 {
                owner[(y * w + x) as usize] = i;
            }
        }
    }

    layout
        .rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let visible: Vec<bool> = owner.iter().map(|&o| o == i).collect();
            let mut bounds = PixelRect::new(w, h, 0, 0);
            let mut area = 0;
            for (k, _) in visible.iter().enumerate().filter(|(_, v)| **v) {
                let (x, y) = ((k as i32) % w, (k as i32) / w);
                bounds = PixelRect::new(bounds.x0.min(x), bounds.y0.min(y), bounds.x1.max(x + 1), bounds.y1.max(y + 1));
                area += 1;
            }
            if area == 0 {
                bounds = PixelRect::new(0, 0, 0, 0);
            }

            let segments = contour(r)
                .into_iter()
                .map(|((x, y), (dx, dy))| {
                    if !image.contains(x, y) || !image.contains(x + dx, y + dy) {
                        return Contact::ImageEdge;
                    }
                    let touched = layout.rects.iter().enumerate().any(|(j, other)| {
                        j != i && (0..=CONTACT_TOLERANCE + 1).any(|s| other.contains(x + s * dx, y + s * dy))
                    });
                    if touched {
                        Contact::Carton
                    } else {
                        Contact::Free
                    }
                })
                .collect();

            let inside = r.intersect(&image) == *r;
            let covered = layout.rects[i + 1..].iter().any(|o| !o.intersect(r).is_empty());
            SceneInstanceTruth {
                rect: *r,
                visible,
                visible_area: area,
                visible_bounds: bounds,
                segments,
                face_complete: inside && !covered,
            }
        })
        .collect()
}

pub fn derive_labels(truths: &[SceneInstanceTruth]) -> Vec<Label> {
    truths.iter().map(SceneInstanceTruth::label).collect()
}
