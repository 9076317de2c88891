use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SceneLayout;

pub const PALETTE_SIZE: usize = 6;

/// Cardboard tones and a background, fixed by a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub cartons: [[u8; 3]; PALETTE_SIZE],
    pub background: [u8; 3],
}

impl Palette {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cartons = [[0u8; 3]; PALETTE_SIZE];
        for c in &mut cartons {
            *c = [rng.random_range(150..=215), rng.random_range(105..=165), rng.random_range(55..=115)];
        }
        let g = rng.random_range(60..=110);
        Palette { cartons, background: [g, g, g.saturating_add(8)] }
    }
}

fn shade(c: [u8; 3], f: f64) -> Rgb<u8> {
    Rgb(c.map(|v| (v as f64 * f).round().clamp(0.0, 255.0) as u8))
}

/// Draws cartons back to front: flat fill, corrugation ridges, a printed label block
/// and a dark 1 px seam along the border.
pub fn render_scene(layout: &SceneLayout, palette: &Palette) -> RgbImage {
    let (w, h) = (layout.width, layout.height);
    let mut img = RgbImage::from_fn(w, h, |_, y| {
        let f = 0.9 + 0.2 * y as f64 / h.max(1) as f64;
        shade(palette.background, f)
    });
    let image = layout.image_rect();
    for (r, &style) in layout.rects.iter().zip(&layout.styles) {
        let base = palette.cartons[style % PALETTE_SIZE];
        let (cw, ch) = (r.x1 - r.x0, r.y1 - r.y0);
        let glyph = (r.x0 + cw * 3 / 8, r.y0 + ch / 5, r.x0 + cw * 5 / 8, r.y0 + ch * 2 / 5);
        let period = (ch / 6).max(3);
        let c = r.intersect(&image);
        for y in c.y0..c.y1 {
            for x in c.x0..c.x1 {
                let seam = x == r.x0 || x == r.x1 - 1 || y == r.y0 || y == r.y1 - 1;
                let px = if seam {
                    shade(base, 0.45)
                } else if x >= glyph.0 && x < glyph.2 && y >= glyph.1 && y < glyph.3 {
                    shade(base, 0.3)
                } else if (y - r.y0) % period == 0 {
                    shade(base, 0.85)
                } else {
                    shade(base, 1.0)
                };
                img.put_pixel(x as u32, y as u32, px);
            }
        }
    }
    img
}
