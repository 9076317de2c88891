use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd_core::geometry::{rasterize_boundary, BBox, Polygon};

fn oracle(polys: &[Polygon], h: usize, w: usize, t: u32, s: usize) -> Vec<u8> {
    let raw: Vec<Vec<[f64; 2]>> = polys.iter().map(|p| p.vertices.clone()).collect();
    scd_oracles::boundary_band(&raw, h, w, t, s)
}

#[test]
fn square_ring_matches_oracle() {
    let sq = Polygon::rectangle(&BBox::new(16.0, 16.0, 48.0, 48.0));
    let m = rasterize_boundary(std::slice::from_ref(&sq), (64, 64), 8, 8).unwrap();
    assert_eq!(m.data, oracle(&[sq], 64, 64, 8, 8));
}

#[test]
fn rasterizer_is_bit_exact_on_100_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for scene in 0..100 {
        let h = rng.random_range(40..=130);
        let w = rng.random_range(40..=130);
        let s = [4usize, 8][rng.random_range(0..2)];
        let t = [s as u32, 16, 40, 96][rng.random_range(0..4)];
        let polys: Vec<Polygon> = (0..rng.random_range(0..6))
            .map(|_| {
                if rng.random_bool(0.6) {
                    let x = rng.random_range(-10.0..w as f64);
                    let y = rng.random_range(-10.0..h as f64);
                    Polygon::rectangle(&BBox::new(x, y, x + rng.random_range(3.0..60.0), y + rng.random_range(3.0..60.0)))
                } else {
                    let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                    let r = rng.random_range(4.0..30.0);
                    let n = rng.random_range(3..8);
                    let vertices = (0..n)
                        .map(|k| {
                            let a = std::f64::consts::TAU * k as f64 / n as f64;
                            [cx + r * a.cos(), cy + r * a.sin()]
                        })
                        .collect();
                    Polygon { vertices }
                }
            })
            .collect();
        let m = rasterize_boundary(&polys, (h, w), t, s).unwrap();
        assert_eq!(m.data, oracle(&polys, h, w, t, s), "scene {scene} h={h} w={w} t={t} s={s}");
    }
}
