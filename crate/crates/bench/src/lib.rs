//! Fixtures shared by the criterion benches in `benches/`.

use astg_core::simworld::World;
use astg_core::{generate, GenParams, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rendered scenario at the default generator settings.
pub fn world(seed: u64) -> World {
    generate(seed, &GenParams::default()).expect("default params are feasible").rasterize()
}

/// Random blob-ish mask: a union of `n` rectangles.
pub fn random_mask(seed: u64, width: u32, height: u32, n: usize) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![false; (width * height) as usize];
    for _ in 0..n {
        let (x, y) = (rng.random_range(0..width), rng.random_range(0..height));
        let (w, h) = (rng.random_range(1..=width / 4), rng.random_range(1..=height / 4));
        for yy in y..(y + h).min(height) {
            for xx in x..(x + w).min(width) {
                bits[(yy * width + xx) as usize] = true;
            }
        }
    }
    Mask::from_bitmap(0, width, height, &bits)
}
