//! Procedural texture datasets for smoke tests and learnability runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Axis-aligned stripes, random orientation.
    Stripes,
    Checkerboard,
}

const MIN_CONTRAST: f32 = 0.25;

fn two_colors<R: Rng>(rng: &mut R) -> ([f32; 3], [f32; 3]) {
    let luma = |c: &[f32; 3]| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    loop {
        let a = [rng.random(), rng.random(), rng.random()];
        let b = [rng.random(), rng.random(), rng.random()];
        if (luma(&a) - luma(&b)).abs() >= MIN_CONTRAST {
            return (a, b);
        }
    }
}

/// Smallest and largest cell side (half period) in pixels. A full period
/// fits inside the 7 px receptive field of the default first level.
pub const CELL_RANGE: (usize, usize) = (2, 3);

/// One `size x size` texture image with a random cell side in [`CELL_RANGE`].
pub fn texture_image(kind: Texture, size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = rng.random_range(CELL_RANGE.0..=CELL_RANGE.1);
    let (py, px) = (rng.random_range(0..2 * cell), rng.random_range(0..2 * cell));
    let vertical = rng.random_bool(0.5);
    let (a, b) = two_colors(&mut rng);
    let mut img = Image::filled(size, size, a);
    for y in 0..size {
        for x in 0..size {
            let by = (y + py) / cell % 2 == 1;
            let bx = (x + px) / cell % 2 == 1;
            let second = match kind {
                Texture::Stripes if vertical => bx,
                Texture::Stripes => by,
                Texture::Checkerboard => bx ^ by,
            };
            if second {
                for (c, &v) in b.iter().enumerate() {
                    img.set(c, y, x, v);
                }
            }
        }
    }
    img
}

pub fn texture_dataset(kind: Texture, count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| texture_image(kind, size, super::mix_seed(seed, i as u64)))
        .collect()
}
