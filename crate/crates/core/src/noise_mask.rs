//! Random binary noise masks at canonical (granularity) resolution.
//!
//! A mask is grown by stamping rescaled 3x3 Bernoulli(2/3) sample masks at
//! random offsets until the noise fraction enters the configured window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{nn_resize, BinaryGrid, Grid};

/// Probability of a set cell in a 3x3 sample mask.
pub const SAMPLE_P_ONE: f64 = 2.0 / 3.0;
pub const SAMPLE_SIZE: usize = 3;

const MAX_PLACEMENTS: usize = 100_000;

/// Side of the smallest replaceable square, in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Granularity(u32);

impl Granularity {
    pub const ALLOWED: [u32; 4] = [4, 8, 16, 32];

    pub fn new(stride: u32) -> Result<Self> {
        if Self::ALLOWED.contains(&stride) {
            Ok(Granularity(stride))
        } else {
            Err(Error::arg(
                "granularity",
                format!("stride must be one of {:?}, got {stride}", Self::ALLOWED),
            ))
        }
    }

    pub fn stride(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u32> for Granularity {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Granularity::new(v)
    }
}

impl From<Granularity> for u32 {
    fn from(g: Granularity) -> u32 {
        g.0
    }
}

/// How a sample mask is scaled before placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Each axis uniform in `[ceil(dim/6), floor(2*dim/3)]` cells.
    #[default]
    Interval,
    /// Each axis independently `2/3` or `1/6` of the grid dimension.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskGenConfig {
    /// Crop size in pixels, `[height, width]`.
    pub crop: [usize; 2],
    pub granularity: Granularity,
    pub target_fraction: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub rescale: RescaleMode,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        MaskGenConfig {
            crop: [224, 224],
            granularity: Granularity(4),
            target_fraction: 0.2,
            tolerance: 0.02,
            seed: 0,
            rescale: RescaleMode::Interval,
        }
    }
}

impl MaskGenConfig {
    /// Canonical grid dims: crop divided by the granularity stride.
    pub fn grid_dims(&self) -> (usize, usize) {
        let s = self.granularity.stride();
        (self.crop[0] / s, self.crop[1] / s)
    }

    /// Inclusive range of admissible set-cell counts.
    pub fn count_window(&self) -> (usize, usize) {
        let (h, w) = self.grid_dims();
        let n = (h * w) as f64;
        let lo = ((self.target_fraction - self.tolerance) * n - 1e-9).ceil().max(1.0) as usize;
        let hi = (self.target_fraction * n + 1e-9).floor() as usize;
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.granularity.stride();
        for (axis, &c) in ["height", "width"].iter().zip(&self.crop) {
            if c == 0 || c % s != 0 {
                return Err(Error::arg(
                    "crop",
                    format!("crop {axis} {c} is not a positive multiple of granularity {s}"),
                ));
            }
        }
        let t = self.target_fraction;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::arg("target_fraction", format!("must lie in (0, 1), got {t}")));
        }
        if !(self.tolerance >= 0.0) || t - self.tolerance <= 0.0 {
            return Err(Error::arg(
                "tolerance",
                format!("target_fraction - tolerance must be positive, got {t} - {}", self.tolerance),
            ));
        }
        let (lo, hi) = self.count_window();
        let (h, w) = self.grid_dims();
        if lo > hi || hi >= h * w {
            return Err(Error::arg(
                "target_fraction",
                format!(
                    "no cell count in a {h}x{w} grid gives a fraction within [{}, {t}]",
                    t - self.tolerance
                ),
            ));
        }
        Ok(())
    }
}

/// Binary noise mask at canonical resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseMask {
    pub grid: BinaryGrid,
    pub granularity: Granularity,
}

impl NoiseMask {
    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// Crop size in pixels covered by this mask.
    pub fn crop(&self) -> [usize; 2] {
        let s = self.granularity.stride();
        [self.grid.height() * s, self.grid.width() * s]
    }
}

/// Draws a 3x3 mask with i.i.d. Bernoulli(2/3) cells, redrawing all-zero masks.
pub fn gen_sample_mask<R: Rng + ?Sized>(rng: &mut R) -> BinaryGrid {
    loop {
        let g = Grid::from_fn(SAMPLE_SIZE, SAMPLE_SIZE, |_, _| rng.random_bool(SAMPLE_P_ONE));
        if g.any() {
            return g;
        }
    }
}

/// Generates a mask deterministically from `config.seed`.
pub fn gen_noise_mask(config: &MaskGenConfig) -> Result<NoiseMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    gen_noise_mask_with(config, &mut rng)
}

/// Generates a mask drawing from `rng`; `config.seed` is ignored.
pub fn gen_noise_mask_with<R: Rng + ?Sized>(config: &MaskGenConfig, rng: &mut R) -> Result<NoiseMask> {
    config.validate()?;
    let (h, w) = config.grid_dims();
    let (lo, hi) = config.count_window();
    let mut grid = BinaryGrid::filled(h, w, false);
    let mut ones = 0usize;

    for _ in 0..MAX_PLACEMENTS {
        let sample = gen_sample_mask(rng);
        let ph = patch_extent(h, config.rescale, rng);
        let pw = patch_extent(w, config.rescale, rng);
        let patch = nn_resize(&sample, ph, pw)?;
        let oy = rng.random_range(0..=h - ph);
        let ox = rng.random_range(0..=w - pw);

        let mut added = Vec::new();
        for y in 0..ph {
            for x in 0..pw {
                if patch.get(y, x) && !grid.get(oy + y, ox + x) {
                    grid.set(oy + y, ox + x, true);
                    added.push((oy + y, ox + x));
                }
            }
        }
        ones += added.len();

        if ones >= lo {
            // Trim the overshoot from the last placement only.
            while ones > hi {
                let (y, x) = added.swap_remove(rng.random_range(0..added.len()));
                grid.set(y, x, false);
                ones -= 1;
            }
            return Ok(NoiseMask {
                grid,
                granularity: config.granularity,
            });
        }
    }
    Err(Error::arg(
        "target_fraction",
        format!("window not reached after {MAX_PLACEMENTS} placements"),
    ))
}

fn patch_extent<R: Rng + ?Sized>(dim: usize, mode: RescaleMode, rng: &mut R) -> usize {
    match mode {
        RescaleMode::Interval => {
            let lo = dim.div_ceil(6).clamp(1, dim);
            let hi = (2 * dim / 3).clamp(lo, dim);
            rng.random_range(lo..=hi)
        }
        RescaleMode::Fixed => {
            let f = if rng.random_bool(0.5) { 2.0 / 3.0 } else { 1.0 / 6.0 };
            ((dim as f64 * f).round() as usize).clamp(1, dim)
        }
    }
}

/// Fraction of set cells.
pub fn mask_fraction(mask: &NoiseMask) -> f64 {
    grid_fraction(&mask.grid)
}

pub fn grid_fraction(grid: &BinaryGrid) -> f64 {
    if grid.is_empty() {
        return 0.0;
    }
    grid.count_ones() as f64 / grid.len() as f64
}
