//! Partition of a noise mask across injection levels.
//!
//! Every 4-connected region of the mask goes to exactly one level, so the
//! per-level parts sum back to the mask cell for cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{center_index, BinaryGrid};
use crate::labels::connected_components;
use crate::noise_mask::NoiseMask;

/// How a canonical part is transported to a coarser level grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterMode {
    /// A coarse cell is set when any canonical cell it covers is set.
    #[default]
    Coverage,
    /// A coarse cell copies the canonical cell under its center.
    Center,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMaskSet {
    /// One part per level at canonical resolution; pairwise disjoint, summing to the mask.
    pub canonical_parts: Vec<BinaryGrid>,
    /// Each part rasterized to its level's spatial dims.
    pub layer_grids: Vec<BinaryGrid>,
    pub level_dims: Vec<(usize, usize)>,
    /// Level of each component, indexed by component id - 1.
    pub assignment: Vec<usize>,
}

impl LayerMaskSet {
    pub fn levels(&self) -> usize {
        self.level_dims.len()
    }

    /// All-empty set, i.e. no injection at any level.
    pub fn empty(canonical: (usize, usize), level_dims: &[(usize, usize)]) -> Self {
        LayerMaskSet {
            canonical_parts: vec![BinaryGrid::filled(canonical.0, canonical.1, false); level_dims.len()],
            layer_grids: level_dims
                .iter()
                .map(|&(h, w)| BinaryGrid::filled(h, w, false))
                .collect(),
            level_dims: level_dims.to_vec(),
            assignment: Vec::new(),
        }
    }
}

/// Assigns each component uniformly at random to one of the levels.
pub fn split_mask<R: Rng + ?Sized>(
    mask: &NoiseMask,
    level_dims: &[(usize, usize)],
    rng: &mut R,
) -> Result<LayerMaskSet> {
    let sites = vec![true; level_dims.len()];
    split_mask_sites(mask, level_dims, &sites, RasterMode::Coverage, rng)
}

/// Like [`split_mask`], restricted to levels whose `sites` flag is set.
/// Disabled levels receive empty parts.
pub fn split_mask_sites<R: Rng + ?Sized>(
    mask: &NoiseMask,
    level_dims: &[(usize, usize)],
    sites: &[bool],
    mode: RasterMode,
    rng: &mut R,
) -> Result<LayerMaskSet> {
    if level_dims.is_empty() {
        return Err(Error::arg("level_dims", "at least one level is required"));
    }
    if sites.len() != level_dims.len() {
        return Err(Error::arg(
            "sites",
            format!("{} flags for {} levels", sites.len(), level_dims.len()),
        ));
    }
    if let Some(&(h, w)) = level_dims.iter().find(|&&(h, w)| h == 0 || w == 0) {
        return Err(Error::arg("level_dims", format!("zero level dim {h}x{w}")));
    }
    let enabled: Vec<usize> = (0..sites.len()).filter(|&i| sites[i]).collect();
    if enabled.is_empty() {
        return Err(Error::arg("sites", "no injection site enabled"));
    }

    let (h, w) = mask.dims();
    let comps = connected_components(&mask.grid);
    let assignment: Vec<usize> = (0..comps.count)
        .map(|_| enabled[rng.random_range(0..enabled.len())])
        .collect();

    let mut parts = vec![BinaryGrid::filled(h, w, false); level_dims.len()];
    for y in 0..h {
        for x in 0..w {
            let id = comps.ids.get(y, x);
            if id != 0 {
                parts[assignment[id as usize - 1]].set(y, x, true);
            }
        }
    }
    let layer_grids = parts
        .iter()
        .zip(level_dims)
        .map(|(p, &dims)| rasterize_with(p, dims, mode))
        .collect();
    Ok(LayerMaskSet {
        canonical_parts: parts,
        layer_grids,
        level_dims: level_dims.to_vec(),
        assignment,
    })
}

/// Transports a canonical part to `level_dim` with the coverage rule.
pub fn rasterize(part: &BinaryGrid, level_dim: (usize, usize)) -> BinaryGrid {
    rasterize_with(part, level_dim, RasterMode::Coverage)
}

/// Finer or equal axes use center sampling (block replication at integer
/// factors). Coarser axes use `mode`.
pub fn rasterize_with(part: &BinaryGrid, level_dim: (usize, usize), mode: RasterMode) -> BinaryGrid {
    let (h, w) = part.dims();
    let (lh, lw) = level_dim;
    let rows: Vec<std::ops::Range<usize>> = (0..lh).map(|i| source_span(i, h, lh, mode)).collect();
    let cols: Vec<std::ops::Range<usize>> = (0..lw).map(|i| source_span(i, w, lw, mode)).collect();
    BinaryGrid::from_fn(lh, lw, |y, x| {
        rows[y]
            .clone()
            .any(|sy| cols[x].clone().any(|sx| part.get(sy, sx)))
    })
}

fn source_span(i: usize, src: usize, dst: usize, mode: RasterMode) -> std::ops::Range<usize> {
    if dst >= src || mode == RasterMode::Center {
        let c = center_index(i, src, dst);
        c..c + 1
    } else {
        (i * src / dst)..((i + 1) * src).div_ceil(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_mask::Granularity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nm(grid: BinaryGrid) -> NoiseMask {
        NoiseMask {
            grid,
            granularity: Granularity::new(4).unwrap(),
        }
    }

    #[test]
    fn single_level_keeps_mask() {
        let mut g = BinaryGrid::filled(6, 6, false);
        g.set(1, 1, true);
        g.set(4, 2, true);
        let set = split_mask(&nm(g.clone()), &[(6, 6)], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(set.canonical_parts[0], g);
        assert_eq!(set.layer_grids[0], g);
    }

    #[test]
    fn empty_mask_gives_empty_parts() {
        let g = BinaryGrid::filled(8, 8, false);
        let set = split_mask(&nm(g), &[(8, 8), (4, 4)], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(set.canonical_parts.iter().all(|p| !p.any()));
        assert!(set.layer_grids.iter().all(|p| !p.any()));
    }

    #[test]
    fn empty_level_list_is_an_error() {
        let g = BinaryGrid::filled(2, 2, true);
        assert!(split_mask(&nm(g), &[], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn coverage_keeps_single_cell() {
        let mut g = BinaryGrid::filled(56, 56, false);
        g.set(13, 41, true);
        let r = rasterize(&g, (7, 7));
        assert_eq!(r.count_ones(), 1);
        assert!(r.get(1, 5));
        // center sampling can lose it
        assert_eq!(rasterize_with(&g, (7, 7), RasterMode::Center).count_ones(), 0);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut g = BinaryGrid::filled(56, 56, false);
        for i in 0..56 {
            g.set(i, (i * 7) % 56, true);
        }
        let up = rasterize(&g, (112, 112));
        assert_eq!(up.count_ones(), 4 * g.count_ones());
        assert_eq!(rasterize(&g, (56, 56)), g);
    }

    #[test]
    fn disabled_sites_stay_empty() {
        let g = BinaryGrid::from_fn(8, 8, |y, x| (y + x) % 3 == 0);
        let set = split_mask_sites(
            &nm(g.clone()),
            &[(8, 8), (4, 4), (2, 2)],
            &[true, false, true],
            RasterMode::Coverage,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert!(!set.canonical_parts[1].any());
        assert!(set.assignment.iter().all(|&l| l != 1));
    }
}
