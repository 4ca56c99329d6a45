//! JSON sidecars written next to masks and label grids.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::BoxLabel;
use crate::layer_split::LayerMaskSet;
use crate::noise_mask::{MaskGenConfig, NoiseMask};

/// Detection labels; box corners are in pixels (canonical cells times `granularity`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSidecar {
    pub boxes: Vec<[usize; 4]>,
    pub granularity: usize,
    pub crop: [usize; 2],
}

impl BoxSidecar {
    pub fn new(boxes: &[BoxLabel], mask: &NoiseMask) -> Self {
        let s = mask.granularity.stride();
        BoxSidecar {
            boxes: boxes.iter().map(|b| b.to_array(s)).collect(),
            granularity: s,
            crop: mask.crop(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub crop: [usize; 2],
    pub granularity: usize,
    pub seed: u64,
    pub target_fraction: f64,
    pub tolerance: f64,
    pub ones: usize,
    pub cells: usize,
    pub fraction: f64,
}

impl MaskSidecar {
    pub fn new(config: &MaskGenConfig, mask: &NoiseMask) -> Self {
        MaskSidecar {
            crop: config.crop,
            granularity: config.granularity.stride(),
            seed: config.seed,
            target_fraction: config.target_fraction,
            tolerance: config.tolerance,
            ones: mask.grid.count_ones(),
            cells: mask.grid.len(),
            fraction: crate::noise_mask::mask_fraction(mask),
        }
    }
}

/// Component-to-level map of a layer split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSidecar {
    pub level_dims: Vec<[usize; 2]>,
    /// Component id (raster discovery order, from 1) to zero-based level.
    pub components: BTreeMap<u32, usize>,
    pub files: Vec<String>,
}

impl LayerSidecar {
    pub fn new(set: &LayerMaskSet, files: Vec<String>) -> Self {
        LayerSidecar {
            level_dims: set.level_dims.iter().map(|&(h, w)| [h, w]).collect(),
            components: set
                .assignment
                .iter()
                .enumerate()
                .map(|(i, &l)| (i as u32 + 1, l))
                .collect(),
            files,
        }
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("sidecars serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        kind: "JSON",
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
