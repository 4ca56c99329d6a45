//! Pseudo labels derived from a noise mask: boxes, semantic grid, instances.
//!
//! Regions are 4-connected components, so cells touching only at a corner
//! get separate boxes and separate instance ids.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{nn_resize, BinaryGrid, Grid};
use crate::noise_mask::NoiseMask;

/// Tight box in canonical grid cells; `x0, y0` inclusive, `x1, y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxLabel {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxLabel {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// `[x0, y0, x1, y1]`, multiplied by `scale` (the granularity stride for pixel space).
    pub fn to_array(&self, scale: usize) -> [usize; 4] {
        [self.x0 * scale, self.y0 * scale, self.x1 * scale, self.y1 * scale]
    }
}

/// Component id per cell (0 = background) and the number of components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub ids: Grid<u32>,
    pub count: usize,
}

/// 4-connected labeling; ids start at 1 in raster-scan discovery order.
pub fn connected_components(grid: &BinaryGrid) -> Components {
    let (h, w) = grid.dims();
    let mut ids = Grid::filled(h, w, 0u32);
    let mut count = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !grid.get(y, x) || ids.get(y, x) != 0 {
                continue;
            }
            count += 1;
            ids.set(y, x, count);
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                let mut visit = |ny: usize, nx: usize| {
                    if grid.get(ny, nx) && ids.get(ny, nx) == 0 {
                        ids.set(ny, nx, count);
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx);
                }
                if cx > 0 {
                    visit(cy, cx - 1);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1);
                }
            }
        }
    }
    Components {
        ids,
        count: count as usize,
    }
}

/// Tight box of every component of `ids`, ordered by component id.
pub fn boxes_from_components(components: &Components) -> Vec<BoxLabel> {
    let mut boxes: Vec<Option<BoxLabel>> = vec![None; components.count];
    let ids = &components.ids;
    for y in 0..ids.height() {
        for x in 0..ids.width() {
            let id = ids.get(y, x) as usize;
            if id == 0 {
                continue;
            }
            let b = boxes[id - 1].get_or_insert(BoxLabel {
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
            });
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x + 1);
            b.y1 = b.y1.max(y + 1);
        }
    }
    boxes.into_iter().map(|b| b.expect("every id has a cell")).collect()
}

/// Detection pseudo labels: one tight box per component.
pub fn boxes_from_mask(mask: &NoiseMask) -> Vec<BoxLabel> {
    boxes_from_components(&connected_components(&mask.grid))
}

/// Semantic pseudo label: the mask resized to `(out_h, out_w)` by nearest neighbour.
pub fn semantic_from_mask(mask: &NoiseMask, out_h: usize, out_w: usize) -> Result<BinaryGrid> {
    nn_resize(&mask.grid, out_h, out_w)
}

/// How cells are assigned to instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceRule {
    /// Instance id is the connected-component id.
    #[default]
    Component,
    /// Every unlabeled set cell inside box `k` (boxes visited in id order)
    /// takes id `k`, so an enclosing box can capture a foreign component.
    BoxInterior,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabel {
    /// 0 = background, k >= 1 = instance k.
    pub ids: Grid<u32>,
    /// `boxes[k - 1]` is the tight box of instance `k`.
    pub boxes: Vec<BoxLabel>,
}

pub fn instances_from_mask(mask: &NoiseMask) -> InstanceLabel {
    instances_with_rule(mask, InstanceRule::Component)
}

pub fn instances_with_rule(mask: &NoiseMask, rule: InstanceRule) -> InstanceLabel {
    let comps = connected_components(&mask.grid);
    let boxes = boxes_from_components(&comps);
    let ids = match rule {
        InstanceRule::Component => comps.ids,
        InstanceRule::BoxInterior => {
            let (h, w) = mask.dims();
            let mut ids = Grid::filled(h, w, 0u32);
            for (k, b) in boxes.iter().enumerate() {
                for y in b.y0..b.y1 {
                    for x in b.x0..b.x1 {
                        if mask.grid.get(y, x) && ids.get(y, x) == 0 {
                            ids.set(y, x, k as u32 + 1);
                        }
                    }
                }
            }
            ids
        }
    };
    InstanceLabel { ids, boxes }
}
