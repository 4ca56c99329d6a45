//! Two-dimensional grids for masks, labels and per-cell maps.

use crate::error::{Error, Result};

/// Row-major `height x width` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid<V> {
    height: usize,
    width: usize,
    cells: Vec<V>,
}

/// Binary grid; `true` marks a noise cell.
pub type BinaryGrid = Grid<bool>;

impl<V: Copy> Grid<V> {
    pub fn filled(height: usize, width: usize, value: V) -> Self {
        Grid {
            height,
            width,
            cells: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, cells: Vec<V>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::dim(
                "grid",
                format!(
                    "{height}x{width} grid needs {} cells, got {}",
                    height * width,
                    cells.len()
                ),
            ));
        }
        Ok(Grid {
            height,
            width,
            cells,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            cells,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> V {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: V) {
        self.cells[y * self.width + x] = value;
    }

    pub fn cells(&self) -> &[V] {
        &self.cells
    }

    pub fn map<U: Copy>(&self, f: impl Fn(V) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl BinaryGrid {
    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn any(&self) -> bool {
        self.cells.iter().any(|&c| c)
    }
}

/// Source index sampled by output index `i` when resizing `src` cells to `dst`.
///
/// Center-sampling convention: `floor((i + 0.5) * src / dst)`, evaluated in
/// integers so the mapping is exact.
#[inline]
pub fn center_index(i: usize, src: usize, dst: usize) -> usize {
    ((2 * i + 1) * src) / (2 * dst)
}

/// Nearest-neighbour resize with center sampling.
///
/// `out[y][x] = in[floor((y+0.5)*H/out_h)][floor((x+0.5)*W/out_w)]`. Integer
/// upscales replicate each cell as a block; integer downscales of a block
/// replicated grid recover the original.
pub fn nn_resize<V: Copy>(grid: &Grid<V>, out_h: usize, out_w: usize) -> Result<Grid<V>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg(
            "out_dims",
            format!("output dims must be positive, got {out_h}x{out_w}"),
        ));
    }
    if grid.is_empty() {
        return Err(Error::arg("grid", "cannot resize an empty grid"));
    }
    let (h, w) = grid.dims();
    let cols: Vec<usize> = (0..out_w).map(|x| center_index(x, w, out_w)).collect();
    Ok(Grid::from_fn(out_h, out_w, |y, x| {
        grid.get(center_index(y, h, out_h), cols[x])
    }))
}
