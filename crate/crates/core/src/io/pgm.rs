//! Binary PGM (P5) for masks and label grids.
//!
//! Writers emit the fixed header `P5\n<w> <h>\n<maxval>\n`, so identical
//! grids always produce identical bytes. Masks use 0 = source, 255 = noise;
//! instance ids use 16-bit big-endian samples with maxval 65535.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, Grid};

/// Decoded PGM raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub maxval: u16,
    pub grid: Grid<u16>,
}

pub fn encode(grid: &Grid<u16>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", grid.width(), grid.height(), maxval).into_bytes();
    if maxval < 256 {
        out.extend(grid.cells().iter().map(|&v| v as u8));
    } else {
        for &v in grid.cells() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn encode_mask(mask: &BinaryGrid) -> Vec<u8> {
    encode(&mask.map(|b| if b { 255 } else { 0 }), 255)
}

pub fn encode_ids(ids: &Grid<u32>) -> Result<Vec<u8>> {
    if let Some(&big) = ids.cells().iter().find(|&&v| v > u16::MAX as u32) {
        return Err(Error::arg("ids", format!("instance id {big} exceeds 16-bit PGM range")));
    }
    Ok(encode(&ids.map(|v| v as u16), u16::MAX))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let bad = |reason: String| Error::Format {
        kind: "PGM",
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            match bytes.get(*pos) {
                Some(b'#') => {
                    while bytes.get(*pos).is_some_and(|&c| c != b'\n') {
                        *pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => *pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header".into())),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            *pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(bad(format!("expected magic P5, found {magic:?}")));
    }
    let number = |name: &str, pos: &mut usize| -> Result<usize> {
        let t = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| bad(format!("{name} is not a number: {t:?}")))
    };
    let width = number("width", &mut pos)?;
    let height = number("height", &mut pos)?;
    let maxval = number("maxval", &mut pos)?;
    if width == 0 || height == 0 {
        return Err(bad(format!("empty raster {width}x{height}")));
    }
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(bad("missing raster separator".into()));
    }
    pos += 1;
    let n = width * height;
    let sample = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[pos..];
    if raster.len() != n * sample {
        return Err(bad(format!(
            "raster holds {} bytes, expected {}",
            raster.len(),
            n * sample
        )));
    }
    let cells: Vec<u16> = if sample == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(&v) = cells.iter().find(|&&v| v as usize > maxval) {
        return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        maxval: maxval as u16,
        grid: Grid::from_vec(height, width, cells)?,
    })
}

/// Binary mask from a PGM whose samples are all 0 or maxval.
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryGrid> {
    let pgm = decode(bytes, path)?;
    if let Some(&v) = pgm.grid.cells().iter().find(|&&v| v != 0 && v != pgm.maxval) {
        return Err(Error::Format {
            kind: "PGM",
            path: path.to_path_buf(),
            reason: format!("non-binary sample {v} (expected 0 or {})", pgm.maxval),
        });
    }
    Ok(pgm.grid.map(|v| v != 0))
}

pub fn read_mask(path: &Path) -> Result<BinaryGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: &Path, mask: &BinaryGrid) -> Result<()> {
    write_bytes(path, &encode_mask(mask))
}
