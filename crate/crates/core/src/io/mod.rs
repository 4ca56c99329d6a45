//! File formats: PGM grids, checkpoints and JSON sidecars.

pub mod checkpoint;
pub mod pgm;
pub mod sidecar;
