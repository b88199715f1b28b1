//! Readout heads.
//!
//! [`poly`] is the ideal degree-`d` polynomial probe solved by least squares;
//! [`grid`] drives it over synthetic single-degree targets; [`spn`] is the
//! spectral prediction network head with hand-written backpropagation.

pub mod grid;
pub mod poly;
pub mod spn;

pub use grid::{
    hard_ceiling_check, sample_directions, saturation_grid, synth_target, GridCell,
    HardCeiling, SynthTarget, DEFAULT_CELLS,
};
pub use poly::{fit_poly_probe, poly_features, PolyProbe, PolyProbeConfig, ProbeCell, ProbeResult};
pub use crate::linalg::Solver;
