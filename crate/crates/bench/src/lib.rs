//! Shared fixtures for the benchmarks.

use aggdiff::runner::preset;
use aggdiff::{CellField, Grid1D, SystemState};

/// A smooth positive field with some structure, on `n` cells of `[-L, L]`.
pub fn bumpy_field(grid: Grid1D) -> CellField {
    CellField::from_fn(grid, |x| 1.0 + 0.5 * (3.0 * x).sin() + (-x * x).exp())
        .expect("finite field")
}

/// Initial state of a built-in preset.
pub fn preset_state(name: &str) -> SystemState {
    preset(name)
        .and_then(|c| c.build())
        .expect("preset builds")
        .state
}
