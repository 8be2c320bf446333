//! Uniform 1D finite-volume mesh on `(-L, L)` and cell-average containers.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default mesh density, cells per unit length.
pub const DEFAULT_CELLS_PER_UNIT: f64 = 100.0;

/// Uniform mesh of `n_cells` cells covering `(-half_length, half_length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    half_length: f64,
    n_cells: usize,
    dx: f64,
}

impl Grid1D {
    pub fn new(half_length: f64, n_cells: usize) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::invalid("L", format!("half-length must be positive, got {half_length}")));
        }
        if n_cells < 4 {
            return Err(Error::invalid("n_cells", format!("need at least 4 cells, got {n_cells}")));
        }
        Ok(Self {
            half_length,
            n_cells,
            dx: 2.0 * half_length / n_cells as f64,
        })
    }

    /// Mesh with `round(2L * cells_per_unit)` cells.
    pub fn with_density(half_length: f64, cells_per_unit: f64) -> Result<Self> {
        if !(cells_per_unit.is_finite() && cells_per_unit > 0.0) {
            return Err(Error::invalid(
                "cells_per_unit",
                format!("must be positive, got {cells_per_unit}"),
            ));
        }
        let n = (2.0 * half_length * cells_per_unit).round();
        if !n.is_finite() || n < 0.0 {
            return Err(Error::invalid("L", format!("half-length must be positive, got {half_length}")));
        }
        Self::new(half_length, n as usize)
    }

    #[inline]
    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Center of cell `j`.
    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        -self.half_length + (j as f64 + 0.5) * self.dx
    }

    /// Left edge of cell `j` (`j == n_cells` gives the right boundary).
    #[inline]
    pub fn edge(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    pub(crate) fn same_as(&self, other: &Grid1D) -> bool {
        self.n_cells == other.n_cells && self.half_length == other.half_length
    }

    pub(crate) fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.n_cells,
                found: other.n_cells,
                expected_l: self.half_length,
                found_l: other.half_length,
            })
        }
    }
}

/// Cell averages of one species on a [`Grid1D`].
///
/// The container admits signed values (tendencies share the type); the
/// scheme is what keeps densities nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn uniform(grid: Grid1D, value: f64) -> Result<Self> {
        Self::from_values(grid, vec![value; grid.n_cells()])
    }

    pub fn from_values(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::invalid(
                "values",
                format!("expected {} cell values, got {}", grid.n_cells(), values.len()),
            ));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite entry at cell {j}")));
        }
        Ok(Self { grid, values })
    }

    /// Cell averages of `f`, integrated with a composite Gauss–Legendre rule per cell.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        // 3-point Gauss–Legendre nodes/weights on [-1, 1].
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let h = 0.5 * grid.dx();
        let values = (0..grid.n_cells())
            .map(|j| {
                let c = grid.center(j);
                0.5 * NODES
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(&x, w)| w * f(c + h * x))
                    .sum::<f64>()
            })
            .collect();
        Self::from_values(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total mass `sum_j u_j dx`.
    pub fn mass(&self) -> f64 {
        mass(self)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `a * self + b * other`, for linearity checks and RK stage combinations.
    pub fn lin_comb(&self, a: f64, other: &CellField, b: f64) -> Result<CellField> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(CellField {
            grid: self.grid,
            values,
        })
    }
}

/// Total mass of a field: `sum_j u_j dx`.
pub fn mass(f: &CellField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.dx()
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Cell averages of `(mass / 2 ell) * indicator(-ell, ell)`, with exact
/// partial-cell overlap at `x = ±ell`.
pub fn indicator_initial_data(grid: &Grid1D, ell: f64, mass: f64) -> Result<CellField> {
    if !(ell.is_finite() && ell > 0.0) {
        return Err(Error::invalid("ell", format!("must be positive, got {ell}")));
    }
    if ell >= grid.half_length() {
        return Err(Error::invalid(
            "ell",
            format!("ell = {ell} must be smaller than L = {}", grid.half_length()),
        ));
    }
    if !(mass.is_finite() && mass >= 0.0) {
        return Err(Error::invalid("mass", format!("must be nonnegative, got {mass}")));
    }
    let height = mass / (2.0 * ell);
    let dx = grid.dx();
    let values = (0..grid.n_cells())
        .map(|j| {
            let (a, b) = (grid.edge(j), grid.edge(j + 1));
            if a >= -ell && b <= ell {
                height
            } else {
                height * overlap(a, b, -ell, ell) / dx
            }
        })
        .collect();
    CellField::from_values(*grid, values)
}

/// Cell averages of a Gaussian of width `sigma` centered at `center`,
/// rescaled so the discrete mass equals `mass` (the tails beyond `±L` are
/// folded back in by the rescaling).
pub fn gaussian_initial_data(grid: &Grid1D, center: f64, sigma: f64, mass: f64) -> Result<CellField> {
    use statrs::function::erf::erf;

    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
    }
    if !(mass.is_finite() && mass >= 0.0) {
        return Err(Error::invalid("mass", format!("must be nonnegative, got {mass}")));
    }
    let cdf = |x: f64| 0.5 * (1.0 + erf((x - center) / (sigma * std::f64::consts::SQRT_2)));
    let dx = grid.dx();
    let mut values: Vec<f64> = (0..grid.n_cells())
        .map(|j| (cdf(grid.edge(j + 1)) - cdf(grid.edge(j))) / dx)
        .collect();
    let total: f64 = values.iter().sum::<f64>() * dx;
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v *= mass / total);
    }
    CellField::from_values(*grid, values)
}

/// Format a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Write a snapshot CSV: header `x,<names...>`, one row per cell center.
pub fn write_columns_csv<W: Write>(mut w: W, names: &[String], fields: &[&[f64]], grid: &Grid1D) -> Result<()> {
    write!(w, "x")?;
    for name in names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for j in 0..grid.n_cells() {
        write!(w, "{}", fmt_f64(grid.center(j)))?;
        for f in fields {
            write!(w, ",{}", fmt_f64(f[j]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Write cell fields as the snapshot CSV (`x,u1,u2,...`).
pub fn write_snapshot_csv<W: Write>(w: W, fields: &[CellField]) -> Result<()> {
    let Some(first) = fields.first() else {
        return Err(Error::invalid("fields", "no species to write"));
    };
    let names: Vec<String> = (1..=fields.len()).map(|i| format!("u{i}")).collect();
    let cols: Vec<&[f64]> = fields.iter().map(|f| f.values()).collect();
    write_columns_csv(w, &names, &cols, first.grid())
}
