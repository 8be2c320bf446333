//! Upwind finite-volume semi-discretization of
//! `du_i/dt = d/dx( u_i d/dx( D_i log u_i + sum_j K_ij * u_j ) )`
//! with no-flux walls.
//!
//! Interface velocities are differences of the discrete potential
//! `xi_i = D_i log u_i + sum_j K_ij * u_j`; fluxes upwind a minmod-limited
//! linear reconstruction of the density.

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid1D};
use crate::kernel::KernelMatrix;
use crate::nonlocal::ConvolutionPlan;

pub const DEFAULT_THETA: f64 = 2.0;

/// Largest admissible vacuum floor.
pub const MAX_U_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SchemeParams {
    /// Diffusion rate `D_i > 0` per species.
    pub diffusion: Vec<f64>,
    /// Minmod parameter in `[1, 2]`.
    pub theta: f64,
    /// Floor applied inside the logarithm only.
    pub u_floor: f64,
}

impl SchemeParams {
    pub fn new(diffusion: Vec<f64>, theta: f64, u_floor: f64) -> Result<Self> {
        if diffusion.is_empty() {
            return Err(Error::invalid("D", "need at least one species"));
        }
        if let Some(i) = diffusion.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid(
                "D",
                format!("diffusion rate of species {} must be positive, got {}", i + 1, diffusion[i]),
            ));
        }
        if !(1.0..=2.0).contains(&theta) {
            return Err(Error::invalid("theta", format!("must lie in [1, 2], got {theta}")));
        }
        if !(u_floor > 0.0 && u_floor <= MAX_U_FLOOR) {
            return Err(Error::invalid(
                "u_floor",
                format!("must lie in (0, {MAX_U_FLOOR:e}], got {u_floor:e}"),
            ));
        }
        Ok(Self {
            diffusion,
            theta,
            u_floor,
        })
    }

    pub fn n_species(&self) -> usize {
        self.diffusion.len()
    }

    /// `1e-12 * total_mass / 2L`, capped at [`MAX_U_FLOOR`].
    pub fn default_floor(total_mass: f64, grid: &Grid1D) -> f64 {
        let f = 1e-12 * total_mass / (2.0 * grid.half_length());
        if f > 0.0 {
            f.min(MAX_U_FLOOR)
        } else {
            1e-12
        }
    }
}

/// Evaluates `sum_j K_ij * u_j` for every species.
#[derive(Debug, Clone)]
enum Interaction {
    /// `K_ij = alpha_ij K`: one convolution per source species.
    Scaled { base: ConvolutionPlan, alpha: Vec<Vec<f64>> },
    Full(Vec<Vec<ConvolutionPlan>>),
}

impl Interaction {
    fn build(kernels: &KernelMatrix, grid: &Grid1D) -> Result<Self> {
        if let Some((base, alpha)) = kernels.scale_form() {
            return Ok(Interaction::Scaled {
                base: ConvolutionPlan::new(base, grid)?,
                alpha: alpha.to_vec(),
            });
        }
        let plans = kernels
            .entries()
            .iter()
            .map(|row| row.iter().map(|k| ConvolutionPlan::new(k, grid)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Interaction::Full(plans))
    }

    /// `out[i][j] = sum_l (K_il * u_l)_j`.
    fn potentials(&self, fields: &[Vec<f64>], out: &mut [Vec<f64>], scratch: &mut Vec<f64>) {
        let n = fields[0].len();
        for o in out.iter_mut() {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
        scratch.resize(n, 0.0);
        let scratch = &mut scratch[..];
        match self {
            Interaction::Scaled { base, alpha } => {
                for (l, u) in fields.iter().enumerate() {
                    if alpha.iter().all(|row| row[l] == 0.0) {
                        continue;
                    }
                    base.convolve_into(u, scratch);
                    for (i, o) in out.iter_mut().enumerate() {
                        let a = alpha[i][l];
                        if a != 0.0 {
                            o.iter_mut().zip(scratch.iter()).for_each(|(o, s)| *o += a * s);
                        }
                    }
                }
            }
            Interaction::Full(plans) => {
                for (i, o) in out.iter_mut().enumerate() {
                    for (l, u) in fields.iter().enumerate() {
                        plans[i][l].convolve_into(u, scratch);
                        o.iter_mut().zip(scratch.iter()).for_each(|(o, s)| *o += s);
                    }
                }
            }
        }
    }
}

/// Time, densities, parameters and interaction operators of a run.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    fields: Vec<CellField>,
    params: SchemeParams,
    kernels: KernelMatrix,
    interaction: Interaction,
    grid: Grid1D,
    pub(crate) buffers: StepBuffers,
}

impl SystemState {
    pub fn new(fields: Vec<CellField>, params: SchemeParams, kernels: KernelMatrix) -> Result<Self> {
        let n = params.n_species();
        if fields.len() != n || kernels.n_species() != n {
            return Err(Error::invalid(
                "species",
                format!(
                    "{} fields, {} diffusion rates and a {}x{} kernel matrix do not agree",
                    fields.len(),
                    n,
                    kernels.n_species(),
                    kernels.n_species()
                ),
            ));
        }
        let grid = *fields[0].grid();
        for f in &fields[1..] {
            grid.check_same(f.grid())?;
        }
        for (i, f) in fields.iter().enumerate() {
            if let Some(j) = f.values().iter().position(|&v| v < 0.0) {
                return Err(Error::invalid(
                    "initial",
                    format!("species {} has negative density {} at cell {j}", i + 1, f.values()[j]),
                ));
            }
        }
        let interaction = Interaction::build(&kernels, &grid)?;
        Ok(Self {
            t: 0.0,
            fields,
            params,
            kernels,
            interaction,
            grid,
            buffers: StepBuffers::default(),
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn fields(&self) -> &[CellField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &CellField {
        &self.fields[i]
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn kernels(&self) -> &KernelMatrix {
        &self.kernels
    }

    pub fn n_species(&self) -> usize {
        self.fields.len()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.fields.iter().map(CellField::mass).collect()
    }

    pub(crate) fn raw_fields(&self) -> Vec<Vec<f64>> {
        self.fields.iter().map(|f| f.values().to_vec()).collect()
    }

    pub(crate) fn set_raw_fields(&mut self, raw: &[Vec<f64>]) {
        for (f, v) in self.fields.iter_mut().zip(raw) {
            f.values_mut().copy_from_slice(v);
        }
    }

    /// `sum_l K_il * u_l` for every species `i`.
    pub fn interaction_potentials(&self) -> Vec<CellField> {
        let raw = self.raw_fields();
        let mut out = vec![vec![0.0; self.grid.n_cells()]; self.n_species()];
        self.interaction.potentials(&raw, &mut out, &mut Vec::new());
        out.into_iter()
            .map(|v| CellField::from_values(self.grid, v).expect("finite potentials"))
            .collect()
    }

    pub(crate) fn operator(&self) -> Operator<'_> {
        Operator {
            grid: &self.grid,
            params: &self.params,
            interaction: &self.interaction,
        }
    }
}

/// The right-hand side as a function of raw field arrays.
pub(crate) struct Operator<'a> {
    grid: &'a Grid1D,
    params: &'a SchemeParams,
    interaction: &'a Interaction,
}

pub(crate) struct Tendency {
    pub values: Vec<Vec<f64>>,
    /// `max |v|` over species and interfaces.
    pub max_speed: f64,
}

/// Scratch arrays reused across right-hand-side evaluations.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace {
    xi: Vec<Vec<f64>>,
    east: Vec<f64>,
    west: Vec<f64>,
    flux: Vec<f64>,
    scratch: Vec<f64>,
}

/// Stage storage for the time integrator.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepBuffers {
    pub u0: Vec<Vec<f64>>,
    pub u1: Vec<Vec<f64>>,
    pub u2: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub ws: Workspace,
}

pub(crate) fn resize_fields(v: &mut Vec<Vec<f64>>, species: usize, n: usize) {
    v.resize_with(species, Vec::new);
    for f in v.iter_mut() {
        f.resize(n, 0.0);
    }
}

impl Operator<'_> {
    fn potentials_into(&self, fields: &[Vec<f64>], t: f64, xi: &mut [Vec<f64>], scratch: &mut Vec<f64>) -> Result<()> {
        self.interaction.potentials(fields, xi, scratch);
        let floor = self.params.u_floor;
        let log_floor = floor.ln();
        for (i, (x, u)) in xi.iter_mut().zip(fields).enumerate() {
            let d = self.params.diffusion[i];
            let mut check = 0.0;
            for (x, &u) in x.iter_mut().zip(u) {
                *x += d * if u > floor { u.ln() } else { log_floor };
                check += *x;
            }
            if !check.is_finite() {
                let cell = x.iter().position(|v| !v.is_finite()).unwrap_or(0);
                return Err(Error::NonFinite { species: i, cell, t });
            }
        }
        Ok(())
    }

    fn potentials(&self, fields: &[Vec<f64>], t: f64) -> Result<Vec<Vec<f64>>> {
        let mut xi = vec![vec![0.0; self.grid.n_cells()]; fields.len()];
        self.potentials_into(fields, t, &mut xi, &mut Vec::new())?;
        Ok(xi)
    }

    /// Writes the tendencies into `out` and returns `max |v|`.
    pub(crate) fn evaluate_into(
        &self,
        fields: &[Vec<f64>],
        t: f64,
        ws: &mut Workspace,
        out: &mut [Vec<f64>],
    ) -> Result<f64> {
        let n = self.grid.n_cells();
        let dx = self.grid.dx();
        resize_fields(&mut ws.xi, fields.len(), n);
        ws.east.resize(n, 0.0);
        ws.west.resize(n, 0.0);
        ws.flux.resize(n + 1, 0.0);
        self.potentials_into(fields, t, &mut ws.xi, &mut ws.scratch)?;
        let (east, west, flux) = (&mut ws.east[..], &mut ws.west[..], &mut ws.flux[..]);
        flux[0] = 0.0;
        flux[n] = 0.0;
        let mut max_speed = 0.0f64;
        let inv_dx = 1.0 / dx;
        for ((u, xi), tend) in fields.iter().zip(&ws.xi).zip(out.iter_mut()) {
            reconstruct_into(u, self.params.theta, east, west);
            for j in 1..n {
                let v = (xi[j - 1] - xi[j]) * inv_dx;
                max_speed = max_speed.max(v.abs());
                flux[j] = v.max(0.0) * east[j - 1] + v.min(0.0) * west[j];
            }
            for (d, f) in tend.iter_mut().zip(flux.windows(2)) {
                *d = (f[0] - f[1]) * inv_dx;
            }
        }
        Ok(max_speed)
    }

    pub(crate) fn evaluate(&self, fields: &[Vec<f64>], t: f64) -> Result<Tendency> {
        let mut values = vec![vec![0.0; self.grid.n_cells()]; fields.len()];
        let max_speed = self.evaluate_into(fields, t, &mut Workspace::default(), &mut values)?;
        Ok(Tendency { values, max_speed })
    }
}

/// `xi_i = D_i log(max(u_i, u_floor)) + sum_l K_il * u_l` per cell.
pub fn potential(state: &SystemState, i: usize) -> Result<CellField> {
    let xi = state.operator().potentials(&state.raw_fields(), state.t)?;
    CellField::from_values(state.grid, xi.into_iter().nth(i).expect("species index in range"))
}

/// [`potential`] for every species at once.
pub fn potentials(state: &SystemState) -> Result<Vec<CellField>> {
    let xi = state.operator().potentials(&state.raw_fields(), state.t)?;
    xi.into_iter().map(|v| CellField::from_values(state.grid, v)).collect()
}

/// Interface velocities `-(xi_{j} - xi_{j-1}) / dx`, zero at both walls.
pub fn velocities(state: &SystemState, i: usize) -> Result<Vec<f64>> {
    let xi = potential(state, i)?;
    let xi = xi.values();
    let n = state.grid.n_cells();
    let dx = state.grid.dx();
    let mut v = vec![0.0; n + 1];
    for j in 1..n {
        v[j] = -(xi[j] - xi[j - 1]) / dx;
    }
    Ok(v)
}

#[inline]
fn minmod3(a: f64, b: f64, c: f64) -> f64 {
    if a > 0.0 && b > 0.0 && c > 0.0 {
        a.min(b).min(c)
    } else if a < 0.0 && b < 0.0 && c < 0.0 {
        a.max(b).max(c)
    } else {
        0.0
    }
}

/// Limited slopes: generalized minmod in the interior; at the two boundary
/// cells a one-sided difference clamped so the reconstruction stays in
/// `[0, 2 u_j]`.
fn slopes(u: &[f64], theta: f64, dx: f64) -> impl Iterator<Item = f64> + '_ {
    let n = u.len();
    (0..n).map(move |j| {
        if j == 0 || j == n - 1 {
            let (a, b) = if j == 0 { (u[0], u[1]) } else { (u[n - 2], u[n - 1]) };
            let bound = 2.0 * u[j].max(0.0) / dx;
            ((b - a) / dx).clamp(-bound, bound)
        } else {
            let back = u[j] - u[j - 1];
            let fwd = u[j + 1] - u[j];
            minmod3(theta * back / dx, 0.5 * (fwd + back) / dx, theta * fwd / dx)
        }
    })
}

fn reconstruct_into(u: &[f64], theta: f64, east: &mut [f64], west: &mut [f64]) {
    let n = u.len();
    let mut edge = |j: usize, a: f64, b: f64| {
        let bound = 2.0 * u[j].max(0.0);
        let half = 0.5 * (b - a).clamp(-bound, bound);
        east[j] = (u[j] + half).max(0.0);
        west[j] = (u[j] - half).max(0.0);
    };
    edge(0, u[0], u[1]);
    edge(n - 1, u[n - 2], u[n - 1]);
    // Slopes are carried premultiplied by dx.
    for j in 1..n - 1 {
        let back = u[j] - u[j - 1];
        let fwd = u[j + 1] - u[j];
        let half = 0.5 * minmod3(theta * back, 0.5 * (fwd + back), theta * fwd);
        east[j] = (u[j] + half).max(0.0);
        west[j] = (u[j] - half).max(0.0);
    }
}

/// Interface values `(east, west)` of the limited reconstruction in each
/// cell, clipped at zero.
pub fn reconstruct_interface_values(u: &CellField, theta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1.0..=2.0).contains(&theta) {
        return Err(Error::invalid("theta", format!("must lie in [1, 2], got {theta}")));
    }
    let n = u.grid().n_cells();
    let mut east = vec![0.0; n];
    let mut west = vec![0.0; n];
    reconstruct_into(u.values(), theta, &mut east, &mut west);
    Ok((east, west))
}

/// Limited slope per cell (exposed for testing the limiter).
pub fn limited_slopes(u: &CellField, theta: f64) -> Vec<f64> {
    slopes(u.values(), theta, u.grid().dx()).collect()
}

/// Tendencies `-(F_{j+1/2} - F_{j-1/2}) / dx` for every species.
pub fn rhs(state: &SystemState) -> Result<Vec<CellField>> {
    let t = state.operator().evaluate(&state.raw_fields(), state.t)?;
    t.values
        .into_iter()
        .map(|v| CellField::from_values(state.grid, v))
        .collect()
}
