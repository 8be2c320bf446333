//! SSP-RK3 time stepping with a CFL-limited step and the simulation loop.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scheme::{resize_fields, StepBuffers, SystemState};

pub const DEFAULT_CFL: f64 = 0.25;

/// Fraction of the forward-Euler diffusive limit `dx^2 / (2 D)` used as the
/// default step cap.
pub const DIFFUSIVE_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeControls {
    pub t_end: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Times at which snapshots are emitted; steps are shortened to land on them.
    pub snapshot_times: Vec<f64>,
    pub diagnostic_stride: usize,
    /// Emit a progress report every this many steps; 0 disables.
    pub progress_every: usize,
}

impl TimeControls {
    /// Defaults for a run to `t_end`: `cfl = 0.25`, `dt_max` at
    /// [`DIFFUSIVE_SAFETY`] of the explicit diffusion limit, `dt_min = 1e-12`.
    pub fn new(t_end: f64, dx: f64, max_diffusion: f64) -> Self {
        Self {
            t_end,
            cfl: DEFAULT_CFL,
            dt_max: default_dt_max(dx, max_diffusion),
            dt_min: 1e-12,
            snapshot_times: Vec::new(),
            diagnostic_stride: 100,
            progress_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::invalid("t_end", format!("must be nonnegative, got {}", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::invalid("cfl", format!("must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max && self.dt_max.is_finite()) {
            return Err(Error::invalid(
                "dt_max",
                format!("need 0 < dt_min < dt_max, got dt_min = {}, dt_max = {}", self.dt_min, self.dt_max),
            ));
        }
        if self.diagnostic_stride == 0 {
            return Err(Error::invalid("diagnostic_stride", "must be positive"));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::invalid("snapshot_times", format!("invalid time {t}")));
        }
        Ok(())
    }
}

/// `DIFFUSIVE_SAFETY * dx^2 / (2 D_max)`.
pub fn default_dt_max(dx: f64, max_diffusion: f64) -> f64 {
    DIFFUSIVE_SAFETY * dx * dx / (2.0 * max_diffusion)
}

fn dt_from_speed(max_speed: f64, dx: f64, controls: &TimeControls, t: f64) -> Result<f64> {
    let dt = if max_speed > 0.0 {
        (controls.cfl * dx / max_speed).min(controls.dt_max)
    } else {
        controls.dt_max
    };
    if !(dt >= controls.dt_min) {
        return Err(Error::StepTooSmall {
            dt,
            dt_min: controls.dt_min,
            t,
        });
    }
    Ok(dt)
}

/// `min(dt_max, cfl dx / max|v|)`, or `dt_max` when every velocity vanishes.
pub fn stable_dt(state: &SystemState, controls: &TimeControls) -> Result<f64> {
    let tend = state.operator().evaluate(&state.raw_fields(), state.t)?;
    dt_from_speed(tend.max_speed, state.grid().dx(), controls, state.t)
}

/// What one accepted step did to the densities.
#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    /// Mass removed by clipping round-off negatives, per species.
    pub clipped_mass: Vec<f64>,
    /// `min_j u_j / max_j u_j` before clipping, minimized over species.
    pub min_ratio: f64,
}

/// `out = a x + b (y + dt L)`.
fn combine_into(out: &mut [Vec<f64>], a: f64, x: &[Vec<f64>], b: f64, y: &[Vec<f64>], dt: f64, l: &[Vec<f64>]) {
    for (((o, x), y), l) in out.iter_mut().zip(x).zip(y).zip(l) {
        for (((o, x), y), l) in o.iter_mut().zip(x).zip(y).zip(l) {
            *o = a * x + b * (y + dt * l);
        }
    }
}

#[cfg(test)]
fn combine(a: f64, x: &[Vec<f64>], b: f64, y: &[Vec<f64>], dt: f64, l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = x.to_vec();
    combine_into(&mut out, a, x, b, y, dt, l);
    out
}

/// Loads the current densities into `b.u0` and `L(u0)` into `b.l`; returns `max |v|`.
fn prepare(state: &SystemState, b: &mut StepBuffers) -> Result<f64> {
    let n = state.grid().n_cells();
    let species = state.n_species();
    for v in [&mut b.u0, &mut b.u1, &mut b.u2, &mut b.l] {
        resize_fields(v, species, n);
    }
    for (dst, f) in b.u0.iter_mut().zip(state.fields()) {
        dst.copy_from_slice(f.values());
    }
    state.operator().evaluate_into(&b.u0, state.t, &mut b.ws, &mut b.l)
}

/// Finishes a step whose first stage was set up by [`prepare`].
fn step_with(state: &mut SystemState, dt: f64, b: &mut StepBuffers) -> Result<StepOutcome> {
    let t = state.t;
    let op = state.operator();
    combine_into(&mut b.u1, 0.0, &b.u0, 1.0, &b.u0, dt, &b.l);
    op.evaluate_into(&b.u1, t + dt, &mut b.ws, &mut b.l)?;
    combine_into(&mut b.u2, 0.75, &b.u0, 0.25, &b.u1, dt, &b.l);
    op.evaluate_into(&b.u2, t + 0.5 * dt, &mut b.ws, &mut b.l)?;
    // (u0 + 2 (u2 + dt L)) / 3 rather than weights 1/3, 2/3: the rounded
    // weights sum to 1 - 5.6e-17 and would leak mass every step.
    combine_into(&mut b.u1, 1.0, &b.u0, 2.0, &b.u2, dt, &b.l);
    for v in b.u1.iter_mut().flatten() {
        *v /= 3.0;
    }
    let next = &mut b.u1;

    let dx = state.grid().dx();
    let mut outcome = StepOutcome {
        clipped_mass: vec![0.0; next.len()],
        min_ratio: f64::INFINITY,
    };
    for (i, u) in next.iter_mut().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in u.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            let cell = u.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { species: i, cell, t: t + dt });
        }
        if hi > 0.0 {
            outcome.min_ratio = outcome.min_ratio.min(lo / hi);
        }
        if lo < 0.0 {
            for v in u.iter_mut().filter(|v| **v < 0.0) {
                outcome.clipped_mass[i] += -*v * dx;
                *v = 0.0;
            }
        }
    }
    state.set_raw_fields(next);
    state.t = t + dt;
    Ok(outcome)
}

/// One Shu–Osher SSP-RK3 step of size `dt`.
pub fn ssp_rk3_step(state: &mut SystemState, dt: f64) -> Result<StepOutcome> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::invalid("dt", format!("must be finite and nonnegative, got {dt}")));
    }
    let mut b = std::mem::take(&mut state.buffers);
    let out = prepare(state, &mut b).and_then(|_| step_with(state, dt, &mut b));
    state.buffers = b;
    out
}

/// Callbacks fired by [`run`]. All methods default to no-ops.
pub trait RunObserver {
    fn snapshot(&mut self, _state: &SystemState) -> Result<()> {
        Ok(())
    }

    /// Called at the start, every `diagnostic_stride` steps, and at the end.
    fn diagnostics(&mut self, _state: &SystemState, _step: usize, _dt: f64) -> Result<()> {
        Ok(())
    }

    fn progress(&mut self, _t: f64, _dt: f64, _mass_err: f64) {}
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub final_t: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    pub initial_masses: Vec<f64>,
    pub final_masses: Vec<f64>,
    /// Largest `|m_i(t) - m_i(0)| / m_i(0)` seen at diagnostic records and at the end.
    pub max_relative_mass_drift: f64,
    pub clipped_mass: Vec<f64>,
    /// Most negative `min u / max u` observed before clipping (0 when no cell went negative).
    pub worst_negative_ratio: f64,
}

fn mass_error(state: &SystemState, initial: &[f64]) -> f64 {
    state
        .masses()
        .iter()
        .zip(initial)
        .map(|(m, m0)| if *m0 > 0.0 { ((m - m0) / m0).abs() } else { m.abs() })
        .fold(0.0, f64::max)
}

/// Advance `state` to `controls.t_end`.
///
/// Steps are truncated to land exactly on snapshot times and on `t_end`.
/// On error the state is left at the last accepted step.
pub fn run(state: &mut SystemState, controls: &TimeControls, observer: &mut dyn RunObserver) -> Result<RunReport> {
    controls.validate()?;
    let initial = state.masses();
    let mut snaps: Vec<f64> = controls
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| t >= state.t && t <= controls.t_end)
        .collect();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    let mut next_snap = 0;

    let mut report = RunReport {
        steps: 0,
        final_t: state.t,
        min_dt: f64::INFINITY,
        max_dt: 0.0,
        initial_masses: initial.clone(),
        final_masses: initial.clone(),
        max_relative_mass_drift: 0.0,
        clipped_mass: vec![0.0; state.n_species()],
        worst_negative_ratio: 0.0,
    };

    observer.diagnostics(state, 0, 0.0)?;
    while next_snap < snaps.len() && snaps[next_snap] <= state.t {
        observer.snapshot(state)?;
        next_snap += 1;
    }

    let mut buffers = std::mem::take(&mut state.buffers);
    let result = advance(state, controls, observer, &mut buffers, &mut report, &snaps, &initial);
    state.buffers = buffers;
    result?;
    if report.steps == 0 {
        report.min_dt = 0.0;
    }
    report.final_t = state.t;
    report.final_masses = state.masses();
    report.max_relative_mass_drift = report.max_relative_mass_drift.max(mass_error(state, &initial));
    Ok(report)
}

fn advance(
    state: &mut SystemState,
    controls: &TimeControls,
    observer: &mut dyn RunObserver,
    buffers: &mut StepBuffers,
    report: &mut RunReport,
    snaps: &[f64],
    initial: &[f64],
) -> Result<()> {
    let mut next_snap = 0;
    while next_snap < snaps.len() && snaps[next_snap] <= state.t {
        next_snap += 1;
    }
    let dx = state.grid().dx();
    let mut last_dt = 0.0;
    let mut recorded_at = 0;
    while state.t < controls.t_end {
        let speed = prepare(state, buffers)?;
        let dt_cfl = dt_from_speed(speed, dx, controls, state.t)?;
        let target = snaps.get(next_snap).copied().unwrap_or(controls.t_end).min(controls.t_end);
        let (dt, hit) = if state.t + dt_cfl >= target {
            (target - state.t, true)
        } else {
            (dt_cfl, false)
        };
        let outcome = step_with(state, dt, buffers)?;
        if hit {
            state.t = target;
        }
        report.steps += 1;
        report.min_dt = report.min_dt.min(dt);
        report.max_dt = report.max_dt.max(dt);
        report.worst_negative_ratio = report.worst_negative_ratio.min(outcome.min_ratio.min(0.0));
        for (c, o) in report.clipped_mass.iter_mut().zip(&outcome.clipped_mass) {
            *c += o;
        }
        last_dt = dt;

        if report.steps.is_multiple_of(controls.diagnostic_stride) {
            report.max_relative_mass_drift = report.max_relative_mass_drift.max(mass_error(state, initial));
            observer.diagnostics(state, report.steps, dt)?;
            recorded_at = report.steps;
        }
        if controls.progress_every > 0 && report.steps.is_multiple_of(controls.progress_every) {
            observer.progress(state.t, dt, mass_error(state, initial));
        }
        while next_snap < snaps.len() && snaps[next_snap] <= state.t {
            observer.snapshot(state)?;
            next_snap += 1;
        }
    }
    if report.steps > 0 && recorded_at != report.steps {
        observer.diagnostics(state, report.steps, last_dt)?;
    }
    Ok(())
}
