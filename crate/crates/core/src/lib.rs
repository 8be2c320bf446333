//! Finite-volume solver and hypothesis checks for one-dimensional
//! aggregation-diffusion systems with nonlocal interaction kernels.
//!
//! Each species evolves by
//! `du_i/dt = d/dx ( u_i d/dx ( D_i log u_i + sum_l K_il * u_l ) )`
//! on `[-L, L]` with no-flux walls.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod kernel;
pub mod nonlocal;
pub mod runner;
pub mod scheme;

pub use diagnostics::{
    count_local_maxima, count_peaks, entropy, free_energy, interaction_energy, second_moment, steadiness, DiagnosticsRecord,
    EnergyWeights, DEFAULT_PEAK_PROMINENCE, DEFAULT_U_ESS,
};
pub use error::{Error, Result};
pub use grid::{gaussian_initial_data, indicator_initial_data, mass, CellField, Grid1D, DEFAULT_CELLS_PER_UNIT};
pub use integrate::{run, ssp_rk3_step, stable_dt, NoopObserver, RunObserver, RunReport, StepOutcome, TimeControls};
pub use kernel::{
    analyze, small_mass_constants, solve_detailed_balance, tophat, BalanceWitness, DetailedBalance, HypothesisFlags,
    HypothesisReport, Kernel, KernelAnalysis, KernelMatrix, SampledKernel, TheoremApplicability,
};
pub use nonlocal::{ConvolutionMethod, ConvolutionPlan};
pub use scheme::{
    limited_slopes, potential, potentials, reconstruct_interface_values, rhs, velocities, SchemeParams, SystemState,
};
