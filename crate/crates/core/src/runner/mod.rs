//! Configuration, presets, run directories, convergence studies and sweeps.

pub mod config;
pub mod convergence;
pub mod output;
pub mod presets;
pub mod sweep;

pub use config::{
    InitialCondition, KernelSpec, KernelsConfig, OutputFormat, RunConfig, Setup, DEFAULT_SNAPSHOT_TIMES,
};
pub use convergence::{convergence_study, restrict_pairwise, ConvergenceLevel, ConvergenceTable};
pub use output::{simulate, snapshot_file_name, xi_file_name, RunOutcome, Snapshot, ABORT_DUMP_FILE};
pub use presets::{preset, preset_names, preset_source};
pub use sweep::{run_sweep, SweepJob};
