//! Running a configuration and writing its run directory:
//!
//! ```text
//! <dir>/snapshots/t_<t>.csv      x,u1,..,un
//! <dir>/snapshots/xi_t_<t>.csv   x,xi1,..,xin
//! <dir>/diagnostics.csv
//! <dir>/report.json
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{csv_header, write_csv_row, DiagnosticsRecord, EnergyWeights};
use crate::error::{Error, Result};
use crate::grid::{write_snapshot_csv, CellField, Grid1D};
use crate::integrate::{run, RunObserver, RunReport};
use crate::kernel::HypothesisReport;
use crate::scheme::{potentials, SystemState};

use super::config::{OutputFormat, RunConfig};

pub const ABORT_DUMP_FILE: &str = "abort_state.csv";

/// Densities and potentials at one snapshot time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub fields: Vec<CellField>,
    pub xi: Vec<CellField>,
}

/// In-memory results of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
    pub hypotheses: HypothesisReport,
    pub weights: EnergyWeights,
    pub u_ess: f64,
    pub final_state: SystemState,
}

/// `t_<t>.csv`, with `t` in shortest round-trip form (`2.7`, `100`).
pub fn snapshot_file_name(t: f64) -> String {
    format!("t_{t}.csv")
}

pub fn xi_file_name(t: f64) -> String {
    format!("xi_t_{t}.csv")
}

fn write_xi_csv<W: Write>(mut w: W, xi: &[CellField]) -> Result<()> {
    let grid: &Grid1D = xi[0].grid();
    let mut header = vec!["x".to_string()];
    header.extend((1..=xi.len()).map(|i| format!("xi{i}")));
    writeln!(w, "{}", header.join(","))?;
    for j in 0..grid.n_cells() {
        let mut row = vec![crate::grid::fmt_f64(grid.center(j))];
        row.extend(xi.iter().map(|f| crate::grid::fmt_f64(f.values()[j])));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

type Progress<'a> = &'a mut dyn FnMut(f64, f64, f64);

struct Recorder<'a> {
    weights: EnergyWeights,
    u_ess: f64,
    dir: Option<PathBuf>,
    write_snapshots: bool,
    write_xi: bool,
    diagnostics: Option<BufWriter<File>>,
    records: Vec<DiagnosticsRecord>,
    snapshots: Vec<Snapshot>,
    progress: Option<Progress<'a>>,
}

impl RunObserver for Recorder<'_> {
    fn snapshot(&mut self, state: &SystemState) -> Result<()> {
        let snap = Snapshot {
            t: state.t,
            fields: state.fields().to_vec(),
            xi: potentials(state)?,
        };
        if let Some(dir) = &self.dir {
            let sdir = dir.join("snapshots");
            if self.write_snapshots {
                write_snapshot_csv(BufWriter::new(File::create(sdir.join(snapshot_file_name(snap.t)))?), &snap.fields)?;
            }
            if self.write_xi {
                write_xi_csv(BufWriter::new(File::create(sdir.join(xi_file_name(snap.t)))?), &snap.xi)?;
            }
        }
        self.snapshots.push(snap);
        Ok(())
    }

    fn diagnostics(&mut self, state: &SystemState, _step: usize, dt: f64) -> Result<()> {
        let rec = DiagnosticsRecord::compute(state, &self.weights, self.u_ess, dt)?;
        if let Some(w) = &mut self.diagnostics {
            write_csv_row(&mut *w, &rec)?;
        }
        self.records.push(rec);
        Ok(())
    }

    fn progress(&mut self, t: f64, dt: f64, mass_err: f64) {
        if let Some(p) = &mut self.progress {
            p(t, dt, mass_err);
        }
    }
}

#[derive(Serialize)]
struct Software {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct GridInfo {
    #[serde(rename = "L")]
    half_length: f64,
    n_cells: usize,
    dx: f64,
}

#[derive(Serialize)]
struct SnapshotEntry {
    t: f64,
    file: Option<String>,
    xi_file: Option<String>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    software: Software,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config: &'a RunConfig,
    grid: GridInfo,
    u_floor: f64,
    u_ess: f64,
    energy_weights: &'a EnergyWeights,
    hypotheses: &'a HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RunReport>,
    snapshots: Vec<SnapshotEntry>,
}

/// Runs `config`, writing the run directory to `out_dir` when given.
///
/// A numerical failure is reported as [`Error::Aborted`] after the last
/// accepted state has been written to [`ABORT_DUMP_FILE`] (in `out_dir`, or
/// the system temporary directory without one).
pub fn simulate(config: &RunConfig, out_dir: Option<&Path>, progress: Option<Progress<'_>>) -> Result<RunOutcome> {
    let setup = config.build()?;
    let mut state = setup.state;
    let mut diagnostics = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("snapshots"))?;
        if config.wants(OutputFormat::Diagnostics) {
            let mut w = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
            writeln!(w, "{}", csv_header(config.n_species()))?;
            diagnostics = Some(w);
        }
    }
    let mut rec = Recorder {
        weights: setup.weights,
        u_ess: setup.u_ess,
        dir: out_dir.map(Path::to_path_buf),
        write_snapshots: config.wants(OutputFormat::Snapshots),
        write_xi: config.wants(OutputFormat::Xi),
        diagnostics,
        records: Vec::new(),
        snapshots: Vec::new(),
        progress,
    };
    let result = run(&mut state, &setup.controls, &mut rec);
    if let Some(w) = &mut rec.diagnostics {
        w.flush()?;
    }

    let snapshot_entries = || {
        rec.snapshots
            .iter()
            .map(|s| SnapshotEntry {
                t: s.t,
                file: config
                    .wants(OutputFormat::Snapshots)
                    .then(|| format!("snapshots/{}", snapshot_file_name(s.t))),
                xi_file: config
                    .wants(OutputFormat::Xi)
                    .then(|| format!("snapshots/{}", xi_file_name(s.t))),
            })
            .collect()
    };
    let grid = *state.grid();
    let report_file = |run: Option<RunReport>, error: Option<String>| ReportFile {
        software: Software {
            name: "aggdiff",
            version: env!("CARGO_PKG_VERSION"),
        },
        status: if error.is_some() { "aborted" } else { "completed" },
        error,
        config,
        grid: GridInfo {
            half_length: grid.half_length(),
            n_cells: grid.n_cells(),
            dx: grid.dx(),
        },
        u_floor: state.params().u_floor,
        u_ess: rec.u_ess,
        energy_weights: &rec.weights,
        hypotheses: &setup.hypotheses,
        run,
        snapshots: snapshot_entries(),
    };
    let write_report = |dir: &Path, file: &ReportFile| -> Result<()> {
        let text = serde_json::to_string_pretty(file).map_err(|e| Error::config("report", e.to_string()))?;
        fs::write(dir.join("report.json"), text + "\n")?;
        Ok(())
    };

    let report = match result {
        Ok(r) => r,
        Err(e) if e.is_numerical() => {
            let dump = match out_dir {
                Some(d) => d.join(ABORT_DUMP_FILE),
                None => std::env::temp_dir().join(format!("aggdiff-{}-{ABORT_DUMP_FILE}", std::process::id())),
            };
            write_snapshot_csv(BufWriter::new(File::create(&dump)?), state.fields())?;
            if let Some(dir) = out_dir {
                if config.wants(OutputFormat::Report) {
                    write_report(dir, &report_file(None, Some(e.to_string())))?;
                }
            }
            return Err(Error::Aborted {
                source: Box::new(e),
                dump,
            });
        }
        Err(e) => return Err(e),
    };

    if let Some(dir) = out_dir {
        if config.wants(OutputFormat::Report) {
            write_report(dir, &report_file(Some(report.clone()), None))?;
        }
    }
    let Recorder {
        weights,
        u_ess,
        records,
        snapshots,
        ..
    } = rec;
    Ok(RunOutcome {
        report,
        records,
        snapshots,
        hypotheses: setup.hypotheses,
        weights,
        u_ess,
        final_state: state,
    })
}
