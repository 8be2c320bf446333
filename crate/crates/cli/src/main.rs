use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aggdiff::runner::{convergence_study, preset, preset_names, preset_source, run_sweep, simulate, KernelSpec, RunConfig, SweepJob};
use aggdiff::{analyze, small_mass_constants, solve_detailed_balance, DetailedBalance, Error, KernelMatrix};
use anyhow::{bail, Context};
use clap::{ArgGroup, Parser, Subcommand};
use serde_json::json;

const EXIT_REJECTED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;

/// Simulate nonlocal aggregation-diffusion systems and check kernel hypotheses.
#[derive(Parser)]
#[command(name = "aggdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its run directory.
    #[command(group(ArgGroup::new("source").required(true).args(["config", "preset", "sweep"])))]
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Run several config files concurrently, one run per worker.
        #[arg(long, num_args = 1..)]
        sweep: Vec<PathBuf>,
        /// Worker count for --sweep.
        #[arg(long, default_value_t = 2)]
        jobs: usize,
        /// Output directory (for --sweep, the parent of one directory per config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override time.t_end.
        #[arg(long)]
        t_end: Option<f64>,
        /// Steps between progress lines on stderr; 0 silences them.
        #[arg(long)]
        progress_every: Option<usize>,
    },
    /// Print norms and hypothesis checks for one kernel as JSON.
    AnalyzeKernel {
        /// `tophat(alpha, R)`, `sampled:<csv>`, or an inline TOML table.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long = "D")]
        diffusion: Option<f64>,
        /// Resolution for the discretized checks.
        #[arg(long, default_value_t = 0.01)]
        dx: f64,
    },
    /// Solve detailed balance for a coupling matrix (JSON array of rows or CSV).
    CheckBalance {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Self-convergence study at doubled resolutions.
    #[command(group(ArgGroup::new("source").required(true).args(["config", "preset"])))]
    Convergence {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
    },
    /// List the built-in presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn exit_code_for(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_ABORTED
    } else if e.is_input() {
        EXIT_INVALID
    } else {
        EXIT_REJECTED
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code_for(e))
}

fn load_config(config: Option<&Path>, preset_name: Option<&str>) -> Result<RunConfig, Error> {
    match (config, preset_name) {
        (Some(path), _) => RunConfig::load(path),
        (None, Some(name)) => preset(name),
        (None, None) => unreachable!("clap requires a source"),
    }
}

fn default_out(config: &RunConfig, path: Option<&Path>) -> PathBuf {
    if let Some(dir) = &config.output.directory {
        return dir.clone();
    }
    let stem = config
        .name
        .clone()
        .or_else(|| path.and_then(|p| p.file_stem()).map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    PathBuf::from("runs").join(stem)
}

fn cmd_simulate(
    config_path: Option<PathBuf>,
    preset_name: Option<String>,
    sweep: Vec<PathBuf>,
    jobs: usize,
    out: Option<PathBuf>,
    t_end: Option<f64>,
    progress_every: Option<usize>,
) -> ExitCode {
    let adjust = |mut c: RunConfig| -> Result<RunConfig, Error> {
        if let Some(t) = t_end {
            c.time.t_end = t;
            c.time.snapshot_times.retain(|&s| s <= t);
            if !c.time.snapshot_times.contains(&t) {
                c.time.snapshot_times.push(t);
            }
            // Re-validate through the TOML front end so overrides obey the same rules.
            c = RunConfig::from_toml_str(&c.to_toml_string()?, None)?;
        }
        if let Some(p) = progress_every {
            c.time.progress_every = p;
        } else if c.time.progress_every == 0 {
            c.time.progress_every = 10_000;
        }
        Ok(c)
    };

    if !sweep.is_empty() {
        let mut batch = Vec::with_capacity(sweep.len());
        for path in &sweep {
            let config = match RunConfig::load(path).and_then(adjust) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}: ", path.display());
                    return fail(&e);
                }
            };
            let dir = match &out {
                Some(parent) => {
                    parent.join(path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned()))
                }
                None => default_out(&config, Some(path)),
            };
            batch.push(SweepJob {
                config,
                out_dir: Some(dir),
            });
        }
        let mut worst = 0u8;
        for (job, result) in batch.iter().zip(run_sweep(&batch, jobs)) {
            let dir = job.out_dir.as_deref().unwrap_or(Path::new(".")).display();
            match result {
                Ok(r) => println!("{dir}: {} steps to t = {}", r.steps, r.final_t),
                Err(e) => {
                    eprintln!("{dir}: error: {e}");
                    worst = worst.max(exit_code_for(&e));
                }
            }
        }
        return ExitCode::from(worst);
    }

    let config = match load_config(config_path.as_deref(), preset_name.as_deref()).and_then(adjust) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let dir = out.unwrap_or_else(|| default_out(&config, config_path.as_deref()));
    let mut progress = |t: f64, dt: f64, mass_err: f64| eprintln!("t={t:.6} dt={dt:.3e} mass_err={mass_err:.3e}");
    match simulate(&config, Some(&dir), Some(&mut progress)) {
        Ok(outcome) => {
            let r = &outcome.report;
            println!(
                "{}: {} steps to t = {}, max relative mass drift {:.3e}",
                dir.display(),
                r.steps,
                r.final_t,
                r.max_relative_mass_drift
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_analyze_kernel(spec: &str, mass: Option<f64>, diffusion: Option<f64>, dx: f64) -> ExitCode {
    let run = || -> Result<serde_json::Value, Error> {
        let spec = KernelSpec::parse(spec)?;
        let kernel = spec.build()?;
        let a = analyze(&kernel, dx)?;
        let mut v = serde_json::to_value(&a).expect("analysis serializes");
        let obj = v.as_object_mut().expect("analysis is an object");
        obj.insert("kernel".into(), serde_json::to_value(&spec).expect("spec serializes"));
        obj.insert("h1".into(), json!(a.h1()));
        obj.insert("h2".into(), json!(a.h2()));
        obj.insert("h4".into(), json!(a.h4()));
        if let (Some(m), Some(d)) = (mass, diffusion) {
            let c = small_mass_constants(&[d], &[m], &KernelMatrix::scalar(kernel))?[0];
            obj.insert("c".into(), json!(c));
            obj.insert("small_mass".into(), json!(a.h1() && c > 0.0));
        }
        Ok(v)
    };
    match run() {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn read_matrix(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of rows", path.display()));
    }
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a row of numbers", path.display(), k + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} contains no matrix rows", path.display());
    }
    Ok(rows)
}

fn cmd_check_balance(path: &Path) -> ExitCode {
    let matrix = match read_matrix(path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    match solve_detailed_balance(&matrix) {
        Ok(result) => {
            println!("{}", serde_json::to_string_pretty(&result).expect("json"));
            match result {
                DetailedBalance::Balanced { .. } => ExitCode::SUCCESS,
                DetailedBalance::Violated { witness } => {
                    eprintln!("detailed balance violated at {witness}");
                    ExitCode::from(EXIT_REJECTED)
                }
                DetailedBalance::Undetermined { .. } => ExitCode::from(EXIT_REJECTED),
            }
        }
        Err(e) => fail(&e),
    }
}

fn cmd_convergence(config: Option<PathBuf>, preset_name: Option<String>, levels: usize, as_json: bool) -> ExitCode {
    let result = load_config(config.as_deref(), preset_name.as_deref()).and_then(|c| convergence_study(&c, levels));
    match result {
        Ok(table) => {
            if as_json {
                println!("{}", serde_json::to_string_pretty(&table).expect("json"));
            } else {
                print!("{}", table.to_text());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_presets(name: Option<String>) -> ExitCode {
    match name {
        None => {
            for n in preset_names() {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Some(n) => match preset_source(&n) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => fail(&preset(&n).expect_err("unknown preset")),
        },
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate {
            config,
            preset,
            sweep,
            jobs,
            out,
            t_end,
            progress_every,
        } => cmd_simulate(config, preset, sweep, jobs, out, t_end, progress_every),
        Command::AnalyzeKernel {
            kernel,
            mass,
            diffusion,
            dx,
        } => cmd_analyze_kernel(&kernel, mass, diffusion, dx),
        Command::CheckBalance { matrix } => cmd_check_balance(&matrix),
        Command::Convergence {
            preset,
            config,
            levels,
            json,
        } => cmd_convergence(config, preset, levels, json),
        Command::Presets { name } => cmd_presets(name),
    }
}
