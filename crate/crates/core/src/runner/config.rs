//! Run configuration: TOML schema, validation with key paths, and
//! construction of the solver objects.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{EnergyWeights, DEFAULT_U_ESS};
use crate::error::{Error, Result};
use crate::grid::{gaussian_initial_data, indicator_initial_data, CellField, Grid1D, DEFAULT_CELLS_PER_UNIT};
use crate::integrate::{default_dt_max, TimeControls, DEFAULT_CFL};
use crate::kernel::{tophat, HypothesisReport, Kernel, KernelMatrix};
use crate::scheme::{SchemeParams, SystemState, DEFAULT_THETA, MAX_U_FLOOR};

/// Snapshot times used when a config does not list its own; the final
/// time is always added.
pub const DEFAULT_SNAPSHOT_TIMES: [f64; 6] = [0.0, 1.0, 2.7, 10.0, 100.0, 200.0];

pub const DEFAULT_DIAGNOSTIC_STRIDE: usize = 100;
pub const DEFAULT_DT_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Tophat {
        alpha: f64,
        #[serde(rename = "R")]
        radius: f64,
    },
    /// Cell-center samples in a two-column `x,value` CSV.
    Sampled { file: PathBuf },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match self {
            KernelSpec::Tophat { alpha, radius } => tophat(*alpha, *radius),
            KernelSpec::Sampled { file } => {
                let f = fs::File::open(file).map_err(|e| {
                    Error::config("kernels", format!("cannot open kernel file {}: {e}", file.display()))
                })?;
                Kernel::from_csv(std::io::BufReader::new(f))
            }
        }
    }

    /// Parses either an inline TOML table such as
    /// `{ type = "tophat", alpha = 2, R = 1 }` (braces optional) or the
    /// shorthands `tophat(alpha, R)` and `sampled:<path>`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(args) = t.strip_prefix("tophat(").and_then(|r| r.strip_suffix(')')) {
            let nums: Vec<&str> = args.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::config("kernel", format!("`{s}` is not a number")))
            };
            return match nums.as_slice() {
                [a, r] => Ok(KernelSpec::Tophat {
                    alpha: parse(a)?,
                    radius: parse(r)?,
                }),
                _ => Err(Error::config("kernel", "expected tophat(alpha, R)")),
            };
        }
        if let Some(path) = t.strip_prefix("sampled:") {
            return Ok(KernelSpec::Sampled {
                file: PathBuf::from(path.trim()),
            });
        }
        let body = t.strip_prefix('{').and_then(|r| r.strip_suffix('}')).unwrap_or(t);
        #[derive(Deserialize)]
        struct Wrapper {
            kernel: KernelSpec,
        }
        toml::from_str::<Wrapper>(&format!("kernel = {{ {body} }}"))
            .map(|w| w.kernel)
            .map_err(|e| Error::config("kernel", e.message().to_string()))
    }

    fn relative_to(self, base: Option<&Path>) -> Self {
        match (self, base) {
            (KernelSpec::Sampled { file }, Some(dir)) if file.is_relative() => KernelSpec::Sampled { file: dir.join(file) },
            (spec, _) => spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialCondition {
    /// `(mass / 2 ell)` on `(-ell, ell)`.
    Indicator {
        ell: f64,
        #[serde(default = "unit_mass")]
        mass: f64,
    },
    Gaussian {
        #[serde(default)]
        center: f64,
        sigma: f64,
        #[serde(default = "unit_mass")]
        mass: f64,
    },
}

fn unit_mass() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn mass(&self) -> f64 {
        match self {
            InitialCondition::Indicator { mass, .. } | InitialCondition::Gaussian { mass, .. } => *mass,
        }
    }

    pub fn build(&self, grid: &Grid1D) -> Result<CellField> {
        match *self {
            InitialCondition::Indicator { ell, mass } => indicator_initial_data(grid, ell, mass),
            InitialCondition::Gaussian { center, sigma, mass } => gaussian_initial_data(grid, center, sigma, mass),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainConfig {
    #[serde(rename = "L")]
    pub half_length: f64,
    pub cells_per_unit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesConfig {
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub initial: InitialCondition,
}

/// Either `K_ij = alpha_ij * base` or an explicit matrix of kernels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum KernelsConfig {
    Scaled { base: KernelSpec, alpha: Vec<Vec<f64>> },
    Matrix { matrix: Vec<Vec<KernelSpec>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub theta: f64,
    pub cfl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_floor: Option<f64>,
    pub u_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeConfig {
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub diagnostic_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    pub dt_min: f64,
    pub progress_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Snapshots,
    Xi,
    Diagnostics,
    Report,
}

pub const ALL_FORMATS: [OutputFormat; 4] = [
    OutputFormat::Snapshots,
    OutputFormat::Xi,
    OutputFormat::Diagnostics,
    OutputFormat::Report,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
}

/// A fully resolved and validated run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub domain: DomainConfig,
    pub species: Vec<SpeciesConfig>,
    pub kernels: KernelsConfig,
    pub scheme: SchemeConfig,
    pub time: TimeConfig,
    pub output: OutputConfig,
}

mod raw {
    use super::*;

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Config {
        pub name: Option<String>,
        pub domain: Option<Domain>,
        pub species: Option<Vec<Species>>,
        pub kernels: Option<Kernels>,
        pub scheme: Option<Scheme>,
        pub time: Option<Time>,
        pub output: Option<Output>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Domain {
        #[serde(rename = "L", alias = "half_length")]
        pub half_length: Option<f64>,
        pub cells_per_unit: Option<f64>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Species {
        #[serde(rename = "D", alias = "diffusion")]
        pub diffusion: Option<f64>,
        pub initial: Option<InitialCondition>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Kernels {
        pub base: Option<KernelSpec>,
        pub alpha: Option<Vec<Vec<f64>>>,
        pub matrix: Option<Vec<Vec<KernelSpec>>>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Scheme {
        pub theta: Option<f64>,
        pub cfl: Option<f64>,
        pub u_floor: Option<f64>,
        pub u_ess: Option<f64>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Time {
        pub t_end: Option<f64>,
        pub snapshot_times: Option<Vec<f64>>,
        pub diagnostic_stride: Option<usize>,
        pub dt_max: Option<f64>,
        pub dt_min: Option<f64>,
        pub progress_every: Option<usize>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Output {
        pub directory: Option<PathBuf>,
        pub formats: Option<Vec<OutputFormat>>,
    }
}

fn missing(key: &str) -> Error {
    Error::config(key, format!("missing key `{key}`"))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(key, format!("`{key}` must be positive and finite, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(key, format!("`{key}` must be finite, got {v}")))
    }
}

fn check_kernel(key: &str, spec: &KernelSpec) -> Result<()> {
    match spec {
        KernelSpec::Tophat { alpha, radius } => {
            finite(&format!("{key}.alpha"), *alpha)?;
            positive(&format!("{key}.R"), *radius)?;
        }
        KernelSpec::Sampled { file } => {
            if !file.is_file() {
                return Err(Error::config(
                    format!("{key}.file"),
                    format!("kernel file {} does not exist", file.display()),
                ));
            }
        }
    }
    Ok(())
}

fn square<T>(key: &str, m: &[Vec<T>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::config(
            key,
            format!("`{key}` must be a {n}x{n} matrix to match {n} species"),
        ));
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates TOML text. Relative kernel file paths are taken
    /// relative to `base_dir` when given.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: raw::Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("")
                .to_string();
            Error::config(key, msg)
        })?;
        Self::resolve(raw, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("", format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }

    fn resolve(raw: raw::Config, base_dir: Option<&Path>) -> Result<Self> {
        let domain = raw.domain.ok_or_else(|| missing("domain.L"))?;
        let half_length = positive("domain.L", domain.half_length.ok_or_else(|| missing("domain.L"))?)?;
        let cells_per_unit = positive(
            "domain.cells_per_unit",
            domain.cells_per_unit.unwrap_or(DEFAULT_CELLS_PER_UNIT),
        )?;
        Grid1D::with_density(half_length, cells_per_unit)
            .map_err(|e| Error::config("domain.cells_per_unit", e.to_string()))?;

        let raw_species = raw.species.filter(|s| !s.is_empty()).ok_or_else(|| missing("species"))?;
        let mut species = Vec::with_capacity(raw_species.len());
        for (i, s) in raw_species.into_iter().enumerate() {
            let key = |k: &str| format!("species[{}].{k}", i + 1);
            let diffusion = positive(&key("D"), s.diffusion.ok_or_else(|| missing(&key("D")))?)?;
            let initial = s.initial.ok_or_else(|| missing(&key("initial")))?;
            match &initial {
                InitialCondition::Indicator { ell, mass } => {
                    positive(&key("initial.ell"), *ell)?;
                    if *ell >= half_length {
                        return Err(Error::config(
                            key("initial.ell"),
                            format!("ell = {ell} must be smaller than L = {half_length}"),
                        ));
                    }
                    nonnegative(&key("initial.mass"), *mass)?;
                }
                InitialCondition::Gaussian { center, sigma, mass } => {
                    if !(center.is_finite() && center.abs() < half_length) {
                        return Err(Error::config(
                            key("initial.center"),
                            format!("center {center} lies outside (-L, L)"),
                        ));
                    }
                    positive(&key("initial.sigma"), *sigma)?;
                    nonnegative(&key("initial.mass"), *mass)?;
                }
            }
            species.push(SpeciesConfig { diffusion, initial });
        }
        let n = species.len();

        let k = raw.kernels.ok_or_else(|| missing("kernels"))?;
        let kernels = match (k.base, k.alpha, k.matrix) {
            (Some(_), _, Some(_)) => {
                return Err(Error::config("kernels", "give either `kernels.base` or `kernels.matrix`, not both"))
            }
            (None, Some(_), None) => return Err(missing("kernels.base")),
            (None, None, None) => return Err(missing("kernels.base")),
            (Some(base), alpha, None) => {
                let base = base.relative_to(base_dir);
                check_kernel("kernels.base", &base)?;
                let alpha = match alpha {
                    Some(a) => a,
                    None if n == 1 => vec![vec![1.0]],
                    None => return Err(missing("kernels.alpha")),
                };
                square("kernels.alpha", &alpha, n)?;
                for row in &alpha {
                    for &a in row {
                        finite("kernels.alpha", a)?;
                    }
                }
                KernelsConfig::Scaled { base, alpha }
            }
            (None, alpha, Some(matrix)) => {
                if alpha.is_some() {
                    return Err(Error::config("kernels.alpha", "`kernels.alpha` requires `kernels.base`"));
                }
                square("kernels.matrix", &matrix, n)?;
                let matrix: Vec<Vec<KernelSpec>> = matrix
                    .into_iter()
                    .map(|row| row.into_iter().map(|s| s.relative_to(base_dir)).collect())
                    .collect();
                for (i, row) in matrix.iter().enumerate() {
                    for (j, spec) in row.iter().enumerate() {
                        check_kernel(&format!("kernels.matrix[{}][{}]", i + 1, j + 1), spec)?;
                    }
                }
                KernelsConfig::Matrix { matrix }
            }
        };

        let s = raw.scheme.unwrap_or_default();
        let theta = s.theta.unwrap_or(DEFAULT_THETA);
        if !(1.0..=2.0).contains(&theta) {
            return Err(Error::config("scheme.theta", format!("`scheme.theta` must lie in [1, 2], got {theta}")));
        }
        let cfl = s.cfl.unwrap_or(DEFAULT_CFL);
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::config("scheme.cfl", format!("`scheme.cfl` must lie in (0, 1], got {cfl}")));
        }
        if let Some(f) = s.u_floor {
            if !(f > 0.0 && f <= MAX_U_FLOOR) {
                return Err(Error::config(
                    "scheme.u_floor",
                    format!("`scheme.u_floor` must lie in (0, {MAX_U_FLOOR:e}], got {f:e}"),
                ));
            }
        }
        let u_ess = positive("scheme.u_ess", s.u_ess.unwrap_or(DEFAULT_U_ESS))?;
        let scheme = SchemeConfig {
            theta,
            cfl,
            u_floor: s.u_floor,
            u_ess,
        };

        let t = raw.time.ok_or_else(|| missing("time.t_end"))?;
        let t_end = t.t_end.ok_or_else(|| missing("time.t_end"))?;
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(Error::config("time.t_end", format!("`time.t_end` must be nonnegative, got {t_end}")));
        }
        let mut snapshot_times = match t.snapshot_times {
            Some(ts) => {
                if let Some(bad) = ts.iter().find(|&&x| !(x.is_finite() && (0.0..=t_end).contains(&x))) {
                    return Err(Error::config(
                        "time.snapshot_times",
                        format!("snapshot time {bad} lies outside [0, {t_end}]"),
                    ));
                }
                ts
            }
            None => {
                let mut ts: Vec<f64> = DEFAULT_SNAPSHOT_TIMES.iter().copied().filter(|&x| x <= t_end).collect();
                ts.push(t_end);
                ts
            }
        };
        snapshot_times.sort_by(f64::total_cmp);
        snapshot_times.dedup();
        let diagnostic_stride = t.diagnostic_stride.unwrap_or(DEFAULT_DIAGNOSTIC_STRIDE);
        if diagnostic_stride == 0 {
            return Err(Error::config("time.diagnostic_stride", "`time.diagnostic_stride` must be at least 1"));
        }
        if let Some(d) = t.dt_max {
            positive("time.dt_max", d)?;
        }
        let dt_min = positive("time.dt_min", t.dt_min.unwrap_or(DEFAULT_DT_MIN))?;
        if let Some(d) = t.dt_max {
            if dt_min >= d {
                return Err(Error::config("time.dt_min", "`time.dt_min` must be smaller than `time.dt_max`"));
            }
        }
        let time = TimeConfig {
            t_end,
            snapshot_times,
            diagnostic_stride,
            dt_max: t.dt_max,
            dt_min,
            progress_every: t.progress_every.unwrap_or(0),
        };

        let o = raw.output.unwrap_or_default();
        let output = OutputConfig {
            directory: o.directory.map(|d| match base_dir {
                Some(b) if d.is_relative() => b.join(d),
                _ => d,
            }),
            formats: o.formats.unwrap_or_else(|| ALL_FORMATS.to_vec()),
        };

        Ok(Self {
            name: raw.name,
            domain: DomainConfig {
                half_length,
                cells_per_unit,
            },
            species,
            kernels,
            scheme,
            time,
            output,
        })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.output.formats.contains(&format)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::with_density(self.domain.half_length, self.domain.cells_per_unit)
    }

    pub fn kernel_matrix(&self) -> Result<KernelMatrix> {
        match &self.kernels {
            KernelsConfig::Scaled { base, alpha } => KernelMatrix::from_scale_matrix(base.build()?, alpha.clone()),
            KernelsConfig::Matrix { matrix } => KernelMatrix::from_entries(
                matrix
                    .iter()
                    .map(|row| row.iter().map(KernelSpec::build).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }

    pub fn diffusion(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.diffusion).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.initial.mass()).collect()
    }

    /// Builds the initial state, step controls, energy weights and kernel report.
    pub fn build(&self) -> Result<Setup> {
        let grid = self.grid()?;
        let kernels = self.kernel_matrix()?;
        let fields = self
            .species
            .iter()
            .map(|s| s.initial.build(&grid))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = fields.iter().map(CellField::mass).sum();
        let floor = self.scheme.u_floor.unwrap_or_else(|| SchemeParams::default_floor(total, &grid));
        let diffusion = self.diffusion();
        let params = SchemeParams::new(diffusion.clone(), self.scheme.theta, floor)?;
        let hypotheses = HypothesisReport::build(&kernels, &diffusion, &self.masses(), grid.dx())?;
        let weights = EnergyWeights::from_balance(&hypotheses.detailed_balance, self.n_species());
        let state = SystemState::new(fields, params, kernels)?;

        let d_max = diffusion.iter().copied().fold(0.0, f64::max);
        let mut controls = TimeControls::new(self.time.t_end, grid.dx(), d_max);
        controls.cfl = self.scheme.cfl;
        controls.dt_max = self.time.dt_max.unwrap_or_else(|| default_dt_max(grid.dx(), d_max));
        controls.dt_min = self.time.dt_min;
        controls.snapshot_times = self.time.snapshot_times.clone();
        controls.diagnostic_stride = self.time.diagnostic_stride;
        controls.progress_every = self.time.progress_every;
        controls.validate()?;

        Ok(Setup {
            state,
            controls,
            weights,
            hypotheses,
            u_ess: self.scheme.u_ess,
        })
    }

    /// Same run at `factor` times the spatial resolution.
    pub fn refined(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.domain.cells_per_unit *= factor;
        c
    }
}

fn nonnegative(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::config(key, format!("`{key}` must be nonnegative, got {v}")))
    }
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub state: SystemState,
    pub controls: TimeControls,
    pub weights: EnergyWeights,
    pub hypotheses: HypothesisReport,
    pub u_ess: f64,
}
