//! Interaction kernels, their norms, and the kernel hypotheses.
//!
//! Two kernel forms are supported: the closed-form top-hat
//! `K(x) = -alpha / (2R)` on `[-R, R]`, and piecewise-constant kernels
//! given as cell averages on their own uniform grid. Every analysis here is
//! a pure function of immutable inputs.

use std::collections::VecDeque;
use std::io::Read;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance on `pi_i a_ij = pi_j a_ji` when closing cycles.
pub const BALANCE_TOLERANCE: f64 = 1e-12;

/// Tolerance used for the sampled-kernel symmetry check.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Relative change under `dx -> dx/2` below which the truncated Fourier
/// integral is reported as refinement-stable.
pub const FOURIER_STABILITY_TOLERANCE: f64 = 0.1;

/// Piecewise-constant kernel: `values[k]` is the average over
/// `[x0 + k dx, x0 + (k + 1) dx]`, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledKernel {
    values: Vec<f64>,
    dx: f64,
    x0: f64,
    /// `prefix[k] = dx * sum(values[..k])`, length `values.len() + 1`.
    prefix: Vec<f64>,
}

impl SampledKernel {
    pub fn new(values: Vec<f64>, dx: f64, x0: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("values", "sampled kernel needs at least one cell"));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::invalid("dx", format!("must be positive, got {dx}")));
        }
        if !x0.is_finite() {
            return Err(Error::invalid("x0", "must be finite"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite kernel sample at index {k}")));
        }
        let mut prefix = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in &values {
            acc += v * dx;
            prefix.push(acc);
        }
        Ok(Self { values, dx, x0, prefix })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    fn x_end(&self) -> f64 {
        self.x0 + self.values.len() as f64 * self.dx
    }

    /// `int_{-inf}^{x} K`.
    fn antiderivative(&self, x: f64) -> f64 {
        if x <= self.x0 {
            return 0.0;
        }
        let n = self.values.len();
        let s = (x - self.x0) / self.dx;
        if s >= n as f64 {
            return self.prefix[n];
        }
        let k = (s.floor() as usize).min(n - 1);
        self.prefix[k] + self.values[k] * (x - (self.x0 + k as f64 * self.dx))
    }
}

/// An interaction kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `-alpha / (2 radius)` on `[-radius, radius]`, zero elsewhere.
    TopHat { alpha: f64, radius: f64 },
    Sampled(Arc<SampledKernel>),
}

/// Top-hat kernel of strength `alpha` and radius `radius`.
pub fn tophat(alpha: f64, radius: f64) -> Result<Kernel> {
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("must be finite, got {alpha}")));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("R", format!("radius must be positive, got {radius}")));
    }
    Ok(Kernel::TopHat { alpha, radius })
}

impl Kernel {
    pub fn sampled(values: Vec<f64>, dx: f64, x0: f64) -> Result<Kernel> {
        Ok(Kernel::Sampled(Arc::new(SampledKernel::new(values, dx, x0)?)))
    }

    /// Read a two-column `x,value` CSV of cell-center samples. A non-numeric
    /// first line is treated as a header. Centers must be uniformly spaced.
    pub fn from_csv<R: Read>(mut reader: R) -> Result<Kernel> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::invalid("kernel csv", format!("line {}: expected two columns", lineno + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(v)) => {
                    xs.push(x);
                    vs.push(v);
                }
                _ if xs.is_empty() && lineno == 0 => continue,
                _ => {
                    return Err(Error::invalid(
                        "kernel csv",
                        format!("line {}: could not parse `{line}`", lineno + 1),
                    ))
                }
            }
        }
        if xs.len() < 2 {
            return Err(Error::invalid("kernel csv", "need at least two samples"));
        }
        let n = xs.len();
        let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        if !(dx > 0.0) {
            return Err(Error::invalid("kernel csv", "x column must be increasing"));
        }
        for (k, x) in xs.iter().enumerate() {
            let expected = xs[0] + k as f64 * dx;
            if (x - expected).abs() > 1e-9 * dx.max(x.abs()) {
                return Err(Error::invalid(
                    "kernel csv",
                    format!("sample {k} at x = {x} breaks uniform spacing {dx}"),
                ));
            }
        }
        Kernel::sampled(vs, dx, xs[0] - 0.5 * dx)
    }

    /// Pointwise value. Sampled kernels return the cell average of the cell
    /// containing `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Kernel::TopHat { alpha, radius } => {
                if x.abs() <= *radius {
                    -alpha / (2.0 * radius)
                } else {
                    0.0
                }
            }
            Kernel::Sampled(s) => {
                if x < s.x0 || x >= s.x_end() {
                    return 0.0;
                }
                let k = (((x - s.x0) / s.dx).floor() as usize).min(s.values.len() - 1);
                s.values[k]
            }
        }
    }

    /// Exact `int_a^b K(x) dx` for `a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Kernel::TopHat { alpha, radius } => {
                let lo = a.max(-radius);
                let hi = b.min(*radius);
                if hi <= lo {
                    0.0
                } else {
                    -alpha / (2.0 * radius) * (hi - lo)
                }
            }
            Kernel::Sampled(s) => s.antiderivative(b) - s.antiderivative(a),
        }
    }

    /// `c * K`.
    pub fn scaled(&self, c: f64) -> Kernel {
        match self {
            Kernel::TopHat { alpha, radius } => Kernel::TopHat {
                alpha: alpha * c,
                radius: *radius,
            },
            Kernel::Sampled(s) => Kernel::Sampled(Arc::new(
                SampledKernel::new(s.values.iter().map(|v| v * c).collect(), s.dx, s.x0)
                    .expect("scaling preserves validity"),
            )),
        }
    }

    /// Radius of the smallest centered interval containing the support.
    /// Zero kernels report `0`.
    pub fn support_radius(&self) -> f64 {
        match self {
            Kernel::TopHat { alpha, radius } => {
                if *alpha == 0.0 {
                    0.0
                } else {
                    *radius
                }
            }
            Kernel::Sampled(s) => {
                let first = s.values.iter().position(|&v| v != 0.0);
                let last = s.values.iter().rposition(|&v| v != 0.0);
                match (first, last) {
                    (Some(f), Some(l)) => {
                        let left = s.x0 + f as f64 * s.dx;
                        let right = s.x0 + (l + 1) as f64 * s.dx;
                        left.abs().max(right.abs())
                    }
                    _ => 0.0,
                }
            }
        }
    }

    pub fn linf_norm(&self) -> f64 {
        match self {
            Kernel::TopHat { alpha, radius } => alpha.abs() / (2.0 * radius),
            Kernel::Sampled(s) => s.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        match self {
            Kernel::TopHat { alpha, .. } => alpha.abs(),
            Kernel::Sampled(s) => s.values.iter().map(|v| v.abs()).sum::<f64>() * s.dx,
        }
    }

    /// Total variation of the distributional gradient. For piecewise
    /// constant kernels this is the sum of absolute jumps, including the
    /// jumps to zero at both ends.
    pub fn tv_norm(&self) -> f64 {
        match self {
            Kernel::TopHat { alpha, radius } => alpha.abs() / radius,
            Kernel::Sampled(s) => {
                let v = &s.values;
                let inner: f64 = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                inner + v[0].abs() + v[v.len() - 1].abs()
            }
        }
    }

    /// Symmetry about the origin.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Kernel::TopHat { .. } => true,
            Kernel::Sampled(s) => {
                let scale = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    return true;
                }
                let half_width = 0.5 * s.values.len() as f64 * s.dx;
                if (s.x0 + half_width).abs() > SYMMETRY_TOLERANCE * half_width.max(1.0) {
                    return false;
                }
                s.values
                    .iter()
                    .zip(s.values.iter().rev())
                    .all(|(a, b)| (a - b).abs() <= SYMMETRY_TOLERANCE * scale)
            }
        }
    }

    /// Averages over the cells `[m dx - dx/2, m dx + dx/2]`, `m = -w..=w`,
    /// with `w` the smallest half-width covering the support. Returns
    /// `(values, w)`; `values[w]` is the cell at the origin.
    pub fn cell_averages(&self, dx: f64) -> (Vec<f64>, usize) {
        let w = support_cells(self.support_radius(), dx);
        let values = (-(w as i64)..=w as i64)
            .map(|m| {
                let c = m as f64 * dx;
                self.integral(c - 0.5 * dx, c + 0.5 * dx) / dx
            })
            .collect();
        (values, w)
    }
}

/// Half-width in cells of a window centered on the origin covering `[-radius, radius]`.
pub(crate) fn support_cells(radius: f64, dx: f64) -> usize {
    if radius <= 0.0 {
        0
    } else {
        (radius / dx + 0.5).ceil() as usize
    }
}

/// Norms and hypothesis verdicts for one kernel.
#[derive(Debug, Clone, Serialize)]
pub struct KernelAnalysis {
    pub linf_norm: f64,
    pub l1_norm: f64,
    /// `||grad K||_TV`, which is also the constant `C_K` of the `L^1` gradient bound.
    pub tv_norm: f64,
    pub symmetric: bool,
    pub compact_support: bool,
    pub support_radius: f64,
    /// Discrete `L^2` norm of the centered-difference gradient of the autoconvolution `K~ * K`.
    pub h4_norm: f64,
    /// `int_{1 < |xi| <= pi/dx} |xi|^2 |K^(xi)|^4 dxi`.
    pub h4_fourier_integral: f64,
    /// Same integral with `dx / 2`.
    pub h4_fourier_integral_refined: f64,
    pub h4_refinement_stable: bool,
    pub dx: f64,
}

impl KernelAnalysis {
    /// Bounded, integrable kernel.
    pub fn h1(&self) -> bool {
        self.linf_norm.is_finite() && self.l1_norm.is_finite()
    }

    /// Bounded variation.
    pub fn h2(&self) -> bool {
        self.tv_norm.is_finite()
    }

    /// `grad(K~ * K)` in `L^2`: decided by the analytic implication from
    /// H1 and H2, with the discrete norm as a finite-value cross-check.
    pub fn h4(&self) -> bool {
        (self.h1() && self.h2()) || (self.h4_norm.is_finite() && self.h4_refinement_stable)
    }
}

/// Norms and hypothesis checks for one kernel at analysis resolution `dx`.
pub fn analyze(kernel: &Kernel, dx: f64) -> Result<KernelAnalysis> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::invalid("dx", format!("analysis resolution must be positive, got {dx}")));
    }
    let coarse = h4_fourier_integral(kernel, dx);
    let fine = h4_fourier_integral(kernel, 0.5 * dx);
    let stable = if coarse == 0.0 {
        fine == 0.0
    } else {
        ((fine - coarse) / coarse).abs() < FOURIER_STABILITY_TOLERANCE
    };
    Ok(KernelAnalysis {
        linf_norm: kernel.linf_norm(),
        l1_norm: kernel.l1_norm(),
        tv_norm: kernel.tv_norm(),
        symmetric: kernel.is_symmetric(),
        compact_support: true,
        support_radius: kernel.support_radius(),
        h4_norm: h4_norm(kernel, dx),
        h4_fourier_integral: coarse,
        h4_fourier_integral_refined: fine,
        h4_refinement_stable: stable,
        dx,
    })
}

fn fft_forward(planner: &mut FftPlanner<f64>, data: &mut [Complex64]) {
    planner.plan_fft_forward(data.len()).process(data);
}

/// Discrete `L^2` norm of the centered-difference gradient of `K~ * K`,
/// with the autocorrelation computed by zero-padded FFT.
pub fn h4_norm(kernel: &Kernel, dx: f64) -> f64 {
    let (samples, _) = kernel.cell_averages(dx);
    let n = samples.len();
    let len = (2 * n + 2).next_power_of_two();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    fft_forward(&mut planner, &mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = dx / len as f64;
    // Lag p lives at index p mod len; lags span -(n-1)..=(n-1).
    let lag = |p: i64| -> f64 {
        if p.unsigned_abs() as usize >= n {
            0.0
        } else {
            buf[p.rem_euclid(len as i64) as usize].re * scale
        }
    };
    let reach = n as i64;
    let sum_sq: f64 = (-reach..=reach)
        .map(|p| {
            let g = (lag(p + 1) - lag(p - 1)) / (2.0 * dx);
            g * g
        })
        .sum();
    (sum_sq * dx).sqrt()
}

/// `int_{1 < |xi| <= pi/dx} |xi|^2 |K^(xi)|^4 dxi` from a zero-padded DFT of
/// the kernel's cell averages at resolution `dx`.
pub fn h4_fourier_integral(kernel: &Kernel, dx: f64) -> f64 {
    let (samples, _) = kernel.cell_averages(dx);
    let n = samples.len();
    let len = (8 * n).max(4096).next_power_of_two();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    fft_forward(&mut planner, &mut buf);
    let dxi = 2.0 * std::f64::consts::PI / (len as f64 * dx);
    let nyquist = std::f64::consts::PI / dx;
    let mut total = 0.0;
    for (k, z) in buf.iter().enumerate() {
        let signed = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
        let xi = signed * dxi;
        if xi.abs() <= 1.0 || xi.abs() > nyquist {
            continue;
        }
        let mag = z.norm() * dx;
        total += xi * xi * mag.powi(4) * dxi;
    }
    total
}

/// Why `pi_i a_ij = pi_j a_ji` has no positive solution. Species labels
/// are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceWitness {
    /// Exactly one of `a_ij`, `a_ji` is zero.
    OneSided { i: usize, j: usize },
    /// `a_ij` and `a_ji` have opposite signs.
    OppositeSigns { i: usize, j: usize },
    /// The ratios around this cycle do not multiply to one.
    Cycle { species: Vec<usize> },
}

impl BalanceWitness {
    /// The offending pair, or the closing edge of a cycle.
    pub fn pair(&self) -> (usize, usize) {
        match self {
            BalanceWitness::OneSided { i, j } | BalanceWitness::OppositeSigns { i, j } => (*i, *j),
            BalanceWitness::Cycle { species } => (species[0], species[species.len() - 1]),
        }
    }
}

impl std::fmt::Display for BalanceWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BalanceWitness::OneSided { i, j } => {
                write!(f, "({i},{j}): exactly one of a_{i}{j}, a_{j}{i} vanishes")
            }
            BalanceWitness::OppositeSigns { i, j } => {
                write!(f, "({i},{j}): a_{i}{j} and a_{j}{i} have opposite signs")
            }
            BalanceWitness::Cycle { species } => {
                let names: Vec<String> = species.iter().map(|s| s.to_string()).collect();
                write!(f, "cycle {} is inconsistent", names.join("-"))
            }
        }
    }
}

/// Outcome of the detailed-balance solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DetailedBalance {
    Balanced { weights: Vec<f64> },
    Violated { witness: BalanceWitness },
    /// Kernels are not scalar multiples of a common profile, so no ratio
    /// matrix could be formed.
    Undetermined { reason: String },
}

impl DetailedBalance {
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            DetailedBalance::Balanced { weights } => Some(weights),
            _ => None,
        }
    }

    pub fn is_balanced(&self) -> bool {
        matches!(self, DetailedBalance::Balanced { .. })
    }
}

/// Positive weights with `pi_1 = 1` and `pi_i a_ij = pi_j a_ji`, or a witness
/// that none exist.
///
/// Each connected component of the interaction graph is rooted at its
/// lowest-index species with weight one; ratios propagate along a BFS tree
/// and every remaining edge is checked to [`BALANCE_TOLERANCE`].
pub fn solve_detailed_balance(matrix: &[Vec<f64>]) -> Result<DetailedBalance> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::invalid("matrix", "empty coupling matrix"));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::invalid(
                "matrix",
                format!("row {} has {} entries, expected {n}", i + 1, row.len()),
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix", format!("entry ({},{}) is not finite", i + 1, j + 1)));
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (matrix[i][j], matrix[j][i]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            if a == 0.0 || b == 0.0 {
                return Ok(DetailedBalance::Violated {
                    witness: BalanceWitness::OneSided { i: i + 1, j: j + 1 },
                });
            }
            if a.signum() != b.signum() {
                return Ok(DetailedBalance::Violated {
                    witness: BalanceWitness::OppositeSigns { i: i + 1, j: j + 1 },
                });
            }
        }
    }

    let edge = |i: usize, j: usize| i != j && matrix[i][j] != 0.0;
    let mut weights = vec![0.0; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        weights[root] = 1.0;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !edge(i, j) {
                    continue;
                }
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some(i);
                    weights[j] = weights[i] * matrix[i][j] / matrix[j][i];
                    queue.push_back(j);
                }
            }
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            if !edge(i, j) {
                continue;
            }
            let lhs = weights[i] * matrix[i][j];
            let rhs = weights[j] * matrix[j][i];
            if (lhs - rhs).abs() > BALANCE_TOLERANCE * lhs.abs().max(rhs.abs()) {
                return Ok(DetailedBalance::Violated {
                    witness: BalanceWitness::Cycle {
                        species: tree_cycle(&parent, i, j),
                    },
                });
            }
        }
    }
    Ok(DetailedBalance::Balanced { weights })
}

/// Tree path `i -> lca -> j` (1-based), which together with edge `(j, i)` closes a cycle.
fn tree_cycle(parent: &[Option<usize>], i: usize, j: usize) -> Vec<usize> {
    let ancestors = |mut v: usize| {
        let mut path = vec![v];
        while let Some(p) = parent[v] {
            path.push(p);
            v = p;
        }
        path
    };
    let pi = ancestors(i);
    let pj = ancestors(j);
    let lca = *pi.iter().find(|v| pj.contains(v)).expect("same component");
    let mut cycle: Vec<usize> = pi.iter().take_while(|&&v| v != lca).copied().collect();
    cycle.push(lca);
    let down: Vec<usize> = pj.iter().take_while(|&&v| v != lca).copied().collect();
    cycle.extend(down.into_iter().rev());
    cycle.into_iter().map(|v| v + 1).collect()
}

/// `n x n` interaction kernels `K_ij` (the effect of species `j` on species `i`).
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: Vec<Vec<Kernel>>,
    scale: Option<ScaledBase>,
}

#[derive(Debug, Clone)]
struct ScaledBase {
    base: Kernel,
    alpha: Vec<Vec<f64>>,
}

impl KernelMatrix {
    pub fn scalar(kernel: Kernel) -> Self {
        Self {
            entries: vec![vec![kernel]],
            scale: None,
        }
    }

    pub fn from_entries(entries: Vec<Vec<Kernel>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::invalid("kernels", "empty kernel matrix"));
        }
        if let Some(i) = entries.iter().position(|row| row.len() != n) {
            return Err(Error::invalid(
                "kernels",
                format!("row {} has {} kernels, expected {n}", i + 1, entries[i].len()),
            ));
        }
        Ok(Self { entries, scale: None })
    }

    /// `K_ij = alpha_ij * base`.
    pub fn from_scale_matrix(base: Kernel, alpha: Vec<Vec<f64>>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::invalid("alpha", "empty coupling matrix"));
        }
        for (i, row) in alpha.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(
                    "alpha",
                    format!("row {} has {} entries, expected {n}", i + 1, row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid("alpha", format!("entry ({},{}) is not finite", i + 1, j + 1)));
            }
        }
        let entries = alpha
            .iter()
            .map(|row| row.iter().map(|&a| base.scaled(a)).collect())
            .collect();
        Ok(Self {
            entries,
            scale: Some(ScaledBase { base, alpha }),
        })
    }

    pub fn n_species(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &Kernel {
        &self.entries[i][j]
    }

    pub fn entries(&self) -> &[Vec<Kernel>] {
        &self.entries
    }

    /// Base kernel and coefficients when the matrix was built as `alpha_ij * K`.
    pub fn scale_form(&self) -> Option<(&Kernel, &[Vec<f64>])> {
        self.scale.as_ref().map(|s| (&s.base, s.alpha.as_slice()))
    }

    /// Coefficient matrix whose detailed balance is equivalent to that of the
    /// kernels: the explicit scale matrix if present, otherwise the strengths
    /// of top-hat entries sharing one radius.
    pub fn balance_matrix(&self) -> Option<Vec<Vec<f64>>> {
        if let Some(s) = &self.scale {
            return Some(s.alpha.clone());
        }
        if self.n_species() == 1 {
            return Some(vec![vec![1.0]]);
        }
        let mut radius = None;
        let mut alpha = Vec::with_capacity(self.n_species());
        for row in &self.entries {
            let mut out = Vec::with_capacity(row.len());
            for k in row {
                match k {
                    Kernel::TopHat { alpha: a, radius: r } => {
                        if *a != 0.0 {
                            match radius {
                                None => radius = Some(*r),
                                Some(r0) if r0 == *r => {}
                                Some(_) => return None,
                            }
                        }
                        out.push(*a);
                    }
                    Kernel::Sampled(_) => return None,
                }
            }
            alpha.push(out);
        }
        Some(alpha)
    }

    pub fn detailed_balance(&self) -> DetailedBalance {
        match self.balance_matrix() {
            Some(m) => solve_detailed_balance(&m).unwrap_or_else(|e| DetailedBalance::Undetermined {
                reason: e.to_string(),
            }),
            None => DetailedBalance::Undetermined {
                reason: "kernels are not multiples of a common profile".into(),
            },
        }
    }
}

/// Small-mass constants
/// `c_i = D_i - 1/2 sum_j (m_i ||K_ij||_inf + m_j ||K_ji||_inf)`.
/// For one species this is `D - m ||K||_inf`.
pub fn small_mass_constants(diffusion: &[f64], masses: &[f64], kernels: &KernelMatrix) -> Result<Vec<f64>> {
    let n = kernels.n_species();
    if diffusion.len() != n || masses.len() != n {
        return Err(Error::invalid(
            "small_mass_constants",
            format!(
                "need {n} diffusion rates and masses, got {} and {}",
                diffusion.len(),
                masses.len()
            ),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let coupling: f64 = (0..n)
                .map(|j| masses[i] * kernels.get(i, j).linf_norm() + masses[j] * kernels.get(j, i).linf_norm())
                .sum();
            diffusion[i] - 0.5 * coupling
        })
        .collect())
}

/// Which well-posedness results have their kernel/mass preconditions met.
/// Initial-data regularity is not checked.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremApplicability {
    /// Global weak solution for small mass: H1 and every `c_i > 0`.
    pub weak_small_mass: bool,
    /// Global weak solution for any mass: H1-H3, plus H5 when `n > 1`.
    pub weak_arbitrary_mass: bool,
    /// Unique strong solution: arbitrary-mass case, or small-mass case with H4.
    pub strong: bool,
    /// Unique classical, strictly positive solution: small-mass with H2 and H6,
    /// or arbitrary-mass with H6.
    pub classical: bool,
}

/// Hypothesis flags aggregated over every kernel entry.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisFlags {
    pub h1_bounded_integrable: bool,
    pub h2_bounded_variation: bool,
    pub h3_symmetric: bool,
    pub h4_gradient_autoconvolution_l2: bool,
    pub h5_detailed_balance: bool,
    pub h6_compact_support: bool,
}

/// Full kernel report for a system: per-entry analyses, detailed balance,
/// small-mass constants and theorem applicability.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub kernels: Vec<Vec<KernelAnalysis>>,
    pub detailed_balance: DetailedBalance,
    pub small_mass_constants: Vec<f64>,
    pub hypotheses: HypothesisFlags,
    pub theorem_applicability: TheoremApplicability,
}

impl HypothesisReport {
    pub fn build(kernels: &KernelMatrix, diffusion: &[f64], masses: &[f64], dx: f64) -> Result<Self> {
        let n = kernels.n_species();
        let analyses = kernels
            .entries()
            .iter()
            .map(|row| row.iter().map(|k| analyze(k, dx)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let constants = small_mass_constants(diffusion, masses, kernels)?;
        let balance = if n == 1 {
            DetailedBalance::Balanced { weights: vec![1.0] }
        } else {
            kernels.detailed_balance()
        };
        let all = |f: &dyn Fn(&KernelAnalysis) -> bool| analyses.iter().flatten().all(f);
        let hypotheses = HypothesisFlags {
            h1_bounded_integrable: all(&|a| a.h1()),
            h2_bounded_variation: all(&|a| a.h2()),
            h3_symmetric: all(&|a| a.symmetric),
            h4_gradient_autoconvolution_l2: all(&|a| a.h4()),
            h5_detailed_balance: balance.is_balanced(),
            h6_compact_support: all(&|a| a.compact_support),
        };
        let h = &hypotheses;
        let small = h.h1_bounded_integrable && constants.iter().all(|&c| c > 0.0);
        let arbitrary = h.h1_bounded_integrable
            && h.h2_bounded_variation
            && h.h3_symmetric
            && (n == 1 || h.h5_detailed_balance);
        let theorems = TheoremApplicability {
            weak_small_mass: small,
            weak_arbitrary_mass: arbitrary,
            strong: arbitrary || (small && h.h4_gradient_autoconvolution_l2),
            classical: (small && h.h2_bounded_variation && h.h6_compact_support)
                || (arbitrary && h.h6_compact_support),
        };
        Ok(Self {
            kernels: analyses,
            detailed_balance: balance,
            small_mass_constants: constants,
            hypotheses,
            theorem_applicability: theorems,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tophat_pointwise_values() {
        let k = tophat(2.0, 1.0).unwrap();
        assert_eq!(k.eval(0.0), -1.0);
        assert_eq!(k.eval(1.5), 0.0);
        let r = tophat(-20.0, 1.0).unwrap();
        assert_eq!(r.eval(0.5), 10.0);
    }

    #[test]
    fn tophat_rejects_bad_parameters() {
        assert!(tophat(1.0, 0.0).is_err());
        assert!(tophat(1.0, -1.0).is_err());
        assert!(tophat(f64::NAN, 1.0).is_err());
        assert!(tophat(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn tophat_closed_form_norms() {
        let a = analyze(&tophat(2.0, 1.0).unwrap(), 0.01).unwrap();
        assert_eq!(a.tv_norm, 2.0);
        assert_eq!(a.linf_norm, 1.0);
        assert_eq!(a.l1_norm, 2.0);
        assert!(a.symmetric && a.compact_support);
        assert_eq!(a.support_radius, 1.0);
    }

    #[test]
    fn tophat_h4_norm_matches_triangle_gradient() {
        // K~*K = (alpha^2 / 4R^2)(2R - |x|)_+, gradient norm alpha^2 / (2 R^{3/2}).
        let a = h4_norm(&tophat(1.0, 1.0).unwrap(), 1e-3);
        assert!((a - 0.5).abs() < 5e-3, "{a}");
        let b = h4_norm(&tophat(3.0, 2.0).unwrap(), 1e-3);
        let exact = 9.0 / (2.0 * 2f64.powf(1.5));
        assert!((b - exact).abs() < 1e-2 * exact, "{b} vs {exact}");
    }

    #[test]
    fn integral_matches_eval_sum() {
        let k = Kernel::sampled(vec![1.0, -2.0, 3.0], 0.5, -0.75).unwrap();
        assert!((k.integral(-10.0, 10.0) - 1.0).abs() < 1e-15);
        assert!((k.integral(-0.5, 0.0) - (0.25 * 1.0 + 0.25 * -2.0)).abs() < 1e-15);
        assert_eq!(k.eval(0.5), 3.0);
        assert_eq!(k.eval(0.75), 0.0);
    }

    #[test]
    fn sampled_tv_includes_boundary_jumps() {
        let k = Kernel::sampled(vec![1.0, 3.0, 1.0], 1.0, -1.5).unwrap();
        assert_eq!(k.tv_norm(), 1.0 + 2.0 + 2.0 + 1.0);
        assert!(k.is_symmetric());
        let shifted = Kernel::sampled(vec![1.0, 3.0, 1.0], 1.0, -1.0).unwrap();
        assert!(!shifted.is_symmetric());
        let lopsided = Kernel::sampled(vec![1.0, 3.0, 2.0], 1.0, -1.5).unwrap();
        assert!(!lopsided.is_symmetric());
    }

    #[test]
    fn sampled_support_radius() {
        let k = Kernel::sampled(vec![0.0, 1.0, 1.0, 0.0], 1.0, -2.0).unwrap();
        assert_eq!(k.support_radius(), 1.0);
    }

    #[test]
    fn sampled_rejects_non_finite() {
        assert!(Kernel::sampled(vec![1.0, f64::NAN], 1.0, 0.0).is_err());
        assert!(Kernel::sampled(vec![], 1.0, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_of_gaussian() {
        let n = 101;
        let dx = 0.1;
        let mut text = String::from("x,value\n");
        for k in 0..n {
            let x = (k as f64 - 50.0) * dx;
            text.push_str(&format!("{},{}\n", crate::grid::fmt_f64(x), crate::grid::fmt_f64((-x * x).exp())));
        }
        let k = Kernel::from_csv(text.as_bytes()).unwrap();
        assert!(k.is_symmetric());
        let a = analyze(&k, dx).unwrap();
        assert!(a.compact_support);
        assert!((a.support_radius - 5.05).abs() < 1e-9);
    }

    #[test]
    fn csv_rejects_uneven_spacing() {
        let text = "0,1\n1,1\n3,1\n";
        assert!(Kernel::from_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn fourier_integral_finite_and_stable_for_tophat() {
        let k = tophat(1.0, 1.0).unwrap();
        let a = analyze(&k, 0.01).unwrap();
        assert!(a.h4_fourier_integral.is_finite() && a.h4_fourier_integral > 0.0);
        assert!(a.h4_refinement_stable);
    }

    #[test]
    fn balance_symmetric_pair() {
        let r = solve_detailed_balance(&[vec![20.0, -10.0], vec![-10.0, 2.0]]).unwrap();
        assert_eq!(r, DetailedBalance::Balanced { weights: vec![1.0, 1.0] });
    }

    #[test]
    fn balance_opposite_signs_fail() {
        let r = solve_detailed_balance(&[vec![20.0, -10.0], vec![5.0, 20.0]]).unwrap();
        match r {
            DetailedBalance::Violated { witness } => {
                assert_eq!(witness, BalanceWitness::OppositeSigns { i: 1, j: 2 });
                assert_eq!(witness.pair(), (1, 2));
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn balance_one_sided_edge() {
        let r = solve_detailed_balance(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            r,
            DetailedBalance::Violated {
                witness: BalanceWitness::OneSided { i: 1, j: 2 }
            }
        ));
    }

    #[test]
    fn balance_three_species_ratios() {
        // pi_2 = pi_1 * a12 / a21 = 1/2, pi_3 = pi_2 * a23 / a32 = 1/6,
        // and the closing edge a13 / a31 = 1/6 is consistent.
        let m = vec![
            vec![7.0, 1.0, 1.0],
            vec![2.0, -3.0, 1.0],
            vec![6.0, 3.0, 0.5],
        ];
        let r = solve_detailed_balance(&m).unwrap();
        let w = r.weights().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);
        assert!((w[2] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn balance_inconsistent_cycle() {
        let m = vec![
            vec![0.0, 1.0, 1.0],
            vec![2.0, 0.0, 1.0],
            vec![5.0, 3.0, 0.0],
        ];
        match solve_detailed_balance(&m).unwrap() {
            DetailedBalance::Violated {
                witness: BalanceWitness::Cycle { species },
            } => {
                let mut s = species.clone();
                s.sort();
                assert_eq!(s, vec![1, 2, 3]);
            }
            other => panic!("expected cycle witness, got {other:?}"),
        }
    }

    #[test]
    fn balance_disconnected_components_root_at_one() {
        let m = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 2.0],
            vec![0.0, 4.0, 1.0],
        ];
        let r = solve_detailed_balance(&m).unwrap();
        assert_eq!(r.weights().unwrap(), &[1.0, 1.0, 0.5]);
    }

    #[test]
    fn balance_rejects_malformed() {
        assert!(solve_detailed_balance(&[]).is_err());
        assert!(solve_detailed_balance(&[vec![1.0, 2.0]]).is_err());
        assert!(solve_detailed_balance(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn small_mass_scalar() {
        let k = KernelMatrix::scalar(tophat(0.4, 1.0).unwrap());
        let c = small_mass_constants(&[0.25], &[1.0], &k).unwrap();
        assert!((c[0] - 0.05).abs() < 1e-15);
        let k = KernelMatrix::scalar(tophat(2.0, 1.0).unwrap());
        let c = small_mass_constants(&[0.25], &[1.0], &k).unwrap();
        assert!((c[0] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn small_mass_two_species() {
        let k = KernelMatrix::from_scale_matrix(tophat(1.0, 1.0).unwrap(), vec![vec![0.1, 0.05], vec![0.05, 0.1]])
            .unwrap();
        let c = small_mass_constants(&[0.25, 0.25], &[1.0, 1.0], &k).unwrap();
        // Spreadsheet-style: row i sums m_i |K_ij| + m_j |K_ji| over j.
        let linf = |a: f64| a / 2.0;
        let expected = 0.25 - 0.5 * ((linf(0.1) + linf(0.1)) + (linf(0.05) + linf(0.05)));
        assert!((expected - 0.175).abs() < 1e-15);
        for ci in c {
            assert!((ci - 0.175).abs() < 1e-15);
        }
    }

    #[test]
    fn balance_matrix_from_tophat_entries() {
        let e = vec![
            vec![tophat(20.0, 1.0).unwrap(), tophat(-10.0, 1.0).unwrap()],
            vec![tophat(5.0, 1.0).unwrap(), tophat(20.0, 1.0).unwrap()],
        ];
        let m = KernelMatrix::from_entries(e).unwrap();
        assert!(!m.detailed_balance().is_balanced());
        let mixed = KernelMatrix::from_entries(vec![
            vec![tophat(1.0, 1.0).unwrap(), tophat(1.0, 2.0).unwrap()],
            vec![tophat(1.0, 1.0).unwrap(), tophat(1.0, 1.0).unwrap()],
        ])
        .unwrap();
        assert!(matches!(mixed.detailed_balance(), DetailedBalance::Undetermined { .. }));
    }

    #[test]
    fn report_flags_for_fig_scalar1() {
        let k = KernelMatrix::scalar(tophat(2.0, 1.0).unwrap());
        let r = HypothesisReport::build(&k, &[0.25], &[1.0], 0.01).unwrap();
        assert!(!r.theorem_applicability.weak_small_mass);
        assert!(r.theorem_applicability.weak_arbitrary_mass);
        assert!(r.theorem_applicability.classical);
    }

    #[test]
    fn report_flags_for_unbalanced_system() {
        let k = KernelMatrix::from_scale_matrix(tophat(1.0, 1.0).unwrap(), vec![vec![20.0, -10.0], vec![5.0, 20.0]])
            .unwrap();
        let r = HypothesisReport::build(&k, &[0.25, 0.25], &[1.0, 1.0], 0.01).unwrap();
        assert!(!r.hypotheses.h5_detailed_balance);
        assert!(!r.theorem_applicability.weak_arbitrary_mass);
        assert!(!r.theorem_applicability.strong);
    }
}
