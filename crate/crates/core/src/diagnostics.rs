//! Functionals and steady-state indicators: mass, entropy, second moment,
//! interaction and free energy, and the flatness of the potential on the
//! essential support.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, CellField};
use crate::kernel::DetailedBalance;
use crate::scheme::{potentials, SystemState};

/// Density threshold defining the essential support.
pub const DEFAULT_U_ESS: f64 = 1e-4;

/// `H[u] = sum_j u_j log(u_j) dx`, with `0 log 0 = 0`.
pub fn entropy(f: &CellField) -> Result<f64> {
    let mut acc = 0.0;
    for (j, &v) in f.values().iter().enumerate() {
        if v < 0.0 {
            return Err(Error::NegativeDensity { cell: j, value: v });
        }
        if v > 0.0 {
            acc += v * v.ln();
        }
    }
    Ok(acc * f.grid().dx())
}

/// `I[u] = sum_j u_j x_j^2 dx`.
pub fn second_moment(f: &CellField) -> f64 {
    let g = f.grid();
    f.values()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let x = g.center(j);
            v * x * x
        })
        .sum::<f64>()
        * g.dx()
}

/// Species weights used in the energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyWeights {
    pub weights: Vec<f64>,
    /// False when detailed balance failed (or was undetermined) and unit
    /// weights were substituted.
    pub balanced: bool,
}

impl EnergyWeights {
    pub fn unit(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            balanced: true,
        }
    }

    pub fn from_balance(balance: &DetailedBalance, n: usize) -> Self {
        match balance.weights() {
            Some(w) => Self {
                weights: w.to_vec(),
                balanced: true,
            },
            None => Self {
                weights: vec![1.0; n],
                balanced: false,
            },
        }
    }

    pub fn flag(&self) -> &'static str {
        if self.balanced {
            "ok"
        } else {
            "violated"
        }
    }
}

fn check_weights(state: &SystemState, weights: &EnergyWeights) -> Result<()> {
    if weights.weights.len() != state.n_species() {
        return Err(Error::invalid(
            "weights",
            format!("{} weights for {} species", weights.weights.len(), state.n_species()),
        ));
    }
    Ok(())
}

fn interaction_energy_with(state: &SystemState, weights: &EnergyWeights, conv: &[CellField]) -> f64 {
    let dx = state.grid().dx();
    0.5 * state
        .fields()
        .iter()
        .zip(conv)
        .zip(&weights.weights)
        .map(|((u, c), pi)| pi * u.values().iter().zip(c.values()).map(|(a, b)| a * b).sum::<f64>() * dx)
        .sum::<f64>()
}

/// `1/2 sum_i pi_i sum_l int u_i (K_il * u_l)`.
pub fn interaction_energy(state: &SystemState, weights: &EnergyWeights) -> Result<f64> {
    check_weights(state, weights)?;
    Ok(interaction_energy_with(state, weights, &state.interaction_potentials()))
}

/// `sum_i D_i pi_i H[u_i] + interaction energy`.
pub fn free_energy(state: &SystemState, weights: &EnergyWeights) -> Result<f64> {
    check_weights(state, weights)?;
    let mut total = interaction_energy(state, weights)?;
    for ((f, d), pi) in state
        .fields()
        .iter()
        .zip(&state.params().diffusion)
        .zip(&weights.weights)
    {
        total += d * pi * entropy(f)?;
    }
    Ok(total)
}

fn population_std(xi: &CellField, u: &CellField, u_ess: f64) -> f64 {
    let picked: Vec<f64> = xi
        .values()
        .iter()
        .zip(u.values())
        .filter(|(_, &u)| u > u_ess)
        .map(|(&x, _)| x)
        .collect();
    if picked.is_empty() {
        return f64::INFINITY;
    }
    let n = picked.len() as f64;
    let mean = picked.iter().sum::<f64>() / n;
    (picked.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Mean of `xi` over `{u > u_ess}`, `NaN` if the set is empty.
pub fn support_mean(xi: &CellField, u: &CellField, u_ess: f64) -> f64 {
    let (n, s) = xi
        .values()
        .iter()
        .zip(u.values())
        .filter(|(_, &u)| u > u_ess)
        .fold((0usize, 0.0), |(n, s), (x, _)| (n + 1, s + x));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Population standard deviation of `xi_i` over `{u_i > u_ess}`;
/// `+inf` if no cell qualifies.
pub fn steadiness(state: &SystemState, i: usize, u_ess: f64) -> Result<f64> {
    let xi = potentials(state)?;
    Ok(population_std(&xi[i], state.field(i), u_ess))
}

/// Local maxima of `f` exceeding `threshold`. A plateau counts once; a
/// boundary cell counts when it exceeds its only neighbor.
pub fn count_local_maxima(f: &CellField, threshold: f64) -> usize {
    local_maxima(f.values())
        .into_iter()
        .filter(|&(j, _)| f.values()[j] > threshold)
        .count()
}

/// `(first, last)` cell of every strict local maximum, plateaus included.
fn local_maxima(v: &[f64]) -> Vec<(usize, usize)> {
    let n = v.len();
    let mut out = Vec::new();
    let mut j = 0;
    while j < n {
        let mut k = j;
        while k + 1 < n && v[k + 1] == v[j] {
            k += 1;
        }
        let left_ok = j == 0 || v[j - 1] < v[j];
        let right_ok = k == n - 1 || v[k + 1] < v[j];
        if left_ok && right_ok && n > 1 {
            out.push((j, k));
        }
        j = k + 1;
    }
    out
}

/// Topographic prominence of the maximum occupying cells `j..=k`: its
/// height above the higher of the lowest points separating it from a
/// higher cell (or the boundary) on either side. A maximum touching a wall
/// uses its one interior side, as its mirror image across the wall would.
/// Among equal maxima the leftmost is treated as the higher one.
fn prominence(v: &[f64], j: usize, k: usize) -> f64 {
    let h = v[j];
    let mut left = h;
    for &x in v[..j].iter().rev() {
        if x >= h {
            break;
        }
        left = left.min(x);
    }
    let mut right = h;
    for &x in &v[k + 1..] {
        if x > h {
            break;
        }
        right = right.min(x);
    }
    let base = match (j == 0, k == v.len() - 1) {
        (true, true) => return 0.0,
        (true, false) => right,
        (false, true) => left,
        (false, false) => left.max(right),
    };
    h - base
}

/// Number of distinct peaks: local maxima above `threshold` whose
/// prominence exceeds `rel_prominence * max(f)`. Round-off ripples on a
/// flat top are not counted as separate peaks.
pub fn count_peaks(f: &CellField, threshold: f64, rel_prominence: f64) -> usize {
    let v = f.values();
    let min_prom = rel_prominence * f.max();
    local_maxima(v)
        .into_iter()
        .filter(|&(j, k)| v[j] > threshold && prominence(v, j, k) > min_prom)
        .count()
}

/// Relative prominence used when counting peaks.
pub const DEFAULT_PEAK_PROMINENCE: f64 = 1e-2;

/// Observables at one instant of a run.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    pub mass: Vec<f64>,
    pub entropy: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub max_value: Vec<f64>,
    /// `|{u_i > u_ess}|`.
    pub support_measure: Vec<f64>,
    pub steadiness: Vec<f64>,
    pub interaction_energy: f64,
    pub free_energy: f64,
    pub balanced: bool,
}

impl DiagnosticsRecord {
    pub fn compute(state: &SystemState, weights: &EnergyWeights, u_ess: f64, dt: f64) -> Result<Self> {
        check_weights(state, weights)?;
        let xi = potentials(state)?;
        let conv = state.interaction_potentials();
        let dx = state.grid().dx();
        let fields = state.fields();
        let entropy = fields.iter().map(entropy).collect::<Result<Vec<_>>>()?;
        let k_energy = interaction_energy_with(state, weights, &conv);
        let free = k_energy
            + entropy
                .iter()
                .zip(&state.params().diffusion)
                .zip(&weights.weights)
                .map(|((h, d), pi)| d * pi * h)
                .sum::<f64>();
        Ok(Self {
            t: state.t,
            dt,
            mass: state.masses(),
            entropy,
            second_moment: fields.iter().map(second_moment).collect(),
            max_value: fields.iter().map(CellField::max).collect(),
            support_measure: fields
                .iter()
                .map(|f| f.values().iter().filter(|&&v| v > u_ess).count() as f64 * dx)
                .collect(),
            steadiness: xi
                .iter()
                .zip(fields)
                .map(|(x, u)| population_std(x, u, u_ess))
                .collect(),
            interaction_energy: k_energy,
            free_energy: free,
            balanced: weights.balanced,
        })
    }
}

/// Header of the diagnostics CSV for `n` species.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string(), "dt".to_string()];
    for prefix in ["mass", "H", "I", "maxu", "steady"] {
        cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    cols.extend(["K_energy", "free_energy", "balance_flag"].map(String::from));
    cols.join(",")
}

pub fn write_csv_row<W: Write>(mut w: W, r: &DiagnosticsRecord) -> Result<()> {
    let mut cols = vec![fmt_f64(r.t), fmt_f64(r.dt)];
    for series in [&r.mass, &r.entropy, &r.second_moment, &r.max_value, &r.steadiness] {
        cols.extend(series.iter().map(|&v| fmt_f64(v)));
    }
    cols.push(fmt_f64(r.interaction_energy));
    cols.push(fmt_f64(r.free_energy));
    cols.push(if r.balanced { "ok" } else { "violated" }.to_string());
    writeln!(w, "{}", cols.join(","))?;
    Ok(())
}
