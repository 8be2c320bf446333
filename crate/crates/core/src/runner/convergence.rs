//! Grid self-convergence: run a scenario at successively doubled
//! resolutions and compare each level with the next one restricted by
//! pairwise cell averaging.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{run, NoopObserver};

use super::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceLevel {
    pub cells_per_unit: f64,
    pub n_cells: usize,
    pub dx: f64,
    /// `sum_i ||u_i^h - R u_i^{h/2}||_1` against the next finer level.
    pub l1_difference: Option<f64>,
    /// `log2` of the ratio of this level's difference to the next one.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub t_end: f64,
    pub levels: Vec<ConvergenceLevel>,
}

impl ConvergenceTable {
    pub fn orders(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.order).collect()
    }

    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>10} {:>8} {:>12} {:>14} {:>8}\n", "cells/unit", "cells", "dx", "L1 diff", "order");
        let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$e}"));
        for l in &self.levels {
            s.push_str(&format!(
                "{:>10} {:>8} {:>12.4e} {:>14} {:>8}\n",
                l.cells_per_unit,
                l.n_cells,
                l.dx,
                opt(l.l1_difference, 4),
                l.order.map_or_else(|| "-".to_string(), |o| format!("{o:.3}")),
            ));
        }
        s
    }
}

/// Averages neighbouring pairs of a field on `2n` cells down to `n` cells.
pub fn restrict_pairwise(fine: &[f64]) -> Vec<f64> {
    fine.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Runs `config` at `levels` resolutions `cells_per_unit * 2^k` and reports
/// the `L^1` self-convergence orders at `time.t_end`.
pub fn convergence_study(config: &RunConfig, levels: usize) -> Result<ConvergenceTable> {
    if levels < 3 {
        return Err(Error::invalid(
            "levels",
            format!("need at least 3 refinement levels to estimate an order, got {levels}"),
        ));
    }
    let mut finals = Vec::with_capacity(levels);
    let mut rows = Vec::with_capacity(levels);
    for k in 0..levels {
        let mut c = config.refined(f64::from(1u32 << k));
        c.time.snapshot_times = vec![c.time.t_end];
        c.time.diagnostic_stride = usize::MAX;
        c.time.progress_every = 0;
        let setup = c.build()?;
        let mut state = setup.state;
        run(&mut state, &setup.controls, &mut NoopObserver)?;
        let g = *state.grid();
        if let Some((prev, _)) = finals.last() {
            let prev: &Vec<Vec<f64>> = prev;
            if 2 * prev[0].len() != g.n_cells() {
                return Err(Error::invalid(
                    "cells_per_unit",
                    "2 L cells_per_unit must be an integer so that levels nest",
                ));
            }
        }
        finals.push((
            state.fields().iter().map(|f| f.values().to_vec()).collect::<Vec<_>>(),
            g.dx(),
        ));
        rows.push(ConvergenceLevel {
            cells_per_unit: c.domain.cells_per_unit,
            n_cells: g.n_cells(),
            dx: g.dx(),
            l1_difference: None,
            order: None,
        });
    }
    for k in 0..levels - 1 {
        let (coarse, dx) = &finals[k];
        let (fine, _) = &finals[k + 1];
        let diff: f64 = coarse
            .iter()
            .zip(fine)
            .map(|(c, f)| {
                c.iter()
                    .zip(restrict_pairwise(f))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    * dx
            })
            .sum();
        rows[k].l1_difference = Some(diff);
    }
    for k in 0..levels - 2 {
        if let (Some(a), Some(b)) = (rows[k].l1_difference, rows[k + 1].l1_difference) {
            rows[k].order = Some((a / b).log2());
        }
    }
    Ok(ConvergenceTable {
        t_end: config.time.t_end,
        levels: rows,
    })
}
