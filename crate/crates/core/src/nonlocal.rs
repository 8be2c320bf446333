//! Discrete convolution `K * u` of cell-average fields.
//!
//! A field is read as its piecewise-constant reconstruction, extended by
//! zero outside `(-L, L)`, and the convolution is evaluated exactly at cell
//! centers. All three paths compute the same quantity:
//!
//! * `TopHatExact`: prefix sums of the field mass, `O(n)`.
//! * `Direct`: overlap-weighted sum over the kernel window, `O(n w)`.
//! * `Spectral`: the `Direct` Toeplitz product through a zero-padded FFT.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid1D};
use crate::kernel::{support_cells, Kernel};

/// Kernels wider than this many cells default to the spectral path.
const DIRECT_WINDOW_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ConvolutionMethod {
    TopHatExact,
    Direct,
    Spectral,
}

struct SpectralTables {
    len: usize,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// A kernel bound to a grid, with the tables needed by its evaluation path.
/// Immutable after construction; evaluation allocates only caller-local scratch.
#[derive(Clone)]
pub struct ConvolutionPlan {
    method: ConvolutionMethod,
    kernel: Kernel,
    grid: Grid1D,
    /// `weights[m + half_width] = int over [m dx - dx/2, m dx + dx/2] of K`.
    weights: Vec<f64>,
    half_width: usize,
    spectral: Option<Arc<SpectralTables>>,
}

impl fmt::Debug for ConvolutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvolutionPlan")
            .field("method", &self.method)
            .field("kernel", &self.kernel)
            .field("n_cells", &self.grid.n_cells())
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl ConvolutionPlan {
    /// Fastest applicable path: exact prefix sums for top-hats, direct sums
    /// for narrow kernels, FFT otherwise.
    pub fn new(kernel: &Kernel, grid: &Grid1D) -> Result<Self> {
        let method = match kernel {
            Kernel::TopHat { .. } => ConvolutionMethod::TopHatExact,
            Kernel::Sampled(_) => {
                if support_cells(kernel.support_radius(), grid.dx()) <= DIRECT_WINDOW_LIMIT {
                    ConvolutionMethod::Direct
                } else {
                    ConvolutionMethod::Spectral
                }
            }
        };
        Self::with_method(kernel, grid, method)
    }

    pub fn with_method(kernel: &Kernel, grid: &Grid1D, method: ConvolutionMethod) -> Result<Self> {
        if method == ConvolutionMethod::TopHatExact && !matches!(kernel, Kernel::TopHat { .. }) {
            return Err(Error::invalid("method", "TopHatExact requires a top-hat kernel"));
        }
        let n = grid.n_cells();
        let dx = grid.dx();
        let half_width = support_cells(kernel.support_radius(), dx).min(n - 1);
        let weights: Vec<f64> = (-(half_width as i64)..=half_width as i64)
            .map(|m| {
                let c = m as f64 * dx;
                kernel.integral(c - 0.5 * dx, c + 0.5 * dx)
            })
            .collect();
        let spectral = (method == ConvolutionMethod::Spectral).then(|| {
            let len = (n + 2 * half_width + 1).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let mut kernel_hat = vec![Complex64::new(0.0, 0.0); len];
            for (idx, w) in weights.iter().enumerate() {
                let m = idx as i64 - half_width as i64;
                kernel_hat[m.rem_euclid(len as i64) as usize] = Complex64::new(*w, 0.0);
            }
            forward.process(&mut kernel_hat);
            Arc::new(SpectralTables {
                len,
                kernel_hat,
                forward,
                inverse,
            })
        });
        Ok(Self {
            method,
            kernel: kernel.clone(),
            grid: *grid,
            weights,
            half_width,
            spectral,
        })
    }

    pub fn method(&self) -> ConvolutionMethod {
        self.method
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `K * u` at cell centers.
    pub fn convolve(&self, u: &CellField) -> Result<CellField> {
        self.grid.check_same(u.grid())?;
        let mut out = vec![0.0; self.grid.n_cells()];
        self.convolve_into(u.values(), &mut out);
        CellField::from_values(self.grid, out)
    }

    /// Slice form of [`convolve`](Self::convolve); `u` and `out` must have
    /// `n_cells` entries.
    pub fn convolve_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        assert_eq!(u.len(), n, "field length does not match plan grid");
        assert_eq!(out.len(), n, "output length does not match plan grid");
        match self.method {
            ConvolutionMethod::TopHatExact => self.tophat_exact(u, out),
            ConvolutionMethod::Direct => self.direct(u, out),
            ConvolutionMethod::Spectral => self.spectral(u, out),
        }
    }

    fn tophat_exact(&self, u: &[f64], out: &mut [f64]) {
        let Kernel::TopHat { alpha, radius } = self.kernel else {
            unreachable!("plan validated at construction")
        };
        let n = self.grid.n_cells();
        let dx = self.grid.dx();
        let mut prefix = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in u {
            acc += v * dx;
            prefix.push(acc);
        }
        // In cell units the window around center j is [j + 0.5 - r, j + 0.5 + r],
        // so both ends sit at a fixed offset and fraction for every j.
        let r = radius / dx;
        let split = |c: f64| -> (isize, f64) {
            let k = c.floor();
            let frac = c - k;
            if frac > 1.0 - 1e-12 {
                (k as isize + 1, 0.0)
            } else if frac < 1e-12 {
                (k as isize, 0.0)
            } else {
                (k as isize, frac)
            }
        };
        let (hi_off, hi_frac) = split(0.5 + r);
        let (lo_off, lo_frac) = split(0.5 - r);
        let cumulative = |k: isize, frac: f64| -> f64 {
            if k < 0 {
                0.0
            } else if k as usize >= n {
                prefix[n]
            } else {
                let k = k as usize;
                prefix[k] + u[k] * frac * dx
            }
        };
        let height = -alpha / (2.0 * radius);
        for (j, o) in out.iter_mut().enumerate() {
            let j = j as isize;
            *o = height * (cumulative(j + hi_off, hi_frac) - cumulative(j + lo_off, lo_frac));
        }
    }

    fn direct(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        let w = self.half_width;
        for (j, o) in out.iter_mut().enumerate() {
            let lo = j.saturating_sub(w);
            let hi = (j + w).min(n - 1);
            let mut acc = 0.0;
            for (k, uk) in u.iter().enumerate().take(hi + 1).skip(lo) {
                // offset m = j - k, stored at m + w
                acc += self.weights[j + w - k] * uk;
            }
            *o = acc;
        }
    }

    fn spectral(&self, u: &[f64], out: &mut [f64]) {
        let t = self.spectral.as_ref().expect("spectral tables built for spectral plans");
        let mut buf = vec![Complex64::new(0.0, 0.0); t.len];
        for (b, v) in buf.iter_mut().zip(u) {
            b.re = *v;
        }
        t.forward.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&t.kernel_hat) {
            *b *= h;
        }
        t.inverse.process(&mut buf);
        let scale = 1.0 / t.len as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }

    /// `d/dx (K * u)` at the `n_cells + 1` interfaces. Boundary entries are 0.
    ///
    /// Top-hat plans use the translate identity
    /// `-alpha (u(x + R) - u(x - R)) / (2R)` on the piecewise-linear
    /// interpolant of the cell averages; other plans difference the
    /// center values across each interface.
    pub fn grad_convolve_at_interfaces(&self, u: &CellField) -> Result<Vec<f64>> {
        self.grid.check_same(u.grid())?;
        let n = self.grid.n_cells();
        let mut grad = vec![0.0; n + 1];
        match self.kernel {
            Kernel::TopHat { alpha, radius } if self.method == ConvolutionMethod::TopHatExact => {
                let v = u.values();
                for (j, g) in grad.iter_mut().enumerate().take(n).skip(1) {
                    let x = self.grid.edge(j);
                    let ahead = linear_interpolant(&self.grid, v, x + radius);
                    let behind = linear_interpolant(&self.grid, v, x - radius);
                    *g = -alpha * (ahead - behind) / (2.0 * radius);
                }
            }
            _ => {
                let c = self.convolve(u)?;
                let c = c.values();
                let dx = self.grid.dx();
                for j in 1..n {
                    grad[j] = (c[j] - c[j - 1]) / dx;
                }
            }
        }
        Ok(grad)
    }
}

/// Piecewise-linear interpolant through the cell centers, constant on the
/// two outer half-cells and zero outside the domain. At the walls
/// themselves (to within round-off) it takes the mean of the one-sided
/// limits.
pub fn linear_interpolant(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    let l = grid.half_length();
    let n = grid.n_cells();
    let tol = 1e-12 * l;
    if (x + l).abs() <= tol {
        return 0.5 * values[0];
    }
    if (x - l).abs() <= tol {
        return 0.5 * values[n - 1];
    }
    if x < -l || x > l {
        return 0.0;
    }
    let s = (x + l) / grid.dx() - 0.5;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    let k = s.floor() as usize;
    let frac = s - k as f64;
    values[k] * (1.0 - frac) + values[k + 1] * frac
}
