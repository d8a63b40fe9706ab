//! Doubly periodic Poisson solve for the surface pressure.
//!
//! The operator is `Dx·Dx + Dy·Dy` built from the same centered differences as
//! the divergence, so the projected tendencies satisfy the discrete rigid-lid
//! constraint to rounding. It is diagonalized by the 2D DFT; modes where the
//! symbol vanishes (the mean and the Nyquist checkerboards) are set to zero.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Contractual bound on the relative residual of the solve.
pub const POISSON_TOLERANCE: f64 = 1e-12;

pub struct PoissonSolver {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// `1/symbol` in the transposed (x-major) layout, zero on the null modes.
    inv_symbol: Vec<f64>,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

impl PoissonSolver {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        let mut planner = FftPlanner::new();
        let sx: Vec<f64> = (0..nx)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / nx as f64).sin().powi(2) / (dx * dx))
            .collect();
        let sy: Vec<f64> = (0..ny)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 / ny as f64).sin().powi(2) / (dy * dy))
            .collect();
        let cutoff = 1e-10 * (1.0 / (dx * dx)).min(1.0 / (dy * dy));
        let mut inv_symbol = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                let s = sx[i] + sy[j];
                inv_symbol[i * ny + j] = if s > cutoff { -1.0 / s } else { 0.0 };
            }
        }
        PoissonSolver {
            nx,
            ny,
            dx,
            dy,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
            inv_symbol,
        }
    }

    /// Minimum-norm solution of `(Dx² + Dy²) p = rhs` (row-major, x fastest).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut buf: Vec<Complex<f64>> = rhs.iter().map(|&r| Complex::new(r, 0.0)).collect();
        self.fwd_x.process(&mut buf);
        let mut t = vec![Complex::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                t[i * ny + j] = buf[j * nx + i];
            }
        }
        self.fwd_y.process(&mut t);
        for (c, s) in t.iter_mut().zip(&self.inv_symbol) {
            *c *= *s;
        }
        self.inv_y.process(&mut t);
        for j in 0..ny {
            for i in 0..nx {
                buf[j * nx + i] = t[i * ny + j];
            }
        }
        self.inv_x.process(&mut buf);
        let norm = 1.0 / (nx * ny) as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Centered periodic `∂x` on a horizontal field.
    pub fn ddx(&self, f: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let s = 1.0 / (2.0 * self.dx);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let ip = (i + 1) % nx;
                let im = (i + nx - 1) % nx;
                out[j * nx + i] = s * (f[j * nx + ip] - f[j * nx + im]);
            }
        }
        out
    }

    /// Centered periodic `∂y` on a horizontal field.
    pub fn ddy(&self, f: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let s = 1.0 / (2.0 * self.dy);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let jp = (j + 1) % ny;
            let jm = (j + ny - 1) % ny;
            for i in 0..nx {
                out[j * nx + i] = s * (f[jp * nx + i] - f[jm * nx + i]);
            }
        }
        out
    }

    /// Solves `(Dx² + Dy²) p = Dx gx + Dy gy` and checks the residual.
    pub fn solve_divergence(&self, gx: &[f64], gy: &[f64]) -> Result<Vec<f64>> {
        let dgx = self.ddx(gx);
        let dgy = self.ddy(gy);
        let rhs: Vec<f64> = dgx.iter().zip(&dgy).map(|(a, b)| a + b).collect();
        let scale = max_abs(&dgx) + max_abs(&dgy);
        if scale == 0.0 {
            return Ok(vec![0.0; self.nx * self.ny]);
        }
        let p = self.solve(&rhs);
        let px = self.ddx(&p);
        let py = self.ddy(&p);
        let lap_x = self.ddx(&px);
        let lap_y = self.ddy(&py);
        let residual = lap_x
            .iter()
            .zip(&lap_y)
            .zip(&rhs)
            .fold(0.0f64, |m, ((a, b), r)| m.max((a + b - r).abs()))
            / scale;
        if !(residual <= POISSON_TOLERANCE) {
            return Err(Error::PoissonNotConverged { residual });
        }
        Ok(p)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
