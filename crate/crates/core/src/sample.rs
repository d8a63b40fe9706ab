//! Seeded random states for tests, verification sweeps and twin experiments.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::dynamics::project_velocity;
use crate::grid::{Field3, Grid, StateField};

/// Highest horizontal wavenumber used by [`smooth_field`].
pub const MAX_WAVENUMBER: i32 = 2;
/// Highest vertical mode used by [`smooth_field`].
pub const MAX_VERTICAL_MODE: i32 = 2;

/// Sum of a few low Fourier modes times `sin(mπz/a)`, with N(0,1) coefficients.
///
/// The coefficients are drawn before looking at the grid, so the same RNG state
/// samples the same continuous function at every resolution.
pub fn smooth_field<R: Rng + ?Sized>(grid: &Grid, rng: &mut R, amplitude: f64) -> Field3 {
    let mut modes = Vec::new();
    for kx in 0..=MAX_WAVENUMBER {
        for ky in -MAX_WAVENUMBER..=MAX_WAVENUMBER {
            for m in 1..=MAX_VERTICAL_MODE {
                let c: f64 = StandardNormal.sample(rng);
                let phase = rng.random_range(0.0..2.0 * PI);
                modes.push((kx as f64, ky as f64, m as f64, c, phase));
            }
        }
    }
    let norm = amplitude / (modes.len() as f64).sqrt();
    let a = grid.a;
    let mut f = Field3::from_fn(*grid, |x, y, z| {
        modes
            .iter()
            .map(|&(kx, ky, m, c, ph)| c * (kx * x + ky * y + ph).cos() * (m * PI * z / a).sin())
            .sum::<f64>()
            * norm
    });
    f.zero_boundaries();
    f
}

/// Smooth random state whose velocity satisfies the rigid-lid constraint.
pub fn random_state<R: Rng + ?Sized>(grid: &Grid, rng: &mut R, amplitude: f64) -> StateField {
    let mut u = smooth_field(grid, rng, amplitude);
    let mut v = smooth_field(grid, rng, amplitude);
    let theta = smooth_field(grid, rng, amplitude);
    // Finite input always admits a projection.
    project_velocity(&mut u, &mut v).expect("projection of a finite state");
    StateField { u, v, theta }
}

/// Independent N(0, amplitude²) node values, zero on the boundary levels.
pub fn random_noise_state<R: Rng + ?Sized>(grid: &Grid, rng: &mut R, amplitude: f64) -> StateField {
    let mut x = StateField::zeros(*grid);
    for f in x.components_mut() {
        for v in f.as_mut_slice() {
            let s: f64 = StandardNormal.sample(rng);
            *v = amplitude * s;
        }
        f.zero_boundaries();
    }
    x
}

/// Smooth random forcing-shaped field (no rigid-lid projection).
pub fn random_forcing<R: Rng + ?Sized>(grid: &Grid, rng: &mut R, amplitude: f64) -> StateField {
    StateField {
        u: smooth_field(grid, rng, amplitude),
        v: smooth_field(grid, rng, amplitude),
        theta: smooth_field(grid, rng, amplitude),
    }
}
