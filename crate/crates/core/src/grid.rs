//! Discrete domain `T² × (0, a)`, collocated fields and the finite-difference
//! operators the model is assembled from.
//!
//! Every field lives on the same nodes (A-grid). Horizontal directions are
//! periodic with `nx`/`ny` cells on `[0, 2π)`; the vertical has `nz` levels
//! including both boundaries `z = 0` and `z = a`. Storage is x-fastest, then y,
//! then z, so a horizontal slab at one level is contiguous.
//!
//! The discrete inner product is the quadrature
//! `⟨f, g⟩ = Σ dx·dy·wz(k)·f·g` with trapezoid weights `wz` in z. Each linear
//! operator comes with a plain (Euclidean) transpose, used by the adjoint
//! model, and with its adjoint for the weighted inner product.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Depth of the domain.
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, a: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!("need nx, ny >= 4, got {nx}x{ny}")));
        }
        if nz < 3 {
            return Err(Error::InvalidGrid(format!("need nz >= 3, got {nz}")));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidGrid(format!("depth a must be positive, got {a}")));
        }
        Ok(Grid { nx, ny, nz, a })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * PI / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        2.0 * PI / self.ny as f64
    }

    #[inline]
    pub fn dz(&self) -> f64 {
        self.a / (self.nz - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    pub fn z(&self, k: usize) -> f64 {
        if k == self.nz - 1 {
            self.a
        } else {
            k as f64 * self.dz()
        }
    }

    #[inline]
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn slab(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Trapezoid weight of level `k`.
    #[inline]
    pub fn wz(&self, k: usize) -> f64 {
        if k == 0 || k == self.nz - 1 {
            0.5 * self.dz()
        } else {
            self.dz()
        }
    }

    /// Full quadrature weight of a node on level `k`.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        self.dx() * self.dy() * self.wz(k)
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{} (a={})", self.nx, self.ny, self.nz, self.a)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny || self.nz != other.nz || self.a != other.a {
            return Err(Error::ShapeMismatch {
                expected: self.shape_string(),
                found: other.shape_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.shape_string())
    }
}

/// Scalar field on the 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    grid: Grid,
    data: Vec<f64>,
}

impl Field3 {
    pub fn zeros(grid: Grid) -> Self {
        Field3 { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field3 { grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", grid.len()),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Field3 { grid, data })
    }

    /// Samples `f(x, y, z)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = Field3::zeros(grid);
        for k in 0..grid.nz {
            let z = grid.z(k);
            for j in 0..grid.ny {
                let y = grid.y(j);
                for i in 0..grid.nx {
                    out.data[grid.idx(i, j, k)] = f(grid.x(i), y, z);
                }
            }
        }
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.idx(i, j, k)]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let s = self.grid.slab();
        &self.data[k * s..(k + 1) * s]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.grid.slab();
        &mut self.data[k * s..(k + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Imposes the Dirichlet condition: zero at `z = 0` and `z = a`.
    pub fn zero_boundaries(&mut self) {
        let nz = self.grid.nz;
        self.level_mut(0).fill(0.0);
        self.level_mut(nz - 1).fill(0.0);
    }

    pub fn has_zero_boundaries(&self) -> bool {
        let nz = self.grid.nz;
        self.level(0).iter().chain(self.level(nz - 1)).all(|&v| v == 0.0)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Field3 {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Field3) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Pointwise product accumulated: `self += c * f * g`.
    pub fn add_product(&mut self, c: f64, f: &Field3, g: &Field3) {
        for ((o, a), b) in self.data.iter_mut().zip(&f.data).zip(&g.data) {
            *o += c * a * b;
        }
    }

    /// Weighted inner product (grid quadrature).
    pub fn dot(&self, other: &Field3) -> f64 {
        let g = self.grid;
        let s = g.slab();
        let mut total = 0.0;
        for k in 0..g.nz {
            let lev: f64 = self.data[k * s..(k + 1) * s]
                .iter()
                .zip(&other.data[k * s..(k + 1) * s])
                .map(|(a, b)| a * b)
                .sum();
            total += g.weight(k) * lev;
        }
        total
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Euclidean inner product of the raw node values.
    pub fn dot_euclid(&self, other: &Field3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Multiplies by the quadrature weights (maps a weighted-space vector to its Euclidean dual).
    pub fn mul_weights(&mut self) {
        let g = self.grid;
        for k in 0..g.nz {
            let w = g.weight(k);
            self.level_mut(k).iter_mut().for_each(|v| *v *= w);
        }
    }

    pub fn div_weights(&mut self) {
        let g = self.grid;
        for k in 0..g.nz {
            let w = g.weight(k);
            self.level_mut(k).iter_mut().for_each(|v| *v /= w);
        }
    }

    /// Periodic roll by `shift` cells along `axis`: `out[i] = self[i - shift]`.
    pub fn roll(&self, axis: Axis, shift: isize) -> Field3 {
        let g = self.grid;
        let mut out = Field3::zeros(g);
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let (si, sj) = match axis {
                        Axis::X => ((i as isize - shift).rem_euclid(g.nx as isize) as usize, j),
                        Axis::Y => (i, (j as isize - shift).rem_euclid(g.ny as isize) as usize),
                    };
                    out.data[g.idx(i, j, k)] = self.data[g.idx(si, sj, k)];
                }
            }
        }
        out
    }
}

impl Index<usize> for Field3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Field3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Horizontal field on the torus (surface pressure, depth integrals).
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Field2 { nx, ny, data: vec![0.0; nx * ny] }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// Horizontal differences
// ---------------------------------------------------------------------------

/// One centered difference along `axis` with periodic wrap, added as `out += c * D f`.
pub(crate) fn add_ddh(out: &mut Field3, c: f64, f: &Field3, axis: Axis) {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let src = f.as_slice();
    let dst = out.as_mut_slice();
    match axis {
        Axis::X => {
            let s = c / (2.0 * g.dx());
            for row in 0..ny * g.nz {
                let base = row * nx;
                let r = &src[base..base + nx];
                let o = &mut dst[base..base + nx];
                o[0] += s * (r[1] - r[nx - 1]);
                for i in 1..nx - 1 {
                    o[i] += s * (r[i + 1] - r[i - 1]);
                }
                o[nx - 1] += s * (r[0] - r[nx - 2]);
            }
        }
        Axis::Y => {
            let s = c / (2.0 * g.dy());
            for k in 0..g.nz {
                let base = k * nx * ny;
                for j in 0..ny {
                    let jp = if j + 1 == ny { 0 } else { j + 1 };
                    let jm = if j == 0 { ny - 1 } else { j - 1 };
                    for i in 0..nx {
                        dst[base + j * nx + i] +=
                            s * (src[base + jp * nx + i] - src[base + jm * nx + i]);
                    }
                }
            }
        }
    }
}

/// Single centered difference along `axis`.
pub fn ddh(f: &Field3, axis: Axis) -> Field3 {
    let mut out = Field3::zeros(*f.grid());
    add_ddh(&mut out, 1.0, f, axis);
    out
}

/// `order`-fold centered difference along `axis` (repeated application).
pub fn horizontal_derivative(f: &Field3, axis: Axis, order: usize) -> Result<Field3> {
    let g = f.grid();
    if order == 0 {
        return Ok(f.clone());
    }
    if 2 * order > g.nx.min(g.ny) {
        return Err(Error::GridTooSmall { nx: g.nx, ny: g.ny, order });
    }
    let mut out = ddh(f, axis);
    for _ in 1..order {
        out = ddh(&out, axis);
    }
    Ok(out)
}

/// Adjoint of [`horizontal_derivative`] for the weighted inner product.
/// Weights do not depend on x or y, so the centered difference is skew.
pub fn horizontal_derivative_adjoint(f: &Field3, axis: Axis, order: usize) -> Result<Field3> {
    let mut out = horizontal_derivative(f, axis, order)?;
    if order % 2 == 1 {
        out.scale(-1.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Vertical operators (column-wise)
// ---------------------------------------------------------------------------

/// Centered `∂z` at interior levels, one-sided second order at the two boundaries.
pub fn vertical_derivative(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (s, nz) = (g.slab(), g.nz);
    let h2 = 2.0 * g.dz();
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    for p in 0..s {
        let col = |k: usize| src[p + k * s];
        dst[p] = (-3.0 * col(0) + 4.0 * col(1) - col(2)) / h2;
        for k in 1..nz - 1 {
            dst[p + k * s] = (col(k + 1) - col(k - 1)) / h2;
        }
        dst[p + (nz - 1) * s] = (3.0 * col(nz - 1) - 4.0 * col(nz - 2) + col(nz - 3)) / h2;
    }
    out
}

/// Euclidean transpose of [`vertical_derivative`].
pub fn vertical_derivative_transpose(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (s, nz) = (g.slab(), g.nz);
    let h2 = 2.0 * g.dz();
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    for p in 0..s {
        let l = |k: usize| src[p + k * s] / h2;
        // row 0
        let l0 = l(0);
        dst[p] += -3.0 * l0;
        dst[p + s] += 4.0 * l0;
        dst[p + 2 * s] -= l0;
        for k in 1..nz - 1 {
            let lk = l(k);
            dst[p + (k + 1) * s] += lk;
            dst[p + (k - 1) * s] -= lk;
        }
        let ln = l(nz - 1);
        dst[p + (nz - 1) * s] += 3.0 * ln;
        dst[p + (nz - 2) * s] -= 4.0 * ln;
        dst[p + (nz - 3) * s] += ln;
    }
    out
}

/// Weighted adjoint of [`vertical_derivative`]: `W⁻¹ Dᵀ W`.
pub fn vertical_derivative_adjoint(f: &Field3) -> Field3 {
    let mut tmp = f.clone();
    tmp.mul_weights();
    let mut out = vertical_derivative_transpose(&tmp);
    out.div_weights();
    out
}

/// Trapezoid `∫₀^z f dz'` for every level; zero at `z = 0`.
pub fn cumulative_vertical_integral(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (s, nz) = (g.slab(), g.nz);
    let half = 0.5 * g.dz();
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    for k in 1..nz {
        for p in 0..s {
            dst[p + k * s] = dst[p + (k - 1) * s] + half * (src[p + (k - 1) * s] + src[p + k * s]);
        }
    }
    out
}

/// Euclidean transpose of [`cumulative_vertical_integral`].
pub fn cumulative_vertical_integral_transpose(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (s, nz) = (g.slab(), g.nz);
    let half = 0.5 * g.dz();
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    // I[k] = sum_{l=1..k} half*(f[l-1] + f[l]); transpose via reverse suffix sums.
    let mut suffix = vec![0.0; s];
    for k in (1..nz).rev() {
        for p in 0..s {
            suffix[p] += src[p + k * s];
            let t = half * suffix[p];
            dst[p + k * s] += t;
            dst[p + (k - 1) * s] += t;
        }
    }
    out
}

/// Weighted adjoint of [`cumulative_vertical_integral`].
pub fn cumulative_vertical_integral_adjoint(f: &Field3) -> Field3 {
    let mut tmp = f.clone();
    tmp.mul_weights();
    let mut out = cumulative_vertical_integral_transpose(&tmp);
    out.div_weights();
    out
}

/// Trapezoid integral over the whole depth, per column.
pub fn depth_integral(f: &Field3) -> Field2 {
    let g = *f.grid();
    let s = g.slab();
    let mut out = Field2::zeros(g.nx, g.ny);
    for k in 0..g.nz {
        let w = g.wz(k);
        for (o, v) in out.data.iter_mut().zip(&f.as_slice()[k * s..(k + 1) * s]) {
            *o += w * v;
        }
    }
    out
}

/// Max over columns of `|∫₀^a (∂x u + ∂y v) dz|`.
pub fn max_depth_integrated_divergence(u: &Field3, v: &Field3) -> f64 {
    let mut div = ddh(u, Axis::X);
    add_ddh(&mut div, 1.0, v, Axis::Y);
    depth_integral(&div).max_abs()
}

/// Compact 7-point Laplacian at interior levels; boundary levels of the result are zero.
pub fn laplacian(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (nx, ny, nz, s) = (g.nx, g.ny, g.nz, g.slab());
    let (cx, cy, cz) = (1.0 / (g.dx() * g.dx()), 1.0 / (g.dy() * g.dy()), 1.0 / (g.dz() * g.dz()));
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    for k in 1..nz - 1 {
        for j in 0..ny {
            let jp = if j + 1 == ny { 0 } else { j + 1 };
            let jm = if j == 0 { ny - 1 } else { j - 1 };
            for i in 0..nx {
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let im = if i == 0 { nx - 1 } else { i - 1 };
                let c = src[k * s + j * nx + i];
                dst[k * s + j * nx + i] = cx * (src[k * s + j * nx + ip] - 2.0 * c + src[k * s + j * nx + im])
                    + cy * (src[k * s + jp * nx + i] - 2.0 * c + src[k * s + jm * nx + i])
                    + cz * (src[(k + 1) * s + j * nx + i] - 2.0 * c + src[(k - 1) * s + j * nx + i]);
            }
        }
    }
    out
}

/// Euclidean transpose of [`laplacian`].
pub fn laplacian_transpose(f: &Field3) -> Field3 {
    let g = *f.grid();
    let (nx, ny, nz, s) = (g.nx, g.ny, g.nz, g.slab());
    let (cx, cy, cz) = (1.0 / (g.dx() * g.dx()), 1.0 / (g.dy() * g.dy()), 1.0 / (g.dz() * g.dz()));
    let src = f.as_slice();
    let mut out = Field3::zeros(g);
    let dst = out.as_mut_slice();
    // Horizontal part is a symmetric circulant on each interior level.
    for k in 1..nz - 1 {
        for j in 0..ny {
            let jp = if j + 1 == ny { 0 } else { j + 1 };
            let jm = if j == 0 { ny - 1 } else { j - 1 };
            for i in 0..nx {
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let im = if i == 0 { nx - 1 } else { i - 1 };
                let c = src[k * s + j * nx + i];
                dst[k * s + j * nx + i] += cx * (src[k * s + j * nx + ip] - 2.0 * c + src[k * s + j * nx + im])
                    + cy * (src[k * s + jp * nx + i] - 2.0 * c + src[k * s + jm * nx + i]);
            }
        }
    }
    // Vertical part scatters each interior row onto its three neighbours.
    for k in 1..nz - 1 {
        for p in 0..s {
            let l = cz * src[k * s + p];
            dst[(k + 1) * s + p] += l;
            dst[k * s + p] -= 2.0 * l;
            dst[(k - 1) * s + p] += l;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// State vector and norms
// ---------------------------------------------------------------------------

/// Prognostic state `(u, v, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub u: Field3,
    pub v: Field3,
    pub theta: Field3,
}

/// Names of the three prognostic components, in storage order.
pub const COMPONENTS: [&str; 3] = ["u", "v", "theta"];

impl StateField {
    pub fn zeros(grid: Grid) -> Self {
        StateField { u: Field3::zeros(grid), v: Field3::zeros(grid), theta: Field3::zeros(grid) }
    }

    pub fn new(u: Field3, v: Field3, theta: Field3) -> Result<Self> {
        u.grid().ensure_same(v.grid())?;
        u.grid().ensure_same(theta.grid())?;
        Ok(StateField { u, v, theta })
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn components(&self) -> [&Field3; 3] {
        [&self.u, &self.v, &self.theta]
    }

    pub fn components_mut(&mut self) -> [&mut Field3; 3] {
        [&mut self.u, &mut self.v, &mut self.theta]
    }

    pub fn scale(&mut self, c: f64) {
        self.components_mut().into_iter().for_each(|f| f.scale(c));
    }

    pub fn scaled(&self, c: f64) -> StateField {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn axpy(&mut self, c: f64, other: &StateField) {
        self.u.axpy(c, &other.u);
        self.v.axpy(c, &other.v);
        self.theta.axpy(c, &other.theta);
    }

    /// `self + c * other`
    pub fn plus(&self, c: f64, other: &StateField) -> StateField {
        let mut out = self.clone();
        out.axpy(c, other);
        out
    }

    /// Unweighted sum of the component quadratures (the inner product used for transposition).
    pub fn dot(&self, other: &StateField) -> f64 {
        self.u.dot(&other.u) + self.v.dot(&other.v) + self.theta.dot(&other.theta)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn zero_boundaries(&mut self) {
        self.components_mut().into_iter().for_each(Field3::zero_boundaries);
    }

    pub fn is_prognostic(&self) -> bool {
        self.components().iter().all(|f| f.has_zero_boundaries())
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|f| f.is_finite())
    }

    pub fn mul_weights(&mut self) {
        self.components_mut().into_iter().for_each(Field3::mul_weights);
    }

    pub fn div_weights(&mut self) {
        self.components_mut().into_iter().for_each(Field3::div_weights);
    }

    pub fn roll(&self, axis: Axis, shift: isize) -> StateField {
        StateField {
            u: self.u.roll(axis, shift),
            v: self.v.roll(axis, shift),
            theta: self.theta.roll(axis, shift),
        }
    }

    /// Domain kinetic energy `½∫(u² + v²)`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * (self.u.norm_sq() + self.v.norm_sq())
    }
}

/// Parameters of the `L²_z H^m_xy` and `U^{m+1}` norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub m: usize,
    /// Weight of the temperature terms.
    pub k: f64,
}

impl NormParams {
    pub fn new(m: usize, k: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::param("m", format!("derivative order must be >= 2, got {m}")));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::param("K", format!("must be positive, got {k}")));
        }
        Ok(NormParams { m, k })
    }

    /// Smallest weight for which the linear energy estimate holds:
    /// `K = 2·max(4a²/ν², 2γβ)`.
    pub fn energy_weight(a: f64, nu: f64, gamma: f64, beta: f64) -> f64 {
        2.0 * (4.0 * a * a / (nu * nu)).max(2.0 * gamma * beta)
    }

    /// Horizontal multi-indices `(αx, αy)` with `αx + αy <= m`.
    pub fn multi_indices(&self) -> Vec<(usize, usize)> {
        (0..=self.m).flat_map(|t| (0..=t).map(move |ax| (ax, t - ax))).collect()
    }
}

fn mixed_derivative(f: &Field3, ax: usize, ay: usize) -> Result<Field3> {
    let fx = horizontal_derivative(f, Axis::X, ax)?;
    horizontal_derivative(&fx, Axis::Y, ay)
}

fn check_norm_stencil(grid: &Grid, p: &NormParams) -> Result<()> {
    if 2 * (p.m + 1) > grid.nx.min(grid.ny) {
        return Err(Error::GridTooSmall { nx: grid.nx, ny: grid.ny, order: p.m + 1 });
    }
    Ok(())
}

/// `Σ_{|α|≤m} ‖∂^α f‖²` for one scalar field.
pub fn field_norm_2m_sq(f: &Field3, p: &NormParams) -> Result<f64> {
    check_norm_stencil(f.grid(), p)?;
    let mut total = 0.0;
    for (ax, ay) in p.multi_indices() {
        total += mixed_derivative(f, ax, ay)?.norm_sq();
    }
    Ok(total)
}

/// `Σ_{|α|≤m} ‖∂^α ∇f‖²` with `∇ = (∂x, ∂y, ∂z)`.
pub fn field_grad_norm_sq(f: &Field3, p: &NormParams) -> Result<f64> {
    check_norm_stencil(f.grid(), p)?;
    let mut total = 0.0;
    for (ax, ay) in p.multi_indices() {
        let d = mixed_derivative(f, ax, ay)?;
        total += ddh(&d, Axis::X).norm_sq();
        total += ddh(&d, Axis::Y).norm_sq();
        total += vertical_derivative(&d).norm_sq();
    }
    Ok(total)
}

/// `‖X‖²_{2,m}` with the temperature terms weighted by `K`.
pub fn norm_2m_sq(x: &StateField, p: &NormParams) -> Result<f64> {
    Ok(field_norm_2m_sq(&x.u, p)? + field_norm_2m_sq(&x.v, p)? + p.k * field_norm_2m_sq(&x.theta, p)?)
}

/// `‖∇X‖²_{2,m}`, temperature terms weighted by `K`.
pub fn grad_norm_sq(x: &StateField, p: &NormParams) -> Result<f64> {
    Ok(field_grad_norm_sq(&x.u, p)? + field_grad_norm_sq(&x.v, p)? + p.k * field_grad_norm_sq(&x.theta, p)?)
}

pub fn norm_2m(x: &StateField, p: &NormParams) -> Result<f64> {
    Ok(norm_2m_sq(x, p)?.sqrt())
}

/// Discrete `‖X‖_{U^{m+1}}`.
pub fn norm_u(x: &StateField, p: &NormParams) -> Result<f64> {
    Ok((norm_2m_sq(x, p)? + grad_norm_sq(x, p)?).sqrt())
}

/// Applies the Gram operator of the `U^{m+1}` inner product to one field:
/// returns `G f` such that `⟨G f, g⟩ = (f, g)_{2,m} + (∇f, ∇g)_{2,m}` (weighted inner product).
pub fn sobolev_gram(f: &Field3, p: &NormParams) -> Result<Field3> {
    check_norm_stencil(f.grid(), p)?;
    let mut out = Field3::zeros(*f.grid());
    for (ax, ay) in p.multi_indices() {
        let d = mixed_derivative(f, ax, ay)?;
        let mut acc = d.clone();
        let dx = ddh(&d, Axis::X);
        acc.axpy(-1.0, &ddh(&dx, Axis::X));
        let dy = ddh(&d, Axis::Y);
        acc.axpy(-1.0, &ddh(&dy, Axis::Y));
        acc.axpy(1.0, &vertical_derivative_adjoint(&vertical_derivative(&d)));
        let back = horizontal_derivative_adjoint(&acc, Axis::Y, ay)?;
        out.axpy(1.0, &horizontal_derivative_adjoint(&back, Axis::X, ax)?);
    }
    Ok(out)
}
