//! Lagrangian floats drifting on a fixed depth plane, and the position observations they yield.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field3, Grid, StateField};

pub type Position = [f64; 2];

/// Wraps a coordinate into `[0, 2π)`.
pub fn wrap_coord(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid rounds tiny negatives up to exactly 2π.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn wrap_position(p: Position) -> Position {
    [wrap_coord(p[0]), wrap_coord(p[1])]
}

/// Shortest periodic displacement `a − b` per component, in `(−π, π]`.
pub fn wrapped_difference(a: Position, b: Position) -> Position {
    let f = |d: f64| {
        let t = (d + PI).rem_euclid(TAU) - PI;
        if t <= -PI {
            t + TAU
        } else {
            t
        }
    };
    [f(a[0] - b[0]), f(a[1] - b[1])]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatSet {
    pub positions: Vec<Position>,
    pub z0: f64,
    pub ids: Vec<u64>,
}

impl FloatSet {
    /// Floats labeled `0..n`, positions wrapped.
    pub fn new(positions: Vec<Position>, z0: f64) -> Self {
        let ids = (0..positions.len() as u64).collect();
        FloatSet { positions: positions.into_iter().map(wrap_position).collect(), z0, ids }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.z0 > 0.0 && self.z0 < grid.a) {
            return Err(Error::param("z0", format!("drift depth must lie strictly inside (0, {}), got {}", grid.a, self.z0)));
        }
        if self.ids.len() != self.positions.len() {
            return Err(Error::param("floats", "ids and positions differ in length"));
        }
        Ok(())
    }
}

/// Interpolation weights of one point: 8 corners, with the x/y derivatives of the weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub wx: [f64; 8],
    pub wy: [f64; 8],
}

impl Stencil {
    pub fn new(grid: &Grid, pos: Position, z0: f64) -> Self {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        let (dx, dy) = (grid.dx(), grid.dy());
        let gx = pos[0] / dx;
        let gy = pos[1] / dy;
        let (fx0, fy0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - fx0, gy - fy0);
        let i0 = (fx0 as i64).rem_euclid(nx as i64) as usize;
        let j0 = (fy0 as i64).rem_euclid(ny as i64) as usize;
        let i1 = (i0 + 1) % nx;
        let j1 = (j0 + 1) % ny;
        let gz = (z0 / grid.dz()).clamp(0.0, (nz - 1) as f64);
        let k0 = (gz.floor() as usize).min(nz - 2);
        let fz = gz - k0 as f64;

        let mut st = Stencil { idx: [0; 8], w: [0.0; 8], wx: [0.0; 8], wy: [0.0; 8] };
        let mut n = 0;
        for (k, cz) in [(k0, 1.0 - fz), (k0 + 1, fz)] {
            for (j, cy, sy) in [(j0, 1.0 - fy, -1.0), (j1, fy, 1.0)] {
                for (i, cx, sx) in [(i0, 1.0 - fx, -1.0), (i1, fx, 1.0)] {
                    st.idx[n] = grid.idx(i, j, k);
                    st.w[n] = cx * cy * cz;
                    st.wx[n] = sx / dx * cy * cz;
                    st.wy[n] = cx * sy / dy * cz;
                    n += 1;
                }
            }
        }
        st
    }

    #[inline]
    pub fn eval(&self, f: &[f64]) -> f64 {
        (0..8).map(|n| self.w[n] * f[self.idx[n]]).sum()
    }

    #[inline]
    pub fn grad(&self, f: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for n in 0..8 {
            g[0] += self.wx[n] * f[self.idx[n]];
            g[1] += self.wy[n] * f[self.idx[n]];
        }
        g
    }

    /// `f += c · weights` (transpose of [`Stencil::eval`]).
    #[inline]
    pub fn scatter(&self, f: &mut [f64], c: f64) {
        for n in 0..8 {
            f[self.idx[n]] += c * self.w[n];
        }
    }
}

/// Horizontal velocity at `pos` on the plane `z = z0`.
pub fn interp_uv(u: &Field3, v: &Field3, pos: Position, z0: f64) -> (f64, f64) {
    let st = Stencil::new(u.grid(), pos, z0);
    (st.eval(u.as_slice()), st.eval(v.as_slice()))
}

/// Velocity and its Jacobian `∂(u,v)/∂(x,y)` at a point.
pub(crate) fn velocity_and_jacobian(x: &StateField, pos: Position, z0: f64) -> (Position, [[f64; 2]; 2], Stencil) {
    let st = Stencil::new(x.grid(), pos, z0);
    let (u, v) = (x.u.as_slice(), x.v.as_slice());
    ([st.eval(u), st.eval(v)], [st.grad(u), st.grad(v)], st)
}

/// Intermediate point of one float step, kept for linearization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FloatStage {
    pub mid: Position,
}

pub(crate) fn float_step(pos: Position, z0: f64, start: &StateField, end: &StateField, dt: f64) -> (Position, FloatStage) {
    let (k1u, k1v) = interp_uv(&start.u, &start.v, pos, z0);
    let mid = wrap_position([pos[0] + dt * k1u, pos[1] + dt * k1v]);
    let (k2u, k2v) = interp_uv(&end.u, &end.v, mid, z0);
    let next = wrap_position([pos[0] + 0.5 * dt * (k1u + k2u), pos[1] + 0.5 * dt * (k1v + k2v)]);
    (next, FloatStage { mid })
}

/// One Heun step of every float between two consecutive model states.
pub fn advect_floats(fs: &FloatSet, start: &StateField, end: &StateField, dt: f64) -> Result<FloatSet> {
    start.grid().ensure_same(end.grid())?;
    fs.validate(start.grid())?;
    let positions = fs.positions.iter().map(|&p| float_step(p, fs.z0, start, end, dt).0).collect();
    Ok(FloatSet { positions, z0: fs.z0, ids: fs.ids.clone() })
}

/// Positions of every float at every state of `trajectory` (index = time index).
pub fn float_tracks(trajectory: &[StateField], fs0: &FloatSet, dt: f64) -> Result<Vec<Vec<Position>>> {
    let mut tracks = Vec::with_capacity(trajectory.len());
    let mut fs = fs0.clone();
    if let Some(first) = trajectory.first() {
        fs.validate(first.grid())?;
    }
    tracks.push(fs.positions.clone());
    for pair in trajectory.windows(2) {
        fs = advect_floats(&fs, &pair[0], &pair[1], dt)?;
        tracks.push(fs.positions.clone());
    }
    Ok(tracks)
}

/// Predicted positions at the requested time indices.
pub fn observe(
    trajectory: &[StateField],
    fs0: &FloatSet,
    obs_times: &[usize],
    dt: f64,
) -> Result<Vec<(usize, Vec<Position>)>> {
    for &t in obs_times {
        if t >= trajectory.len().max(1) {
            return Err(Error::ObsTimeOutOfRange { index: t, len: trajectory.len() });
        }
    }
    let last = obs_times.iter().copied().max().unwrap_or(0);
    let tracks = float_tracks(&trajectory[..=last.min(trajectory.len().saturating_sub(1))], fs0, dt)?;
    Ok(obs_times.iter().map(|&t| (t, tracks[t].clone())).collect())
}

pub const FLOATS_HEADER: &str = "float_id,x,y,z0";

impl FloatSet {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{FLOATS_HEADER}")?;
        for (id, p) in self.ids.iter().zip(&self.positions) {
            writeln!(w, "{id},{:?},{:?},{:?}", p[0], p[1], self.z0)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Reads a float file; every row must share one drift depth.
    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_csv(path, FLOATS_HEADER, 4)?;
        let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut fs = FloatSet { positions: Vec::new(), z0: f64::NAN, ids: Vec::new() };
        for (line, cols) in rows {
            let num = |i: usize| parse_col::<f64>(path, line, &cols[i]);
            let z0 = num(3)?;
            if fs.ids.is_empty() {
                fs.z0 = z0;
            } else if z0 != fs.z0 {
                return Err(fmt(format!("line {line}: floats must share one drift depth")));
            }
            fs.ids.push(parse_col::<u64>(path, line, &cols[0])?);
            fs.positions.push(wrap_position([num(1)?, num(2)?]));
        }
        Ok(fs)
    }
}

/// Data rows of a CSV file with a fixed header, as `(line number, columns)`.
fn read_csv(path: &Path, header: &str, ncols: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut rows = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if n == 0 {
            if line != header {
                return Err(fmt(format!("expected header `{header}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if cols.len() != ncols {
            return Err(fmt(format!("line {}: expected {ncols} columns", n + 1)));
        }
        rows.push((n + 1, cols));
    }
    Ok(rows)
}

fn parse_col<T: std::str::FromStr>(path: &Path, line: usize, col: &str) -> Result<T> {
    col.parse()
        .map_err(|_| Error::Format { path: path.to_path_buf(), reason: format!("line {line}: bad value `{col}`") })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRecord {
    pub float_id: u64,
    pub time_index: usize,
    pub pos: Position,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObsSet {
    pub records: Vec<ObsRecord>,
}

pub const OBS_HEADER: &str = "float_id,time_index,x,y,noise_sd";

impl ObsSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct observation times, ascending.
    pub fn times(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.records.iter().map(|r| r.time_index).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub fn max_time(&self) -> Option<usize> {
        self.records.iter().map(|r| r.time_index).max()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{OBS_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{},{},{:?},{:?},{:?}", r.float_id, r.time_index, r.pos[0], r.pos[1], r.noise_sd)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (line, cols) in read_csv(path, OBS_HEADER, 5)? {
            let num = |i: usize| parse_col::<f64>(path, line, &cols[i]);
            records.push(ObsRecord {
                float_id: parse_col(path, line, &cols[0])?,
                time_index: parse_col(path, line, &cols[1])?,
                pos: wrap_position([num(2)?, num(3)?]),
                noise_sd: num(4)?,
            });
        }
        Ok(ObsSet { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn grid() -> Grid {
        Grid::new(16, 12, 5, 1.0).unwrap()
    }

    #[test]
    fn wrap_and_difference() {
        assert_eq!(wrap_coord(-1e-18), 0.0);
        assert!((wrap_coord(TAU + 0.5) - 0.5).abs() < 1e-15);
        let d = wrapped_difference([0.1, 6.2], [6.2, 0.1]);
        assert!((d[0] - (0.1 - 6.2 + TAU)).abs() < 1e-14);
        assert!((d[1] - (6.2 - 0.1 - TAU)).abs() < 1e-14);
        assert_eq!(wrapped_difference([PI, 0.0], [0.0, PI])[0], PI);
        assert_eq!(wrapped_difference([PI, 0.0], [0.0, PI])[1], PI);
    }

    #[test]
    fn constant_and_bilinear_fields() {
        let g = grid();
        let u = Field3::constant(g, 0.7);
        let v = Field3::zeros(g);
        let (a, b) = interp_uv(&u, &v, [5.1, 2.3], 0.4);
        assert!((a - 0.7).abs() < 1e-15 && b == 0.0);

        // Bilinear within the cell [dx,2dx]×[dy,2dy].
        let f = |x: f64, y: f64, z: f64| 1.0 + 2.0 * x - 0.5 * y + 0.3 * x * y + z;
        let u = Field3::from_fn(g, f);
        let p = [1.4 * g.dx(), 1.75 * g.dy()];
        let (a, _) = interp_uv(&u, &v, p, 0.3);
        assert!((a - f(p[0], p[1], 0.3)).abs() < 1e-13);
    }

    #[test]
    fn seam_matches_rolled_grid() {
        let g = grid();
        let u = Field3::from_fn(g, |x, y, z| (x + 0.3).sin() * y.cos() + z);
        let v = Field3::from_fn(g, |x, y, _| (2.0 * x).cos() + y.sin());
        let shift = (g.nx / 2) as isize;
        let (ur, vr) = (u.roll(Axis::X, shift), v.roll(Axis::X, shift));
        let p = [TAU - g.dx() / 2.0, 1.1];
        let pr = [wrap_coord(p[0] + shift as f64 * g.dx()), p[1]];
        let (a, b) = interp_uv(&u, &v, p, 0.6);
        let (ar, br) = interp_uv(&ur, &vr, pr, 0.6);
        assert!((a - ar).abs() < 1e-12 && (b - br).abs() < 1e-12);
    }

    #[test]
    fn uniform_drift_and_wrap() {
        let g = grid();
        let mut x = StateField::zeros(g);
        x.u = Field3::constant(g, 0.1);
        let fs = FloatSet::new(vec![[1.0, 1.0], [TAU - 0.05, 0.0]], 0.5);
        let out = advect_floats(&fs, &x, &x, 1.0).unwrap();
        assert!((out.positions[0][0] - 1.1).abs() < 1e-14 && out.positions[0][1] == 1.0);
        assert!((out.positions[1][0] - 0.05).abs() < 1e-14);
    }

    #[test]
    fn observe_rejects_late_time_and_returns_initial() {
        let g = grid();
        let traj = vec![StateField::zeros(g); 3];
        let fs = FloatSet::new(vec![[0.3, 0.4]], 0.5);
        assert!(matches!(observe(&traj, &fs, &[3], 0.1), Err(Error::ObsTimeOutOfRange { .. })));
        let out = observe(&traj, &fs, &[0, 2], 0.1).unwrap();
        assert_eq!(out[0].1, fs.positions);
        assert_eq!(out[1].1, fs.positions);
    }

    #[test]
    fn csv_round_trip() {
        let set = ObsSet {
            records: vec![
                ObsRecord { float_id: 3, time_index: 20, pos: [0.1234567890123, 6.0], noise_sd: 1e-3 },
                ObsRecord { float_id: 4, time_index: 40, pos: [1.0 / 3.0, 2.5], noise_sd: 0.0 },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        set.save(&path).unwrap();
        assert_eq!(ObsSet::load(&path).unwrap(), set);
        std::fs::write(&path, "bad,header\n").unwrap();
        assert!(matches!(ObsSet::load(&path), Err(Error::Format { .. })));

        let fs = FloatSet::new(vec![[0.5, 1.0 / 7.0], [6.0, 3.0]], 0.75);
        let fpath = dir.path().join("floats.csv");
        fs.save(&fpath).unwrap();
        assert_eq!(FloatSet::load(&fpath).unwrap(), fs);
        std::fs::write(&fpath, "float_id,x,y,z0\n0,1,1,0.5\n1,2,2,0.6\n").unwrap();
        assert!(matches!(FloatSet::load(&fpath), Err(Error::Format { .. })));
    }
}
