//! Binary field snapshots.
//!
//! Layout (little endian): magic `PEDA`, `u32` version, `u32` nx, ny, nz,
//! `f64` depth, then `nx·ny·nz` `f64` values with x varying fastest, then y, then z.
//! A state is stored as three files `<prefix>_u.bin`, `<prefix>_v.bin`, `<prefix>_theta.bin`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Field3, Grid, StateField, COMPONENTS};

pub const MAGIC: &[u8; 4] = b"PEDA";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 8;

pub fn encode_field(f: &Field3) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [g.nx, g.ny, g.nz] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&g.a.to_le_bytes());
    for v in f.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<Field3> {
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing PEDA header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    if u32_at(4) != VERSION {
        return Err(bad("unsupported snapshot version"));
    }
    let (nx, ny, nz) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let a = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let grid = Grid::new(nx, ny, nz, a).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        return Err(bad(&format!("expected {} values for {grid}, found {} bytes", grid.len(), body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Field3::from_vec(grid, data)
}

pub fn write_field(path: &Path, f: &Field3) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_field(f)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<Field3> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, path)
}

/// Path of one component file for a snapshot prefix.
pub fn component_path(prefix: &Path, component: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!("_{component}.bin"));
    prefix.with_file_name(name)
}

pub fn write_state(prefix: &Path, x: &StateField) -> Result<()> {
    for (name, f) in COMPONENTS.iter().zip(x.components()) {
        write_field(&component_path(prefix, name), f)?;
    }
    Ok(())
}

pub fn read_state(prefix: &Path) -> Result<StateField> {
    let u = read_field(&component_path(prefix, "u"))?;
    let v = read_field(&component_path(prefix, "v"))?;
    let theta = read_field(&component_path(prefix, "theta"))?;
    StateField::new(u, v, theta)
}
