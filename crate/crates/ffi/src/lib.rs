//! C interface to `peda`.
//!
//! Models and states are opaque handles created by `peda_*_new` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PedaStatus`]; on failure the message is available from
//! [`peda_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as `PEDA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use peda::dynamics::{Forcing, Model, ModelConfig, PhysParams};
use peda::grid::{Grid, StateField};
use peda::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PedaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Cfl = 4,
    NonFinite = 5,
    Io = 6,
    Format = 7,
    Config = 8,
    Numerical = 9,
    Panic = 10,
}

impl From<&Error> for PedaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::GridTooSmall { .. } | Error::InvalidGrid(_) | Error::InvalidParameter { .. } => PedaStatus::InvalidArgument,
            Error::ShapeMismatch { .. } | Error::CheckpointMismatch(_) | Error::ObsTimeOutOfRange { .. } => {
                PedaStatus::ShapeMismatch
            }
            Error::Cfl { .. } => PedaStatus::Cfl,
            Error::NonFinite { .. } => PedaStatus::NonFinite,
            Error::Io { .. } => PedaStatus::Io,
            Error::Format { .. } => PedaStatus::Format,
            Error::Config { .. } => PedaStatus::Config,
            Error::PoissonNotConverged { .. } | Error::NegativeCurvature { .. } | Error::PicardDiverged { .. } => {
                PedaStatus::Numerical
            }
        }
    }
}

/// Opaque model handle.
pub struct PedaModel(Model);

/// Opaque state handle (`u`, `v`, `θ` on one grid).
pub struct PedaState(StateField);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: PedaStatus, msg: impl Into<String>) -> PedaStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PedaStatus>) -> PedaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PedaStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(PedaStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: peda::Result<T>) -> Result<T, PedaStatus> {
    r.map_err(|e| fail(PedaStatus::from(&e), format!("{}: {e}", e.kind())))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PedaStatus> {
    // SAFETY: the caller guarantees `p` is null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| fail(PedaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PedaStatus> {
    // SAFETY: as for `deref`, and the handle is not aliased during the call.
    unsafe { p.as_mut() }.ok_or_else(|| fail(PedaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, PedaStatus> {
    if p.is_null() {
        return Err(fail(PedaStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str().map(Path::new).map_err(|_| fail(PedaStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), PedaStatus> {
    if out.is_null() {
        return Err(fail(PedaStatus::NullPointer, "output pointer is null"));
    }
    // SAFETY: non-null, and the caller provides writable storage for one `T`.
    unsafe { out.write(value) };
    Ok(())
}

/// Model parameters passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PedaModelParams {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub depth: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub nu: f64,
    pub dt: f64,
    /// Wind-stress amplitude; 0 disables forcing.
    pub tau0: f64,
    /// Nonzero drops the advection terms.
    pub linear: i32,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn peda_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn peda_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds at least `len > n` bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Creates a model. On success `*out` owns a handle to release with [`peda_model_free`].
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn peda_model_new(params: PedaModelParams, out: *mut *mut PedaModel) -> PedaStatus {
    guard(|| {
        let grid = lift(Grid::new(params.nx, params.ny, params.nz, params.depth))?;
        let phys = PhysParams { alpha: params.alpha, beta: params.beta, gamma: params.gamma, nu: params.nu };
        let forcing = if params.tau0 == 0.0 { Forcing::none() } else { Forcing::wind(&grid, params.tau0) };
        let model = lift(Model::new(grid, ModelConfig { phys, dt: params.dt, linear: params.linear != 0, forcing }))?;
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, Box::into_raw(Box::new(PedaModel(model)))) }
    })
}

/// # Safety
/// `model` must be null or a handle from [`peda_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn peda_model_free(model: *mut PedaModel) {
    if !model.is_null() {
        // SAFETY: created by `Box::into_raw` in `peda_model_new`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of grid points per component, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn peda_model_grid_len(model: *const PedaModel) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.0.grid().len())
}

/// Allocates a state of zeros on the model grid.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn peda_state_new(model: *const PedaModel, out: *mut *mut PedaState) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let m = unsafe { deref(model, "model") }?;
        let s = PedaState(StateField::zeros(*m.0.grid()));
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, Box::into_raw(Box::new(s))) }
    })
}

/// Reads a state from snapshot files `<prefix>_{u,v,theta}.bin`.
///
/// # Safety
/// `prefix` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn peda_state_read(prefix: *const c_char, out: *mut *mut PedaState) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(prefix) }?;
        let s = lift(peda::snapshot::read_state(p))?;
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, Box::into_raw(Box::new(PedaState(s)))) }
    })
}

/// Writes a state as snapshot files `<prefix>_{u,v,theta}.bin`.
///
/// # Safety
/// `state` must be a live handle and `prefix` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn peda_state_write(state: *const PedaState, prefix: *const c_char) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (s, p) = unsafe { (deref(state, "state")?, path_arg(prefix)?) };
        lift(peda::snapshot::write_state(p, &s.0))
    })
}

/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn peda_state_free(state: *mut PedaState) {
    if !state.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(state) });
    }
}

fn component_mut(s: &mut StateField, component: u32) -> Result<&mut peda::grid::Field3, PedaStatus> {
    match component {
        0 => Ok(&mut s.u),
        1 => Ok(&mut s.v),
        2 => Ok(&mut s.theta),
        c => Err(fail(PedaStatus::InvalidArgument, format!("component {c} not in 0..=2 (u, v, theta)"))),
    }
}

/// Copies component `component` (0 = u, 1 = v, 2 = θ) into `buf`, x fastest then y then z.
///
/// # Safety
/// `state` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn peda_state_get(state: *const PedaState, component: u32, buf: *mut f64, len: usize) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let s = unsafe { deref(state, "state") }?;
        let mut copy = s.0.clone();
        let f = component_mut(&mut copy, component)?;
        if buf.is_null() {
            return Err(fail(PedaStatus::NullPointer, "buffer is null"));
        }
        if len != f.as_slice().len() {
            return Err(fail(PedaStatus::ShapeMismatch, format!("buffer holds {len} values, field has {}", f.as_slice().len())));
        }
        // SAFETY: `buf` holds `len` doubles.
        unsafe { std::slice::from_raw_parts_mut(buf, len) }.copy_from_slice(f.as_slice());
        Ok(())
    })
}

/// Overwrites one component from `buf`.
///
/// # Safety
/// `state` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn peda_state_set(state: *mut PedaState, component: u32, buf: *const f64, len: usize) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let s = unsafe { deref_mut(state, "state") }?;
        let f = component_mut(&mut s.0, component)?;
        if buf.is_null() {
            return Err(fail(PedaStatus::NullPointer, "buffer is null"));
        }
        if len != f.as_slice().len() {
            return Err(fail(PedaStatus::ShapeMismatch, format!("buffer holds {len} values, field has {}", f.as_slice().len())));
        }
        // SAFETY: `buf` holds `len` doubles.
        f.as_mut_slice().copy_from_slice(unsafe { std::slice::from_raw_parts(buf, len) });
        Ok(())
    })
}

/// Projects the state's velocity onto the rigid-lid subspace and zeroes boundary levels.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn peda_model_project(model: *const PedaModel, state: *mut PedaState) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (m, s) = unsafe { (deref(model, "model")?, deref_mut(state, "state")?) };
        s.0 = lift(m.0.project_state(&s.0))?;
        Ok(())
    })
}

/// Advances the state in place by `nsteps` time steps.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn peda_model_integrate(model: *const PedaModel, state: *mut PedaState, nsteps: usize) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (m, s) = unsafe { (deref(model, "model")?, deref_mut(state, "state")?) };
        let end = lift(m.0.integrate(&s.0, nsteps, &mut |_: usize, _: &StateField, _: Option<&_>| {}))?;
        s.0 = end;
        Ok(())
    })
}

/// Kinetic energy `½∫(u² + v²)`.
///
/// # Safety
/// `state` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn peda_state_kinetic_energy(state: *const PedaState, out: *mut f64) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let s = unsafe { deref(state, "state") }?;
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, s.0.kinetic_energy()) }
    })
}

/// Largest depth-integrated horizontal divergence.
///
/// # Safety
/// `state` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn peda_state_max_divergence(state: *const PedaState, out: *mut f64) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let s = unsafe { deref(state, "state") }?;
        let d = peda::grid::max_depth_integrated_divergence(&s.0.u, &s.0.v);
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, d) }
    })
}

/// Both sides of the vertical-velocity bound; `*pass` is 1 when it holds.
///
/// # Safety
/// `state` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn peda_check_w_bound(state: *const PedaState, lhs: *mut f64, rhs: *mut f64, pass: *mut i32) -> PedaStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let s = unsafe { deref(state, "state") }?;
        let r = peda::verify::check_w_bound(&s.0);
        // SAFETY: forwarded caller contract.
        unsafe {
            write_out(lhs, r.lhs)?;
            write_out(rhs, r.rhs)?;
            write_out(pass, i32::from(r.pass))
        }
    })
}
