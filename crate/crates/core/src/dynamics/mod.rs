//! Primitive-equations forward model on the periodic channel.
//!
//! Momentum and temperature tendencies follow the advective form
//!
//! ```text
//! ∂t u = νΔu − (U·∇₂)u − w ∂z u + α v − ∂x p
//! ∂t v = νΔv − (U·∇₂)v − w ∂z v − α u − ∂y p
//! ∂t θ = νΔθ − (U·∇₂)θ − w ∂z θ − γ w
//! ```
//!
//! with `w = −∫₀^z (∂x u + ∂y v)` and `p = p_s + β∫₀^z θ`. The surface pressure
//! `p_s` is not prognostic: it is the Lagrange multiplier that keeps the
//! depth-integrated divergence at zero, obtained by projecting the momentum
//! tendencies at every Runge–Kutta stage.

pub mod poisson;

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{
    add_ddh, cumulative_vertical_integral, ddh, laplacian, max_depth_integrated_divergence,
    vertical_derivative, Axis, Field2, Field3, Grid, StateField,
};
use poisson::PoissonSolver;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    /// Coriolis coefficient.
    pub alpha: f64,
    /// Buoyancy/pressure coupling in `∂z p = βθ`.
    pub beta: f64,
    /// Background stratification in the `γw` term.
    pub gamma: f64,
    /// Viscosity and diffusivity.
    pub nu: f64,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::param("nu", format!("must be positive, got {}", self.nu)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingMode {
    None,
    /// Prescribed right-hand side `(F1, F2, F3)` of the linear system.
    LinearRhs,
    /// Zonal wind stress stand-in `F_u = τ0 cos(y) g(z)`.
    Wind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub mode: ForcingMode,
    pub rhs: Option<StateField>,
    pub tau0: f64,
    /// Per-level weights `g(z)`, summing to one.
    pub depth_profile: Vec<f64>,
}

impl Forcing {
    pub fn none() -> Self {
        Forcing { mode: ForcingMode::None, rhs: None, tau0: 0.0, depth_profile: Vec::new() }
    }

    pub fn linear_rhs(mut f: StateField) -> Self {
        f.zero_boundaries();
        Forcing { mode: ForcingMode::LinearRhs, rhs: Some(f), tau0: 0.0, depth_profile: Vec::new() }
    }

    /// Wind stress confined to the two top interior levels (2/3 and 1/3 of the stress).
    pub fn wind(grid: &Grid, tau0: f64) -> Self {
        let nz = grid.nz;
        let mut g = vec![0.0; nz];
        if nz == 3 {
            g[1] = 1.0;
        } else {
            g[nz - 2] = 2.0 / 3.0;
            g[nz - 3] = 1.0 / 3.0;
        }
        Forcing { mode: ForcingMode::Wind, rhs: None, tau0, depth_profile: g }
    }

    /// The forcing as a state-shaped field, or `None` when it vanishes identically.
    pub fn materialize(&self, grid: &Grid) -> Result<Option<StateField>> {
        match self.mode {
            ForcingMode::None => Ok(None),
            ForcingMode::LinearRhs => {
                let f = self.rhs.as_ref().ok_or_else(|| Error::param("forcing", "linear_rhs without fields"))?;
                grid.ensure_same(f.grid())?;
                Ok(Some(f.clone()))
            }
            ForcingMode::Wind => {
                if self.depth_profile.len() != grid.nz {
                    return Err(Error::param("forcing", "wind depth profile length differs from nz"));
                }
                if self.depth_profile.iter().any(|&w| w < 0.0) {
                    return Err(Error::param("forcing", "wind depth weights must be nonnegative"));
                }
                if self.tau0 == 0.0 {
                    return Ok(None);
                }
                let mut out = StateField::zeros(*grid);
                let (tau0, prof) = (self.tau0, &self.depth_profile);
                out.u = Field3::from_fn(*grid, |_, y, _| y.cos());
                for (k, &p) in prof.iter().enumerate() {
                    let w = tau0 * p;
                    out.u.level_mut(k).iter_mut().for_each(|v| *v *= w);
                }
                out.zero_boundaries();
                Ok(Some(out))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub phys: PhysParams,
    pub dt: f64,
    /// Drop the advection terms (linear primitive equations).
    pub linear: bool,
    pub forcing: Forcing,
}

/// Vertical velocity `w = −∫₀^z (∂x u + ∂y v) dz'`.
pub fn diagnose_w(u: &Field3, v: &Field3) -> Field3 {
    let mut div = ddh(u, Axis::X);
    add_ddh(&mut div, 1.0, v, Axis::Y);
    let mut w = cumulative_vertical_integral(&div);
    w.scale(-1.0);
    w
}

/// Full pressure `p = p_s + β ∫₀^z θ`.
pub fn diagnose_pressure(theta: &Field3, p_s: &Field2, beta: f64) -> Result<Field3> {
    let g = *theta.grid();
    if p_s.nx != g.nx || p_s.ny != g.ny {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", g.nx, g.ny),
            found: format!("{}x{}", p_s.nx, p_s.ny),
        });
    }
    let mut p = cumulative_vertical_integral(theta);
    p.scale(beta);
    for k in 0..g.nz {
        for (v, s) in p.level_mut(k).iter_mut().zip(&p_s.data) {
            *v += s;
        }
    }
    Ok(p)
}

/// Spatial derivatives of a state needed by the tendency and its linearization.
#[derive(Debug, Clone)]
pub(crate) struct Derivs {
    pub dxu: Field3,
    pub dyu: Field3,
    pub dzu: Field3,
    pub dxv: Field3,
    pub dyv: Field3,
    pub dzv: Field3,
    pub dxt: Field3,
    pub dyt: Field3,
    pub dzt: Field3,
    pub w: Field3,
}

impl Derivs {
    pub fn of(x: &StateField) -> Self {
        let dxu = ddh(&x.u, Axis::X);
        let dyv = ddh(&x.v, Axis::Y);
        let mut div = dxu.clone();
        div.axpy(1.0, &dyv);
        let mut w = cumulative_vertical_integral(&div);
        w.scale(-1.0);
        Derivs {
            dyu: ddh(&x.u, Axis::Y),
            dzu: vertical_derivative(&x.u),
            dxv: ddh(&x.v, Axis::X),
            dzv: vertical_derivative(&x.v),
            dxt: ddh(&x.theta, Axis::X),
            dyt: ddh(&x.theta, Axis::Y),
            dzt: vertical_derivative(&x.theta),
            dxu,
            dyv,
            w,
        }
    }
}

/// Intermediate data of one Heun step `X → X⁺`.
#[derive(Debug, Clone)]
pub struct StepStages {
    /// Predictor state `X* = X + dt·k1`.
    pub stage: StateField,
    /// `tendency(X)`
    pub k1: StateField,
    /// `tendency(X*)`
    pub k2: StateField,
}

impl StepStages {
    /// Effective time derivative over the step, `(k1 + k2)/2`.
    pub fn mean_tendency(&self) -> StateField {
        let mut t = self.k1.clone();
        t.axpy(1.0, &self.k2);
        t.scale(0.5);
        t
    }
}

/// Receives every state of a trajectory; `stages` describes the step that produced it.
pub trait Recorder {
    fn record(&mut self, step: usize, state: &StateField, stages: Option<&StepStages>);
}

impl<F> Recorder for F
where
    F: FnMut(usize, &StateField, Option<&StepStages>),
{
    fn record(&mut self, step: usize, state: &StateField, stages: Option<&StepStages>) {
        self(step, state, stages)
    }
}

/// Keeps every state.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<StateField>,
}

impl Recorder for Trajectory {
    fn record(&mut self, _step: usize, state: &StateField, _stages: Option<&StepStages>) {
        self.states.push(state.clone());
    }
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub kinetic_energy: f64,
    pub theta_sq: f64,
    pub max_divergence: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DiagnosticsLog {
    pub dt: f64,
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsLog {
    pub fn new(dt: f64) -> Self {
        DiagnosticsLog { dt, rows: Vec::new() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,time,kinetic_energy,theta_sq,max_depth_integrated_divergence")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.10e},{:.17e},{:.17e},{:.6e}",
                r.step, r.time, r.kinetic_energy, r.theta_sq, r.max_divergence
            )?;
        }
        Ok(())
    }
}

impl Recorder for DiagnosticsLog {
    fn record(&mut self, step: usize, state: &StateField, _stages: Option<&StepStages>) {
        self.rows.push(DiagnosticsRow {
            step,
            time: step as f64 * self.dt,
            kinetic_energy: state.kinetic_energy(),
            theta_sq: state.theta.norm_sq(),
            max_divergence: max_depth_integrated_divergence(&state.u, &state.v),
        });
    }
}

/// Forward model bound to a grid and configuration.
#[derive(Debug)]
pub struct Model {
    grid: Grid,
    cfg: ModelConfig,
    poisson: PoissonSolver,
    forcing: Option<StateField>,
}

impl Model {
    pub fn new(grid: Grid, cfg: ModelConfig) -> Result<Self> {
        cfg.phys.validate()?;
        if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {}", cfg.dt)));
        }
        let forcing = cfg.forcing.materialize(&grid)?;
        let poisson = PoissonSolver::new(grid.nx, grid.ny, grid.dx(), grid.dy());
        Ok(Model { grid, cfg, poisson, forcing })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// Same model with a different forcing (used by the Picard construction).
    pub fn with_forcing(&self, forcing: Forcing) -> Result<Model> {
        let mut cfg = self.cfg.clone();
        cfg.forcing = forcing;
        Model::new(self.grid, cfg)
    }

    pub(crate) fn check_state(&self, x: &StateField) -> Result<()> {
        self.grid.ensure_same(x.grid())
    }

    /// Removes the depth-integrated divergence of momentum tendencies.
    ///
    /// Boundary levels of the inputs are ignored and zero in the outputs; the
    /// correction `∇₂p_s` is applied on interior levels, so the depth mean used
    /// for the right-hand side is taken over those same levels.
    pub fn project_rigid_lid(&self, gu: &Field3, gv: &Field3) -> Result<(Field3, Field3, Field2)> {
        let mut gu = gu.clone();
        let mut gv = gv.clone();
        let ps = self.project_in_place(&mut gu, &mut gv)?;
        Ok((gu, gv, ps))
    }

    pub(crate) fn project_in_place(&self, gu: &mut Field3, gv: &mut Field3) -> Result<Field2> {
        project_with(&self.poisson, gu, gv)
    }

    /// Projects the velocity of a state onto the rigid-lid subspace.
    pub fn project_state(&self, x: &StateField) -> Result<StateField> {
        let mut out = x.clone();
        self.project_in_place(&mut out.u, &mut out.v)?;
        out.theta.zero_boundaries();
        Ok(out)
    }

    /// Time derivative of the state.
    pub fn tendency(&self, x: &StateField) -> Result<StateField> {
        self.check_state(x)?;
        let d = Derivs::of(x);
        Ok(self.tendency_from(x, &d)?.0)
    }

    fn tendency_from(&self, x: &StateField, d: &Derivs) -> Result<(StateField, Field2)> {
        let PhysParams { alpha, beta, gamma, nu } = self.cfg.phys;
        let mut gu = laplacian(&x.u);
        gu.scale(nu);
        let mut gv = laplacian(&x.v);
        gv.scale(nu);
        let mut gt = laplacian(&x.theta);
        gt.scale(nu);

        gu.axpy(alpha, &x.v);
        gv.axpy(-alpha, &x.u);

        // Hydrostatic part of the pressure gradient: β ∫₀^z ∂θ.
        let ph = cumulative_vertical_integral(&x.theta);
        add_ddh(&mut gu, -beta, &ph, Axis::X);
        add_ddh(&mut gv, -beta, &ph, Axis::Y);

        gt.axpy(-gamma, &d.w);

        if !self.cfg.linear {
            gu.add_product(-1.0, &x.u, &d.dxu);
            gu.add_product(-1.0, &x.v, &d.dyu);
            gu.add_product(-1.0, &d.w, &d.dzu);
            gv.add_product(-1.0, &x.u, &d.dxv);
            gv.add_product(-1.0, &x.v, &d.dyv);
            gv.add_product(-1.0, &d.w, &d.dzv);
            gt.add_product(-1.0, &x.u, &d.dxt);
            gt.add_product(-1.0, &x.v, &d.dyt);
            gt.add_product(-1.0, &d.w, &d.dzt);
        }

        if let Some(f) = &self.forcing {
            gu.axpy(1.0, &f.u);
            gv.axpy(1.0, &f.v);
            gt.axpy(1.0, &f.theta);
        }

        let ps = self.project_in_place(&mut gu, &mut gv)?;
        gt.zero_boundaries();
        Ok((StateField { u: gu, v: gv, theta: gt }, ps))
    }

    /// Tendency together with the surface pressure that enforced the rigid lid.
    pub fn tendency_with_pressure(&self, x: &StateField) -> Result<(StateField, Field2)> {
        self.check_state(x)?;
        self.tendency_from(x, &Derivs::of(x))
    }

    /// Largest stable time step for `x`: diffusive limit `h²/(6ν)` and
    /// advective limits, with safety factor 0.5.
    pub fn cfl_check(&self, x: &StateField) -> f64 {
        let g = self.grid;
        let h = g.dx().min(g.dy()).min(g.dz());
        let mut limit = h * h / (6.0 * self.cfg.phys.nu);
        let w = diagnose_w(&x.u, &x.v);
        for (spacing, vmax) in [(g.dx(), x.u.max_abs()), (g.dy(), x.v.max_abs()), (g.dz(), w.max_abs())] {
            if vmax > 0.0 {
                limit = limit.min(spacing / vmax);
            }
        }
        0.5 * limit
    }

    /// Heun step, returning the stage data alongside the new state.
    pub fn step_with_stages(&self, x: &StateField) -> Result<(StateField, StepStages)> {
        self.check_state(x)?;
        let allowed = self.cfl_check(x);
        let dt = self.cfg.dt;
        if dt > allowed {
            return Err(Error::Cfl { dt, allowed });
        }
        Ok(self.heun(x))
    }

    /// Heun step without the stability check (callers that already checked).
    pub(crate) fn heun(&self, x: &StateField) -> (StateField, StepStages) {
        let dt = self.cfg.dt;
        // Projection failures cannot occur for finite input; NaNs are caught by `integrate`.
        let k1 = self.tendency_from(x, &Derivs::of(x)).map(|r| r.0).unwrap_or_else(|_| nan_state(x));
        let stage = x.plus(dt, &k1);
        let k2 = self.tendency_from(&stage, &Derivs::of(&stage)).map(|r| r.0).unwrap_or_else(|_| nan_state(x));
        let mut next = x.clone();
        next.axpy(0.5 * dt, &k1);
        next.axpy(0.5 * dt, &k2);
        (next, StepStages { stage, k1, k2 })
    }

    pub fn step(&self, x: &StateField) -> Result<StateField> {
        Ok(self.step_with_stages(x)?.0)
    }

    /// Applies `nsteps` steps; the recorder sees the initial state and every step.
    pub fn integrate<R: Recorder + ?Sized>(
        &self,
        x0: &StateField,
        nsteps: usize,
        recorder: &mut R,
    ) -> Result<StateField> {
        self.check_state(x0)?;
        recorder.record(0, x0, None);
        let mut x = x0.clone();
        for n in 1..=nsteps {
            let (next, stages) = self.step_with_stages(&x)?;
            if !next.is_finite() {
                return Err(Error::NonFinite { what: "state", step: n });
            }
            recorder.record(n, &next, Some(&stages));
            x = next;
        }
        Ok(x)
    }

    pub fn forcing_field(&self) -> Option<&StateField> {
        self.forcing.as_ref()
    }
}

/// Rigid-lid projection of a pair of momentum fields using a prepared solver.
pub(crate) fn project_with(solver: &PoissonSolver, gu: &mut Field3, gv: &mut Field3) -> Result<Field2> {
    let g = *gu.grid();
    gu.zero_boundaries();
    gv.zero_boundaries();
    let s = g.slab();
    let nint = (g.nz - 2) as f64;
    let mut mu = vec![0.0; s];
    let mut mv = vec![0.0; s];
    for k in 1..g.nz - 1 {
        for (m, v) in mu.iter_mut().zip(gu.level(k)) {
            *m += v;
        }
        for (m, v) in mv.iter_mut().zip(gv.level(k)) {
            *m += v;
        }
    }
    mu.iter_mut().chain(mv.iter_mut()).for_each(|m| *m /= nint);
    let ps = solver.solve_divergence(&mu, &mv)?;
    let px = solver.ddx(&ps);
    let py = solver.ddy(&ps);
    for k in 1..g.nz - 1 {
        for (v, c) in gu.level_mut(k).iter_mut().zip(&px) {
            *v -= c;
        }
        for (v, c) in gv.level_mut(k).iter_mut().zip(&py) {
            *v -= c;
        }
    }
    Ok(Field2 { nx: g.nx, ny: g.ny, data: ps })
}

/// Projects a velocity pair onto the rigid-lid subspace (boundary levels zeroed).
pub fn project_velocity(u: &mut Field3, v: &mut Field3) -> Result<()> {
    u.grid().ensure_same(v.grid())?;
    let g = *u.grid();
    project_with(&PoissonSolver::new(g.nx, g.ny, g.dx(), g.dy()), u, v).map(|_| ())
}

fn nan_state(x: &StateField) -> StateField {
    let mut s = x.clone();
    s.u.as_mut_slice().fill(f64::NAN);
    s
}
