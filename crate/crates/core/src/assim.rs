//! Cost function, background norm and the incremental 4D-Var driver.
//!
//! `J(X0) = Jo + ω·Jb` with `Jo = ½ Σ |wrap(ξ_f(t) − d)|²` over all records and
//! `Jb = ½ ‖X0 − X_b‖²_B`. Each outer loop relinearizes the model about the
//! current iterate; the inner loop runs conjugate gradients on the
//! Gauss–Newton quadratic in the grid-quadrature inner product.

use std::io::Write;

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::floats::{FloatSet, ObsSet, Position};
use crate::grid::{sobolev_gram, Field3, Grid, NormParams, StateField};
use crate::tlm::{grad_from_checkpoints, residuals, sweep_back, tlm_step, Checkpoints, TangentState};

/// Background-error covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundCov {
    /// Diagonal, one variance per component and level.
    Diagonal { variances: [Vec<f64>; 3] },
    /// Per-component multiple of the `U^{m+1}` Gram operator.
    Sobolev { variances: [f64; 3], norm: NormParams },
}

impl BackgroundCov {
    pub fn uniform(grid: &Grid, variances: [f64; 3]) -> Result<Self> {
        Self::per_level(grid, variances.map(|s| vec![s; grid.nz]))
    }

    pub fn per_level(grid: &Grid, variances: [Vec<f64>; 3]) -> Result<Self> {
        let b = BackgroundCov::Diagonal { variances };
        b.validate(grid)?;
        Ok(b)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let positive = |s: f64| s.is_finite() && s > 0.0;
        match self {
            BackgroundCov::Diagonal { variances } => {
                for v in variances {
                    if v.len() != grid.nz {
                        return Err(Error::param("background_variance", format!("expected {} levels, got {}", grid.nz, v.len())));
                    }
                    if !v.iter().all(|&s| positive(s)) {
                        return Err(Error::param("background_variance", "variances must be positive"));
                    }
                }
            }
            BackgroundCov::Sobolev { variances, .. } => {
                if !variances.iter().all(|&s| positive(s)) {
                    return Err(Error::param("background_variance", "variances must be positive"));
                }
            }
        }
        Ok(())
    }

    /// `B⁻¹ d` as a gradient in the grid-quadrature product.
    pub fn apply_inverse(&self, d: &StateField) -> Result<StateField> {
        let mut out = d.clone();
        match self {
            BackgroundCov::Diagonal { variances } => {
                for (f, var) in out.components_mut().into_iter().zip(variances) {
                    for (k, s) in var.iter().enumerate() {
                        f.level_mut(k).iter_mut().for_each(|v| *v /= s);
                    }
                }
            }
            BackgroundCov::Sobolev { variances, norm } => {
                for (c, (f, s)) in out.components_mut().into_iter().zip(variances).enumerate() {
                    let src = d.components()[c];
                    *f = sobolev_gram(src, norm)?.scaled(1.0 / s);
                }
            }
        }
        Ok(out)
    }

    /// `½ ⟨d, B⁻¹ d⟩`.
    pub fn half_norm_sq(&self, d: &StateField) -> Result<f64> {
        Ok(0.5 * d.dot(&self.apply_inverse(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub jo: f64,
    pub jb: f64,
    pub j: f64,
    /// Norm of the gradient, when it was computed.
    pub gnorm: Option<f64>,
}

impl CostBreakdown {
    pub(crate) fn new(jo: f64, jb: f64, omega: f64, gnorm: f64) -> Self {
        CostBreakdown { jo, jb, j: jo + omega * jb, gnorm: Some(gnorm) }
    }
}

/// Everything needed to evaluate the cost over one window.
#[derive(Debug)]
pub struct AssimProblem {
    model: Model,
    pub nsteps: usize,
    pub background: StateField,
    pub cov: BackgroundCov,
    pub omega: f64,
    /// Initial float positions (known, not part of the control).
    pub floats: FloatSet,
    pub obs: ObsSet,
    /// Keep θ at its background value.
    pub freeze_theta: bool,
    obs_index: Vec<(usize, usize, Position)>,
}

impl AssimProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Model,
        nsteps: usize,
        background: StateField,
        cov: BackgroundCov,
        omega: f64,
        floats: FloatSet,
        obs: ObsSet,
        freeze_theta: bool,
    ) -> Result<Self> {
        model.check_state(&background)?;
        cov.validate(model.grid())?;
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(Error::param("omega", format!("must be >= 0, got {omega}")));
        }
        if !floats.is_empty() {
            floats.validate(model.grid())?;
        }
        let mut obs_index = Vec::with_capacity(obs.len());
        for r in &obs.records {
            if r.time_index > nsteps {
                return Err(Error::ObsTimeOutOfRange { index: r.time_index, len: nsteps + 1 });
            }
            let f = floats
                .ids
                .iter()
                .position(|&id| id == r.float_id)
                .ok_or_else(|| Error::param("obs", format!("observation of unknown float id {}", r.float_id)))?;
            obs_index.push((r.time_index, f, r.pos));
        }
        Ok(AssimProblem { model, nsteps, background, cov, omega, floats, obs, freeze_theta, obs_index })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// `(time index, float index, observed position)` per record.
    pub fn obs_index(&self) -> &[(usize, usize, Position)] {
        &self.obs_index
    }

    pub fn checkpoints(&self, x0: &StateField) -> Result<Checkpoints> {
        Checkpoints::record(&self.model, x0, &self.floats, self.nsteps)
    }

    /// `Jb` at `x0` and its gradient `B⁻¹(x0 − X_b)`.
    pub fn background_term(&self, x0: &StateField) -> Result<(f64, StateField)> {
        let mut d = x0.clone();
        d.axpy(-1.0, &self.background);
        let g = self.cov.apply_inverse(&d)?;
        Ok((0.5 * d.dot(&g), g))
    }

    /// Projection onto admissible increments: rigid-lid velocities, and θ fixed when frozen.
    pub fn control_projection(&self, d: &StateField) -> Result<StateField> {
        let mut out = self.model.project_state(d)?;
        if self.freeze_theta {
            out.theta = Field3::zeros(*d.grid());
        }
        Ok(out)
    }
}

pub fn cost(x0: &StateField, problem: &AssimProblem) -> Result<CostBreakdown> {
    let ck = problem.checkpoints(x0)?;
    cost_from_checkpoints(x0, problem, &ck)
}

fn cost_from_checkpoints(x0: &StateField, problem: &AssimProblem, ck: &Checkpoints) -> Result<CostBreakdown> {
    let jo = 0.5 * residuals(problem, ck).iter().map(|(_, _, r)| r[0] * r[0] + r[1] * r[1]).sum::<f64>();
    let (jb, _) = problem.background_term(x0)?;
    Ok(CostBreakdown { jo, jb, j: jo + problem.omega * jb, gnorm: None })
}

/// Gauss–Newton Hessian `W⁻¹MᵀOᵀOM + ω B⁻¹` applied to `d`.
pub fn hessian_vec(d: &StateField, ck: &Checkpoints, problem: &AssimProblem) -> Result<StateField> {
    let model = problem.model();
    let idx = problem.obs_index();
    let mut seeds: Vec<(usize, usize, Position)> = Vec::with_capacity(idx.len());
    if !idx.is_empty() {
        let last = idx.iter().map(|o| o.0).max().unwrap_or(0);
        let mut by_time: Vec<Vec<usize>> = vec![Vec::new(); last + 1];
        for (n, &(t, _, _)) in idx.iter().enumerate() {
            by_time[t].push(n);
        }
        let mut tl = TangentState { state: d.clone(), floats: vec![[0.0; 2]; ck.nfloats()] };
        for (t, at_t) in by_time.iter().enumerate() {
            if t > 0 {
                tl = tlm_step(model, ck, t - 1, &tl)?;
            }
            for &n in at_t {
                let f = idx[n].1;
                seeds.push((t, f, tl.floats[f]));
            }
        }
    }
    let mut out = sweep_back(model, ck, &seeds)?;
    out.div_weights();
    out.axpy(problem.omega, &problem.cov.apply_inverse(d)?);
    Ok(out)
}

/// One conjugate-gradient iterate of the inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerStep {
    pub iteration: usize,
    /// Quadratic model value `q(δ) = ⟨g,δ⟩ + ½⟨δ,Hδ⟩`.
    pub model_value: f64,
    pub residual_norm: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub increment: StateField,
    pub steps: Vec<InnerStep>,
    pub converged: bool,
}

/// Conjugate gradients on `C H C δ = −C g` in the grid-quadrature product,
/// where `C` is `project` (a self-adjoint projection).
pub fn inner_solve<H, P>(g: &StateField, hv: H, project: P, tol: f64, max_iter: usize) -> Result<InnerResult>
where
    H: FnMut(&StateField) -> Result<StateField>,
    P: Fn(&StateField) -> Result<StateField>,
{
    inner_solve_with(g, hv, project, tol, max_iter, |_, _| Ok(()))
}

/// [`inner_solve`] calling `on_iter` with every step and its iterate.
pub fn inner_solve_with<H, P, O>(
    g: &StateField,
    mut hv: H,
    project: P,
    tol: f64,
    max_iter: usize,
    mut on_iter: O,
) -> Result<InnerResult>
where
    H: FnMut(&StateField) -> Result<StateField>,
    P: Fn(&StateField) -> Result<StateField>,
    O: FnMut(&InnerStep, &StateField) -> Result<()>,
{
    let mut delta = StateField::zeros(*g.grid());
    let mut r = project(g)?.scaled(-1.0);
    let r0 = r.norm();
    let mut steps = Vec::new();
    if r0 == 0.0 {
        return Ok(InnerResult { increment: delta, steps, converged: true });
    }
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for it in 1..=max_iter {
        let hp = project(&hv(&p)?)?;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::NegativeCurvature { iteration: it, curvature });
        }
        let alpha = rr / curvature;
        delta.axpy(alpha, &p);
        r.axpy(-alpha, &hp);
        let rr_new = r.dot(&r);
        let model_value = 0.5 * g.dot(&delta) - 0.5 * delta.dot(&r);
        let residual_norm = rr_new.sqrt();
        let step = InnerStep { iteration: it, model_value, residual_norm, step_norm: delta.norm() };
        on_iter(&step, &delta)?;
        steps.push(step);
        if residual_norm <= tol * r0 {
            return Ok(InnerResult { increment: delta, steps, converged: true });
        }
        p.scale(rr_new / rr);
        p.axpy(1.0, &r);
        rr = rr_new;
    }
    Ok(InnerResult { increment: delta, steps, converged: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub outer: usize,
    pub inner: usize,
    pub j: f64,
    pub jo: f64,
    pub jb: f64,
    pub gnorm: f64,
    pub stepnorm: f64,
}

/// Per-iteration record of an assimilation.
///
/// Rows with `inner = 0` hold the nonlinear cost at the outer iterate; rows with
/// `inner > 0` hold the quadratic model of `J` along that outer loop's CG iterates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinimizerLog {
    pub records: Vec<LogRecord>,
}

impl MinimizerLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "outer,inner,J,Jo,Jb,gnorm,stepnorm")?;
        for r in &self.records {
            writeln!(w, "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", r.outer, r.inner, r.j, r.jo, r.jb, r.gnorm, r.stepnorm)?;
        }
        Ok(())
    }

    /// Whether the quadratic model is nonincreasing within every inner loop.
    pub fn inner_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].outer != w[0].outer || w[1].inner == 0 || w[1].j <= w[0].j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssimOptions {
    pub outer_loops: usize,
    pub inner_iters: usize,
    pub tol: f64,
}

impl Default for AssimOptions {
    fn default() -> Self {
        AssimOptions { outer_loops: 5, inner_iters: 10, tol: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct AssimResult {
    pub analysis: StateField,
    pub cost: CostBreakdown,
    pub initial_cost: CostBreakdown,
    pub log: MinimizerLog,
}

/// Incremental 4D-Var starting from the background.
pub fn assimilate(problem: &AssimProblem, opts: AssimOptions) -> Result<AssimResult> {
    let omega = problem.omega;
    let mut x = problem.background.clone();
    let mut log = MinimizerLog::default();
    let mut best: Option<(StateField, CostBreakdown)> = None;
    let mut initial = None;
    let mut prev_j = f64::INFINITY;
    let mut increases = 0;

    for outer in 0..=opts.outer_loops {
        let ck = problem.checkpoints(&x)?;
        let last = outer == opts.outer_loops;
        let (cb, g) = if last {
            let c = cost_from_checkpoints(&x, problem, &ck)?;
            (c, None)
        } else {
            let (c, g) = grad_from_checkpoints(&x, problem, &ck)?;
            (c, Some(g))
        };
        let gnorm = match &g {
            Some(g) => problem.control_projection(g)?.norm(),
            None => f64::NAN,
        };
        log.records.push(LogRecord { outer, inner: 0, j: cb.j, jo: cb.jo, jb: cb.jb, gnorm, stepnorm: 0.0 });
        initial.get_or_insert(cb);
        if best.as_ref().is_none_or(|(_, b)| cb.j < b.j) {
            best = Some((x.clone(), cb));
        }
        if cb.j > prev_j {
            increases += 1;
        } else {
            increases = 0;
        }
        prev_j = cb.j;
        if increases >= 2 {
            log::warn!("cost increased in two consecutive outer loops; returning best iterate");
            break;
        }
        let Some(g) = g else { break };
        if gnorm == 0.0 {
            break;
        }

        let inner = inner_solve_with(
            &g,
            |d| hessian_vec(d, &ck, problem),
            |d| problem.control_projection(d),
            opts.tol,
            opts.inner_iters,
            |step, delta| {
                // Jb is quadratic, so its model value is the exact Jb at x + δ.
                let mut xd = x.clone();
                xd.axpy(1.0, delta);
                let (jb, _) = problem.background_term(&xd)?;
                let j = cb.j + step.model_value;
                log.records.push(LogRecord {
                    outer,
                    inner: step.iteration,
                    j,
                    jo: j - omega * jb,
                    jb,
                    gnorm: step.residual_norm,
                    stepnorm: step.step_norm,
                });
                Ok(())
            },
        )?;
        x.axpy(1.0, &inner.increment);
    }

    let (analysis, cost) = best.expect("at least one outer evaluation");
    Ok(AssimResult { analysis, cost, initial_cost: initial.expect("initial cost"), log })
}

/// One directional-derivative comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckRow {
    pub analytic: f64,
    pub fd: f64,
    pub rel_error: f64,
}

/// Compares `⟨∇J, d⟩` with the central difference `(J(x+εd) − J(x−εd))/2ε`
/// along each direction, after projecting it onto admissible increments.
pub fn gradient_check(x0: &StateField, problem: &AssimProblem, directions: &[StateField], eps: f64) -> Result<Vec<GradCheckRow>> {
    let (_, g) = crate::tlm::grad_cost(x0, problem)?;
    directions
        .iter()
        .map(|d| {
            let d = problem.control_projection(d)?;
            let analytic = g.dot(&d);
            let jp = cost(&x0.plus(eps, &d), problem)?.j;
            let jm = cost(&x0.plus(-eps, &d), problem)?.j;
            let fd = (jp - jm) / (2.0 * eps);
            let scale = analytic.abs().max(fd.abs());
            let rel_error = if scale == 0.0 { 0.0 } else { (analytic - fd).abs() / scale };
            Ok(GradCheckRow { analytic, fd, rel_error })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Forcing, ModelConfig, PhysParams};
    use crate::floats::ObsRecord;
    use crate::sample::random_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(g: Grid) -> Model {
        let phys = PhysParams { alpha: 0.5, beta: 0.5, gamma: 0.5, nu: 0.05 };
        Model::new(g, ModelConfig { phys, dt: 0.02, linear: false, forcing: Forcing::none() }).unwrap()
    }

    #[test]
    fn single_mismatch_cost() {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let fs = FloatSet::new(vec![[1.0, 2.0]], 0.5);
        let obs = ObsSet { records: vec![ObsRecord { float_id: 0, time_index: 0, pos: [1.1, 2.0], noise_sd: 0.0 }] };
        let xb = StateField::zeros(g);
        let cov = BackgroundCov::uniform(&g, [1.0; 3]).unwrap();
        let p = AssimProblem::new(model(g), 3, xb.clone(), cov, 0.0, fs, obs, false).unwrap();
        let c = cost(&xb, &p).unwrap();
        assert!((c.jo - 0.005).abs() < 1e-15 && c.jb == 0.0 && c.j == c.jo);
    }

    #[test]
    fn one_cell_background_term() {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let var = vec![0.5, 0.5, 0.25, 0.5, 0.5];
        let cov = BackgroundCov::per_level(&g, [var.clone(), vec![1.0; 5], vec![1.0; 5]]).unwrap();
        let mut d = StateField::zeros(g);
        d.u[g.idx(3, 4, 2)] = 0.3;
        let jb = cov.half_norm_sq(&d).unwrap();
        assert!((jb - 0.5 * g.weight(2) * 0.09 / 0.25).abs() < 1e-15);
    }

    #[test]
    fn no_obs_hessian_and_identity_cg() {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xb = random_state(&g, &mut rng, 1.0);
        let cov = BackgroundCov::uniform(&g, [1.0; 3]).unwrap();
        let p = AssimProblem::new(model(g), 4, xb.clone(), cov, 1.0, FloatSet::new(vec![], 0.5), ObsSet::default(), false)
            .unwrap();
        let ck = p.checkpoints(&xb).unwrap();
        let d = random_state(&g, &mut rng, 1.0);
        let hd = hessian_vec(&d, &ck, &p).unwrap();
        assert_eq!(hd, d);

        let gvec = random_state(&g, &mut rng, 1.0);
        let res = inner_solve(&gvec, |v| Ok(v.clone()), |v| Ok(v.clone()), 1e-12, 10).unwrap();
        assert_eq!(res.steps.len(), 1);
        let mut e = res.increment.clone();
        e.axpy(1.0, &gvec);
        assert!(e.norm() < 1e-14 * gvec.norm());

        let zero = StateField::zeros(g);
        let res = inner_solve(&zero, |v| Ok(v.clone()), |v| Ok(v.clone()), 1e-3, 10).unwrap();
        assert!(res.steps.is_empty() && res.increment == zero);
    }

    #[test]
    fn cg_flags_negative_curvature() {
        let g = Grid::new(4, 4, 3, 1.0).unwrap();
        let mut gvec = StateField::zeros(g);
        gvec.u[g.idx(1, 1, 1)] = 1.0;
        let r = inner_solve(&gvec, |v| Ok(v.scaled(-1.0)), |v| Ok(v.clone()), 1e-6, 5);
        assert!(matches!(r, Err(Error::NegativeCurvature { .. })));
    }
}
