//! Tangent-linear and adjoint models of the coupled map
//! `X0 ↦ (X_1..X_N, ξ_1..ξ_N)` along a checkpointed trajectory.
//!
//! The sweeps are the discrete derivative of the forward code and its exact
//! transpose. Internally the transpose is taken in the plain Euclidean product
//! of node values; the public [`adj_step`] converts to the grid-quadrature
//! product (`λ_W = W⁻¹ λ_E`), so gradients returned here are gradients with
//! respect to the same weighted norm that defines the background term.
//! Float positions use the Euclidean product throughout.

use crate::assim::{AssimProblem, CostBreakdown};
use crate::dynamics::{Derivs, Model, PhysParams};
use crate::error::{Error, Result};
use crate::floats::{float_step, velocity_and_jacobian, wrapped_difference, FloatSet, Position};
use crate::grid::{
    add_ddh, cumulative_vertical_integral, cumulative_vertical_integral_transpose, ddh, laplacian,
    laplacian_transpose, vertical_derivative_transpose, Axis, Field3, StateField,
};

/// Full nonlinear trajectory with the data needed to linearize every step.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    /// `X_0..X_N`
    pub states: Vec<StateField>,
    /// Predictor states `X*_n`, one per step.
    pub stages: Vec<StateField>,
    /// Float positions at every time index.
    pub floats: Vec<Vec<Position>>,
    /// Float predictor positions, one set per step.
    pub float_mids: Vec<Vec<Position>>,
    pub z0: f64,
    /// Float indices sorted by id; fixes the adjoint scatter order.
    pub(crate) scatter_order: Vec<usize>,
}

impl Checkpoints {
    pub fn record(model: &Model, x0: &StateField, fs: &FloatSet, nsteps: usize) -> Result<Checkpoints> {
        model.check_state(x0)?;
        if !fs.is_empty() {
            fs.validate(model.grid())?;
        }
        let dt = model.dt();
        let mut states = Vec::with_capacity(nsteps + 1);
        let mut stages = Vec::with_capacity(nsteps);
        model.integrate(x0, nsteps, &mut |_: usize, s: &StateField, st: Option<&crate::dynamics::StepStages>| {
            states.push(s.clone());
            if let Some(st) = st {
                stages.push(st.stage.clone());
            }
        })?;
        let mut floats = Vec::with_capacity(nsteps + 1);
        let mut float_mids = Vec::with_capacity(nsteps);
        floats.push(fs.positions.clone());
        for n in 0..nsteps {
            let (next, mids): (Vec<_>, Vec<_>) = floats[n]
                .iter()
                .map(|&p| {
                    let (q, st) = float_step(p, fs.z0, &states[n], &states[n + 1], dt);
                    (q, st.mid)
                })
                .unzip();
            floats.push(next);
            float_mids.push(mids);
        }
        let mut scatter_order: Vec<usize> = (0..fs.len()).collect();
        scatter_order.sort_by_key(|&i| fs.ids[i]);
        Ok(Checkpoints { states, stages, floats, float_mids, z0: fs.z0, scatter_order })
    }

    pub fn nsteps(&self) -> usize {
        self.stages.len()
    }

    pub fn nfloats(&self) -> usize {
        self.floats.first().map_or(0, Vec::len)
    }

    pub(crate) fn check(&self, model: &Model, n: usize) -> Result<()> {
        if self.states.len() != self.stages.len() + 1 || self.floats.len() != self.states.len() {
            return Err(Error::CheckpointMismatch("inconsistent checkpoint lengths".into()));
        }
        if n >= self.nsteps() {
            return Err(Error::CheckpointMismatch(format!("step {n} beyond {} stored steps", self.nsteps())));
        }
        model
            .grid()
            .ensure_same(self.states[0].grid())
            .map_err(|e| Error::CheckpointMismatch(e.to_string()))
    }
}

/// Perturbation of the coupled state.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    pub state: StateField,
    pub floats: Vec<Position>,
}

/// Dual of the coupled state: field duals in the grid-quadrature product, float duals Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub state: StateField,
    pub floats: Vec<Position>,
}

impl TangentState {
    pub fn zeros(x: &StateField, nfloats: usize) -> Self {
        TangentState { state: StateField::zeros(*x.grid()), floats: vec![[0.0; 2]; nfloats] }
    }

    /// Grid-quadrature product on fields plus Euclidean product on floats.
    pub fn dot(&self, other: &AdjointState) -> f64 {
        self.state.dot(&other.state)
            + self.floats.iter().zip(&other.floats).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum::<f64>()
    }
}

impl AdjointState {
    pub fn zeros(x: &StateField, nfloats: usize) -> Self {
        AdjointState { state: StateField::zeros(*x.grid()), floats: vec![[0.0; 2]; nfloats] }
    }
}

/// Derivative of the tendency at `x` applied to `dx`.
pub(crate) fn tangent_tendency(model: &Model, x: &StateField, d: &Derivs, dx: &StateField) -> Result<StateField> {
    let PhysParams { alpha, beta, gamma, nu } = model.config().phys;
    let mut p = dx.clone();
    p.zero_boundaries();
    let dd = Derivs::of(&p);

    let mut gu = laplacian(&p.u).scaled(nu);
    let mut gv = laplacian(&p.v).scaled(nu);
    let mut gt = laplacian(&p.theta).scaled(nu);
    gu.axpy(alpha, &p.v);
    gv.axpy(-alpha, &p.u);
    let ph = cumulative_vertical_integral(&p.theta);
    add_ddh(&mut gu, -beta, &ph, Axis::X);
    add_ddh(&mut gv, -beta, &ph, Axis::Y);
    gt.axpy(-gamma, &dd.w);

    if !model.config().linear {
        for (g, dfx, dfy, dfz, pdx, pdy, pdz) in [
            (&mut gu, &d.dxu, &d.dyu, &d.dzu, &dd.dxu, &dd.dyu, &dd.dzu),
            (&mut gv, &d.dxv, &d.dyv, &d.dzv, &dd.dxv, &dd.dyv, &dd.dzv),
            (&mut gt, &d.dxt, &d.dyt, &d.dzt, &dd.dxt, &dd.dyt, &dd.dzt),
        ] {
            g.add_product(-1.0, &p.u, dfx);
            g.add_product(-1.0, &x.u, pdx);
            g.add_product(-1.0, &p.v, dfy);
            g.add_product(-1.0, &x.v, pdy);
            g.add_product(-1.0, &dd.w, dfz);
            g.add_product(-1.0, &d.w, pdz);
        }
    }

    model.project_in_place(&mut gu, &mut gv)?;
    gt.zero_boundaries();
    Ok(StateField { u: gu, v: gv, theta: gt })
}

/// Euclidean transpose of [`tangent_tendency`].
pub(crate) fn adjoint_tendency(model: &Model, x: &StateField, d: &Derivs, lam: &StateField) -> Result<StateField> {
    let PhysParams { alpha, beta, gamma, nu } = model.config().phys;
    let g = *x.grid();
    let mut lu = lam.u.clone();
    let mut lv = lam.v.clone();
    model.project_in_place(&mut lu, &mut lv)?;
    let mut lt = lam.theta.clone();
    lt.zero_boundaries();

    let mut au = laplacian_transpose(&lu).scaled(nu);
    let mut av = laplacian_transpose(&lv).scaled(nu);
    let mut at = laplacian_transpose(&lt).scaled(nu);
    av.axpy(alpha, &lu);
    au.axpy(-alpha, &lv);

    let mut q = ddh(&lu, Axis::X);
    add_ddh(&mut q, 1.0, &lv, Axis::Y);
    at.axpy(beta, &cumulative_vertical_integral_transpose(&q));

    let mut aw = lt.scaled(-gamma);
    // Duals of the derivative fields of the perturbation.
    let mut axu = Field3::zeros(g);
    let mut ayv = Field3::zeros(g);

    if !model.config().linear {
        let mut ayu = Field3::zeros(g);
        let mut azu = Field3::zeros(g);
        let mut axv = Field3::zeros(g);
        let mut azv = Field3::zeros(g);
        let mut axt = Field3::zeros(g);
        let mut ayt = Field3::zeros(g);
        let mut azt = Field3::zeros(g);

        au.add_product(-1.0, &d.dxu, &lu);
        axu.add_product(-1.0, &x.u, &lu);
        av.add_product(-1.0, &d.dyu, &lu);
        ayu.add_product(-1.0, &x.v, &lu);
        aw.add_product(-1.0, &d.dzu, &lu);
        azu.add_product(-1.0, &d.w, &lu);

        au.add_product(-1.0, &d.dxv, &lv);
        axv.add_product(-1.0, &x.u, &lv);
        av.add_product(-1.0, &d.dyv, &lv);
        ayv.add_product(-1.0, &x.v, &lv);
        aw.add_product(-1.0, &d.dzv, &lv);
        azv.add_product(-1.0, &d.w, &lv);

        au.add_product(-1.0, &d.dxt, &lt);
        axt.add_product(-1.0, &x.u, &lt);
        av.add_product(-1.0, &d.dyt, &lt);
        ayt.add_product(-1.0, &x.v, &lt);
        aw.add_product(-1.0, &d.dzt, &lt);
        azt.add_product(-1.0, &d.w, &lt);

        add_ddh(&mut au, -1.0, &ayu, Axis::Y);
        au.axpy(1.0, &vertical_derivative_transpose(&azu));
        add_ddh(&mut av, -1.0, &axv, Axis::X);
        av.axpy(1.0, &vertical_derivative_transpose(&azv));
        add_ddh(&mut at, -1.0, &axt, Axis::X);
        add_ddh(&mut at, -1.0, &ayt, Axis::Y);
        at.axpy(1.0, &vertical_derivative_transpose(&azt));
    }

    // w = −I(Dx u + Dy v)
    let adiv = cumulative_vertical_integral_transpose(&aw).scaled(-1.0);
    axu.axpy(1.0, &adiv);
    ayv.axpy(1.0, &adiv);
    add_ddh(&mut au, -1.0, &axu, Axis::X);
    add_ddh(&mut av, -1.0, &ayv, Axis::Y);

    let mut out = StateField { u: au, v: av, theta: at };
    out.zero_boundaries();
    Ok(out)
}

/// Tangent of one Heun step about `x` with predictor `stage`.
pub(crate) fn heun_tangent(model: &Model, x: &StateField, stage: &StateField, dx: &StateField) -> Result<StateField> {
    let dt = model.dt();
    let k1 = tangent_tendency(model, x, &Derivs::of(x), dx)?;
    let dstage = dx.plus(dt, &k1);
    let k2 = tangent_tendency(model, stage, &Derivs::of(stage), &dstage)?;
    let mut out = dx.clone();
    out.axpy(0.5 * dt, &k1);
    out.axpy(0.5 * dt, &k2);
    Ok(out)
}

/// Euclidean transpose of [`heun_tangent`].
pub(crate) fn heun_adjoint(model: &Model, x: &StateField, stage: &StateField, lam: &StateField) -> Result<StateField> {
    let dt = model.dt();
    let lk = lam.scaled(0.5 * dt);
    let lstage = adjoint_tendency(model, stage, &Derivs::of(stage), &lk)?;
    let mut out = lam.clone();
    out.axpy(1.0, &lstage);
    let lk1 = lk.plus(dt, &lstage);
    out.axpy(1.0, &adjoint_tendency(model, x, &Derivs::of(x), &lk1)?);
    Ok(out)
}

fn mat_vec(j: &[[f64; 2]; 2], v: Position) -> Position {
    [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]]
}

fn mat_t_vec(j: &[[f64; 2]; 2], v: Position) -> Position {
    [j[0][0] * v[0] + j[1][0] * v[1], j[0][1] * v[0] + j[1][1] * v[1]]
}

/// Tangent of the coupled step `n`.
pub fn tlm_step(model: &Model, ck: &Checkpoints, n: usize, dx: &TangentState) -> Result<TangentState> {
    ck.check(model, n)?;
    if dx.floats.len() != ck.nfloats() {
        return Err(Error::CheckpointMismatch(format!("{} float tangents for {} floats", dx.floats.len(), ck.nfloats())));
    }
    model.check_state(&dx.state)?;
    let (xn, xn1) = (&ck.states[n], &ck.states[n + 1]);
    let state = heun_tangent(model, xn, &ck.stages[n], &dx.state)?;
    let dt = model.dt();
    let floats = (0..ck.nfloats())
        .map(|f| {
            let dxi = dx.floats[f];
            let (_, j1, st1) = velocity_and_jacobian(xn, ck.floats[n][f], ck.z0);
            let jd = mat_vec(&j1, dxi);
            let dk1 = [jd[0] + st1.eval(dx.state.u.as_slice()), jd[1] + st1.eval(dx.state.v.as_slice())];
            let dmid = [dxi[0] + dt * dk1[0], dxi[1] + dt * dk1[1]];
            let (_, j2, st2) = velocity_and_jacobian(xn1, ck.float_mids[n][f], ck.z0);
            let jd = mat_vec(&j2, dmid);
            let dk2 = [jd[0] + st2.eval(state.u.as_slice()), jd[1] + st2.eval(state.v.as_slice())];
            [dxi[0] + 0.5 * dt * (dk1[0] + dk2[0]), dxi[1] + 0.5 * dt * (dk1[1] + dk2[1])]
        })
        .collect();
    Ok(TangentState { state, floats })
}

/// Euclidean adjoint of step `n`; `lam_x` is the Euclidean dual of `X_{n+1}`.
pub(crate) fn adj_step_euclid(
    model: &Model,
    ck: &Checkpoints,
    n: usize,
    mut lam_x: StateField,
    lam_xi: &[Position],
) -> Result<(StateField, Vec<Position>)> {
    ck.check(model, n)?;
    if lam_xi.len() != ck.nfloats() {
        return Err(Error::CheckpointMismatch(format!("{} float duals for {} floats", lam_xi.len(), ck.nfloats())));
    }
    model.check_state(&lam_x)?;
    let (xn, xn1) = (&ck.states[n], &ck.states[n + 1]);
    let dt = model.dt();
    let mut lam_n = StateField::zeros(*xn.grid());
    let mut out_xi = vec![[0.0; 2]; lam_xi.len()];
    for &f in &ck.scatter_order {
        let l = lam_xi[f];
        let mut lxi = l;
        let lk2 = [0.5 * dt * l[0], 0.5 * dt * l[1]];
        let mut lk1 = lk2;
        let (_, j2, st2) = velocity_and_jacobian(xn1, ck.float_mids[n][f], ck.z0);
        let lmid = mat_t_vec(&j2, lk2);
        st2.scatter(lam_x.u.as_mut_slice(), lk2[0]);
        st2.scatter(lam_x.v.as_mut_slice(), lk2[1]);
        lxi[0] += lmid[0];
        lxi[1] += lmid[1];
        lk1[0] += dt * lmid[0];
        lk1[1] += dt * lmid[1];
        let (_, j1, st1) = velocity_and_jacobian(xn, ck.floats[n][f], ck.z0);
        let lj = mat_t_vec(&j1, lk1);
        lxi[0] += lj[0];
        lxi[1] += lj[1];
        st1.scatter(lam_n.u.as_mut_slice(), lk1[0]);
        st1.scatter(lam_n.v.as_mut_slice(), lk1[1]);
        out_xi[f] = lxi;
    }
    lam_n.axpy(1.0, &heun_adjoint(model, xn, &ck.stages[n], &lam_x)?);
    Ok((lam_n, out_xi))
}

/// Adjoint of [`tlm_step`] in the grid-quadrature product.
pub fn adj_step(model: &Model, ck: &Checkpoints, n: usize, lam: &AdjointState) -> Result<AdjointState> {
    let mut lx = lam.state.clone();
    lx.mul_weights();
    let (mut state, floats) = adj_step_euclid(model, ck, n, lx, &lam.floats)?;
    state.div_weights();
    Ok(AdjointState { state, floats })
}

/// Tangent of the whole window; returns the tangent at every time index.
pub fn tlm_window(model: &Model, ck: &Checkpoints, dx0: &TangentState) -> Result<Vec<TangentState>> {
    let mut out = Vec::with_capacity(ck.nsteps() + 1);
    out.push(dx0.clone());
    for n in 0..ck.nsteps() {
        let next = tlm_step(model, ck, n, &out[n])?;
        out.push(next);
    }
    Ok(out)
}

/// Adjoint of the map `δ0 ↦ δ_N` over the whole window.
pub fn adj_window(model: &Model, ck: &Checkpoints, lam_n: &AdjointState) -> Result<AdjointState> {
    let mut lam = lam_n.clone();
    for n in (0..ck.nsteps()).rev() {
        lam = adj_step(model, ck, n, &lam)?;
    }
    Ok(lam)
}

/// Observation residuals `wrap(ξ_f(t) − d)` grouped by time index.
pub(crate) fn residuals(problem: &AssimProblem, ck: &Checkpoints) -> Vec<(usize, usize, Position)> {
    problem
        .obs_index()
        .iter()
        .map(|&(t, f, d)| (t, f, wrapped_difference(ck.floats[t][f], d)))
        .collect()
}

/// Sweeps Euclidean float duals `seeds[(t, f)]` back to a Euclidean dual of `X0`.
pub(crate) fn sweep_back(
    model: &Model,
    ck: &Checkpoints,
    seeds: &[(usize, usize, Position)],
) -> Result<StateField> {
    let nf = ck.nfloats();
    let mut lam_x = StateField::zeros(*ck.states[0].grid());
    let mut lam_xi = vec![[0.0; 2]; nf];
    let mut by_time: Vec<Vec<(usize, Position)>> = vec![Vec::new(); ck.nsteps() + 1];
    for &(t, f, r) in seeds {
        by_time[t].push((f, r));
    }
    for n in (0..ck.nsteps()).rev() {
        for &(f, r) in &by_time[n + 1] {
            lam_xi[f][0] += r[0];
            lam_xi[f][1] += r[1];
        }
        let (lx, lxi) = adj_step_euclid(model, ck, n, lam_x, &lam_xi)?;
        lam_x = lx;
        lam_xi = lxi;
    }
    Ok(lam_x)
}

/// Cost and its gradient (grid-quadrature product) at `x0`.
pub fn grad_cost(x0: &StateField, problem: &AssimProblem) -> Result<(CostBreakdown, StateField)> {
    let ck = problem.checkpoints(x0)?;
    grad_from_checkpoints(x0, problem, &ck)
}

pub(crate) fn grad_from_checkpoints(
    x0: &StateField,
    problem: &AssimProblem,
    ck: &Checkpoints,
) -> Result<(CostBreakdown, StateField)> {
    let res = residuals(problem, ck);
    let jo = 0.5 * res.iter().map(|(_, _, r)| r[0] * r[0] + r[1] * r[1]).sum::<f64>();
    let mut grad = sweep_back(problem.model(), ck, &res)?;
    grad.div_weights();
    if !grad.is_finite() {
        return Err(Error::NonFinite { what: "gradient", step: 0 });
    }
    let (jb, gb) = problem.background_term(x0)?;
    grad.axpy(problem.omega, &gb);
    let gnorm = grad.norm();
    Ok((CostBreakdown::new(jo, jb, problem.omega, gnorm), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Forcing, ModelConfig};
    use crate::grid::Grid;
    use crate::sample::{random_noise_state, random_state};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(linear: bool) -> Model {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let phys = PhysParams { alpha: 0.7, beta: 0.8, gamma: 0.6, nu: 0.05 };
        Model::new(g, ModelConfig { phys, dt: 0.02, linear, forcing: Forcing::wind(&g, 0.3) }).unwrap()
    }

    fn random_floats(rng: &mut ChaCha8Rng, n: usize) -> FloatSet {
        FloatSet::new((0..n).map(|_| [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)]).collect(), 0.55)
    }

    fn random_tangent(rng: &mut ChaCha8Rng, model: &Model, nf: usize) -> TangentState {
        TangentState {
            state: random_noise_state(model.grid(), rng, 1.0),
            floats: (0..nf).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        }
    }

    #[test]
    fn tendency_dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for linear in [true, false] {
            let m = model(linear);
            let x = random_state(m.grid(), &mut rng, 1.0);
            let d = Derivs::of(&x);
            let a = random_noise_state(m.grid(), &mut rng, 1.0);
            let b = random_noise_state(m.grid(), &mut rng, 1.0);
            let lhs = tangent_tendency(&m, &x, &d, &a).unwrap();
            let rhs = adjoint_tendency(&m, &x, &d, &b).unwrap();
            let l: f64 = lhs.u.dot_euclid(&b.u) + lhs.v.dot_euclid(&b.v) + lhs.theta.dot_euclid(&b.theta);
            let r: f64 = a.u.dot_euclid(&rhs.u) + a.v.dot_euclid(&rhs.v) + a.theta.dot_euclid(&rhs.theta);
            assert!((l - r).abs() <= 1e-12 * l.abs().max(r.abs()).max(1.0), "{l} {r}");
        }
    }

    #[test]
    fn single_step_dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = model(false);
        let x0 = random_state(m.grid(), &mut rng, 0.5);
        let fs = random_floats(&mut rng, 4);
        let ck = Checkpoints::record(&m, &x0, &fs, 1).unwrap();
        let dx = random_tangent(&mut rng, &m, 4);
        let lt = random_tangent(&mut rng, &m, 4);
        let lam = AdjointState { state: lt.state, floats: lt.floats };
        let t = tlm_step(&m, &ck, 0, &dx).unwrap();
        let a = adj_step(&m, &ck, 0, &lam).unwrap();
        let l = t.dot(&lam);
        let r = dx.dot(&a);
        let scale = (dx.dot(&AdjointState { state: dx.state.clone(), floats: dx.floats.clone() })
            * lam.state.dot(&lam.state).max(1e-300))
            .sqrt();
        assert!((l - r).abs() / scale <= 1e-12, "{}", (l - r).abs() / scale);
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(false);
        let x0 = random_state(m.grid(), &mut rng, 0.5);
        let fs = random_floats(&mut rng, 3);
        let ck = Checkpoints::record(&m, &x0, &fs, 5).unwrap();
        let dx = random_tangent(&mut rng, &m, 3);
        let dx = TangentState { state: m.project_state(&dx.state).unwrap(), floats: dx.floats };
        let tl = tlm_window(&m, &ck, &dx).unwrap();
        let last = &tl[5];
        let mut prev: Option<f64> = None;
        let mut orders = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
            let fs_e = FloatSet {
                positions: fs.positions.iter().zip(&dx.floats).map(|(p, d)| [p[0] + eps * d[0], p[1] + eps * d[1]]).collect(),
                ..fs.clone()
            };
            let ck_e = Checkpoints::record(&m, &x0.plus(eps, &dx.state), &fs_e, 5).unwrap();
            let mut diff = ck_e.states[5].clone();
            diff.axpy(-1.0, &ck.states[5]);
            diff.axpy(-eps, &last.state);
            let mut e2 = diff.norm().powi(2);
            for f in 0..3 {
                let w = wrapped_difference(ck_e.floats[5][f], ck.floats[5][f]);
                e2 += (w[0] - eps * last.floats[f][0]).powi(2) + (w[1] - eps * last.floats[f][1]).powi(2);
            }
            let e = e2.sqrt();
            if let Some(p) = prev {
                orders.push((p / e).log10());
            }
            prev = Some(e);
        }
        // Past 1e-4 the remainder approaches rounding; judge the well-resolved pairs.
        assert!(orders[0] >= 1.9 && orders[1] >= 1.9, "{orders:?}");
    }
}
