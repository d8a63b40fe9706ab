//! Numerical checks of the analytical estimates: the `w` bound, the linear
//! energy inequality, the bounded ratio of the advection terms, and the
//! Picard construction as an independent integrator.

use crate::dynamics::{diagnose_w, Forcing, Model, ModelConfig, PhysParams};
use crate::error::{Error, Result};
use crate::grid::{
    ddh, field_norm_2m_sq, grad_norm_sq, norm_2m_sq, vertical_derivative, Axis, Field3, NormParams, StateField,
};

/// Relative slack allowed on the `w` bound for quadrature effects.
pub const W_BOUND_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `‖w‖² ≤ a²(‖∂x u‖² + ‖∂y v‖²)` with grid quadrature.
pub fn check_w_bound(x: &StateField) -> BoundCheck {
    let a = x.grid().a;
    let lhs = diagnose_w(&x.u, &x.v).norm_sq();
    let rhs = a * a * (ddh(&x.u, Axis::X).norm_sq() + ddh(&x.v, Axis::Y).norm_sq());
    BoundCheck { lhs, rhs, pass: lhs <= rhs * (1.0 + W_BOUND_SLACK) }
}

/// Constants of the linear energy estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl EnergyConstants {
    pub fn new(a: f64, phys: &PhysParams, k: f64) -> Self {
        let PhysParams { alpha, beta, gamma, nu } = *phys;
        let rot = 1.0 + 2.0 * alpha * alpha / nu;
        let c1 = 2.0
            * rot
                .max((1.0 + (gamma - beta / k).abs()) / rot)
                .max(1f64.max(a * a * (k * gamma - beta).abs()) + 2.0 * gamma * a * a / nu * (k * gamma + beta));
        EnergyConstants { c1, c2: 2.0 + 4.0 / (k * nu), c3: 4.0 + 4.0 * a * a / nu, c4: 2.0 + 8.0 / nu }
    }

    /// The initial-data part of the bound, `C2‖X0‖² + C3‖∇X0‖²`, together with
    /// `C5 = 2‖U0‖² + (2K + 4/ν)‖θ0‖² + (4 + 4a²/ν)‖∇U0‖² + 4K‖∇θ0‖² + C4∫‖F‖²`.
    pub fn c5(a: f64, nu: f64, p: &NormParams, x0: &StateField, forcing_integral: f64) -> Result<f64> {
        let u_sq = field_norm_2m_sq(&x0.u, p)? + field_norm_2m_sq(&x0.v, p)?;
        let t_sq = field_norm_2m_sq(&x0.theta, p)?;
        let gu = crate::grid::field_grad_norm_sq(&x0.u, p)? + crate::grid::field_grad_norm_sq(&x0.v, p)?;
        let gt = crate::grid::field_grad_norm_sq(&x0.theta, p)?;
        Ok(2.0 * u_sq
            + (2.0 * p.k + 4.0 / nu) * t_sq
            + (4.0 + 4.0 * a * a / nu) * gu
            + 4.0 * p.k * gt
            + (2.0 + 8.0 / nu) * forcing_integral)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub step: usize,
    pub time: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub constants: EnergyConstants,
    pub k: f64,
    pub rows: Vec<EnergyRow>,
    pub pass: bool,
}

impl EnergyReport {
    pub fn min_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Integrates the linear model from `x0` under constant forcing `f` for `nsteps`
/// and compares both sides of the energy estimate at every step.
pub fn check_energy_inequality(
    x0: &StateField,
    f: &StateField,
    model: &Model,
    nsteps: usize,
    norm: &NormParams,
) -> Result<EnergyReport> {
    let cfg = model.config();
    if !cfg.linear {
        return Err(Error::param("linear", "the energy estimate applies to the linear model"));
    }
    let phys = cfg.phys;
    let a = model.grid().a;
    let k_min = NormParams::energy_weight(a, phys.nu, phys.gamma, phys.beta);
    if norm.k < k_min {
        return Err(Error::param("K", format!("{} is below the required {k_min}", norm.k)));
    }
    let forced = model.with_forcing(Forcing::linear_rhs(f.clone()))?;
    let dt = model.dt();
    let horizon = nsteps as f64 * dt;
    let consts = EnergyConstants::new(a, &phys, norm.k);
    let f_int = horizon * norm_2m_sq(f, norm)?;
    let base = consts.c2 * norm_2m_sq(x0, norm)? + consts.c3 * grad_norm_sq(x0, norm)? + consts.c4 * f_int;

    let mut rows = Vec::with_capacity(nsteps + 1);
    let mut dissipated = 0.0;
    let mut failure = None;
    forced.integrate(x0, nsteps, &mut |n: usize, x: &StateField, st: Option<&crate::dynamics::StepStages>| {
        if failure.is_some() {
            return;
        }
        let r = (|| -> Result<EnergyRow> {
            if let Some(st) = st {
                dissipated += dt * norm_2m_sq(&st.mean_tendency(), norm)?;
            }
            let t = n as f64 * dt;
            let lhs = norm_2m_sq(x, norm)? + grad_norm_sq(x, norm)? + dissipated / phys.nu;
            // A zero base makes the bound 0 for every t; avoid 0·∞.
            let rhs = if base == 0.0 { 0.0 } else { (consts.c1 * t).exp() * base };
            Ok(EnergyRow { step: n, time: t, lhs, rhs, margin: rhs - lhs })
        })();
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let pass = rows.iter().all(|r| r.lhs <= r.rhs);
    Ok(EnergyReport { constants: consts, k: norm.k, rows, pass })
}

/// Advection of `x2` by `x1`: `(U1·∇₂)φ2 + w1 ∂zφ2` for each component.
pub fn advection_terms(x1: &StateField, x2: &StateField) -> [Field3; 3] {
    let w1 = diagnose_w(&x1.u, &x1.v);
    [&x2.u, &x2.v, &x2.theta].map(|phi| {
        let mut f = Field3::zeros(*phi.grid());
        f.add_product(1.0, &x1.u, &ddh(phi, Axis::X));
        f.add_product(1.0, &x1.v, &ddh(phi, Axis::Y));
        f.add_product(1.0, &w1, &vertical_derivative(phi));
        f
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearReport {
    /// `‖F_i‖² / ((‖X1‖ + a²‖∇X1‖)‖∇X1‖‖∇X2‖²)` per component.
    pub ratios: [f64; 3],
    pub max_ratio: f64,
    /// The denominator vanished; ratios are reported as 0.
    pub degenerate: bool,
}

pub fn check_nonlinear_bound(x1: &StateField, x2: &StateField, norm: &NormParams) -> Result<NonlinearReport> {
    x1.grid().ensure_same(x2.grid())?;
    let a = x1.grid().a;
    let n1 = norm_2m_sq(x1, norm)?.sqrt();
    let g1 = grad_norm_sq(x1, norm)?.sqrt();
    let g2 = grad_norm_sq(x2, norm)?;
    let den = (n1 + a * a * g1) * g1 * g2;
    if den == 0.0 {
        return Ok(NonlinearReport { ratios: [0.0; 3], max_ratio: 0.0, degenerate: true });
    }
    let terms = advection_terms(x1, x2);
    let mut ratios = [0.0; 3];
    for (r, f) in ratios.iter_mut().zip(&terms) {
        *r = field_norm_2m_sq(f, norm)? / den;
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(NonlinearReport { ratios, max_ratio, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardRun {
    /// Trajectories of the iterates `X^1, X^2, …` (the constant `X^0` is omitted).
    pub iterates: Vec<Vec<StateField>>,
    /// `N(X^{n+1} − X^n)` for `n = 0, 1, …`.
    pub residuals: Vec<f64>,
    pub horizon: f64,
    pub converged: bool,
    pub monotone: bool,
}

impl PicardRun {
    pub fn limit(&self) -> &[StateField] {
        self.iterates.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest ratio of consecutive residuals.
    pub fn max_contraction(&self) -> f64 {
        self.residuals.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).fold(0.0, f64::max)
    }
}

/// `N(X) = sup_t (‖X(t)‖²_U + ∫₀ᵗ ‖∂t X‖²_{2,m})` over a discrete trajectory with
/// per-step time derivatives.
fn n_norm(traj: &[StateField], rates: &[StateField], dt: f64, norm: &NormParams) -> Result<f64> {
    let mut acc = 0.0;
    let mut best = norm_2m_sq(&traj[0], norm)? + grad_norm_sq(&traj[0], norm)?;
    for (n, x) in traj.iter().enumerate().skip(1) {
        acc += dt * norm_2m_sq(&rates[n - 1], norm)?;
        best = best.max(norm_2m_sq(x, norm)? + grad_norm_sq(x, norm)? + acc);
    }
    Ok(best)
}

/// `(Σ_t ‖a(t) − b(t)‖² / Σ_t ‖b(t)‖²)^½` over two trajectories of equal length.
pub fn relative_l2_difference(a: &[StateField], b: &[StateField]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} states", b.len()), found: format!("{} states", a.len()) });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for d in difference(a, b).iter() {
        num += d.dot(d);
    }
    for x in b {
        den += x.dot(x);
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

fn difference(a: &[StateField], b: &[StateField]) -> Vec<StateField> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut d = x.clone();
            d.axpy(-1.0, y);
            d
        })
        .collect()
}

/// Picard sequence for the nonlinear model: each iterate solves the linear
/// system from `x0` forced by the advection of the previous iterate.
///
/// `tol` applies to `N(X^{n+1} − X^n) / N(X^{n+1})`.
pub fn picard_integrate(
    model: &Model,
    x0: &StateField,
    nsteps: usize,
    max_n: usize,
    tol: f64,
    norm: &NormParams,
) -> Result<PicardRun> {
    let cfg = model.config();
    if cfg.linear {
        return Err(Error::param("linear", "Picard iteration targets the nonlinear model"));
    }
    model.check_state(x0)?;
    let lin = Model::new(*model.grid(), ModelConfig { linear: true, ..cfg.clone() })?;
    let dt = model.dt();

    let mut prev: Vec<StateField> = vec![x0.clone(); nsteps + 1];
    let mut prev_rates: Vec<StateField> = vec![StateField::zeros(*x0.grid()); nsteps];
    let mut run = PicardRun {
        iterates: Vec::new(),
        residuals: Vec::new(),
        horizon: nsteps as f64 * dt,
        converged: false,
        monotone: true,
    };
    let mut increases = 0;
    for n in 0..max_n {
        let forcing: Vec<StateField> = prev
            .iter()
            .map(|x| {
                let [fu, fv, ft] = advection_terms(x, x);
                lin.project_state(&StateField { u: fu.scaled(-1.0), v: fv.scaled(-1.0), theta: ft.scaled(-1.0) })
            })
            .collect::<Result<_>>()?;
        let mut traj = Vec::with_capacity(nsteps + 1);
        let mut rates = Vec::with_capacity(nsteps);
        traj.push(x0.clone());
        for k in 0..nsteps {
            let x = &traj[k];
            let mut k1 = lin.tendency(x)?;
            k1.axpy(1.0, &forcing[k]);
            let stage = x.plus(dt, &k1);
            let mut k2 = lin.tendency(&stage)?;
            k2.axpy(1.0, &forcing[k + 1]);
            let mut rate = k1;
            rate.axpy(1.0, &k2);
            rate.scale(0.5);
            let next = x.plus(dt, &rate);
            if !next.is_finite() {
                return Err(Error::NonFinite { what: "Picard iterate", step: k + 1 });
            }
            traj.push(next);
            rates.push(rate);
        }
        let res = n_norm(&difference(&traj, &prev), &difference(&rates, &prev_rates), dt, norm)?;
        let size = n_norm(&traj, &rates, dt, norm)?;
        if let Some(&last) = run.residuals.last() {
            if res >= last {
                run.monotone = false;
                increases += 1;
            } else {
                increases = 0;
            }
        }
        run.residuals.push(res);
        run.iterates.push(traj.clone());
        if increases >= 3 {
            return Err(Error::PicardDiverged { iteration: n + 1, residuals: run.residuals });
        }
        if res <= tol * size {
            run.converged = true;
            break;
        }
        prev = traj;
        prev_rates = rates;
    }
    Ok(run)
}
