use peda::dynamics::{Forcing, Model, ModelConfig, PhysParams, Trajectory};
use peda::grid::{grad_norm_sq, norm_2m_sq, Grid, NormParams, StateField};
use peda::sample::{random_forcing, random_noise_state, random_state};
use peda::verify::{
    check_energy_inequality, check_nonlinear_bound, check_w_bound, picard_integrate, relative_l2_difference,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn w_bound_holds_for_random_states() {
    let g = Grid::new(32, 32, 17, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..100 {
        let x = if i % 2 == 0 { random_state(&g, &mut rng, 1.0) } else { random_noise_state(&g, &mut rng, 1.0) };
        let c = check_w_bound(&x);
        assert!(c.pass, "state {i}: {} > {}", c.lhs, c.rhs);
    }
}

fn linear_model(g: Grid, phys: PhysParams, dt: f64) -> Model {
    Model::new(g, ModelConfig { phys, dt, linear: true, forcing: Forcing::none() }).unwrap()
}

#[test]
fn energy_inequality_trivial_and_initial_cases() {
    let g = Grid::new(12, 12, 7, 1.0).unwrap();
    let phys = PhysParams { alpha: 0.2, beta: 0.1, gamma: 0.1, nu: 0.1 };
    let m = linear_model(g, phys, 0.01);
    let norm = NormParams::new(2, NormParams::energy_weight(1.0, 0.1, 0.1, 0.1)).unwrap();
    let z = StateField::zeros(g);
    let r = check_energy_inequality(&z, &z, &m, 10, &norm).unwrap();
    assert!(r.pass);
    assert!(r.rows.iter().all(|row| row.lhs == 0.0 && row.rhs == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x0 = random_state(&g, &mut rng, 1.0);
    let f = random_forcing(&g, &mut rng, 1.0);
    let r = check_energy_inequality(&x0, &f, &m, 20, &norm).unwrap();
    let first = r.rows[0];
    assert_eq!(first.step, 0);
    assert_eq!(first.lhs, norm_2m_sq(&x0, &norm).unwrap() + grad_norm_sq(&x0, &norm).unwrap());
    assert!(r.pass && r.min_margin() > 0.0);

    let low = NormParams::new(2, 1.0).unwrap();
    assert!(check_energy_inequality(&x0, &f, &m, 5, &low).is_err());
}

#[test]
fn advection_ratio_stays_bounded_under_refinement() {
    let norm = NormParams::new(2, 1.0).unwrap();
    // The same seed samples the same continuous pair at every resolution.
    let sizes = [16, 24, 32, 48];
    for nz in [9, 17] {
        let mut maxima = Vec::new();
        for n in sizes {
            let g = Grid::new(n, n, nz, 1.0).unwrap();
            let mut worst = 0.0f64;
            for seed in 0..8 {
                let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
                let x1 = random_state(&g, &mut rng, 1.0);
                let x2 = random_state(&g, &mut rng, 1.0);
                let r = check_nonlinear_bound(&x1, &x2, &norm).unwrap();
                assert!(!r.degenerate && r.max_ratio.is_finite() && r.max_ratio > 0.0);
                worst = worst.max(r.max_ratio);
            }
            maxima.push(worst);
        }
        // 16² under-resolves the products, so the ratio climbs towards its
        // continuum value: growth factors must shrink, and resolved grids agree.
        let growth: Vec<f64> = maxima.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(growth.windows(2).all(|w| w[1] < w[0]), "nz={nz}: {maxima:?}");
        let resolved = &maxima[1..];
        let lo = resolved.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = resolved.iter().copied().fold(0.0, f64::max);
        assert!(hi <= 1.5 * lo, "nz={nz}: {maxima:?}");
    }

    let g = Grid::new(16, 16, 9, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_state(&g, &mut rng, 1.0);
    assert!(check_nonlinear_bound(&StateField::zeros(g), &x, &norm).unwrap().degenerate);
}

fn picard_setup(amplitude: f64) -> (Model, StateField) {
    let g = Grid::new(8, 8, 5, 1.0).unwrap();
    let phys = PhysParams { alpha: 0.5, beta: 0.5, gamma: 0.5, nu: 0.1 };
    let m = Model::new(g, ModelConfig { phys, dt: 0.01, linear: false, forcing: Forcing::none() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    (m, random_state(&g, &mut rng, amplitude))
}

#[test]
fn picard_residuals_decrease_geometrically_towards_the_trajectory() {
    let (m, x0) = picard_setup(0.1);
    let norm = NormParams::new(2, 1.0).unwrap();
    let run = picard_integrate(&m, &x0, 20, 30, 1e-12, &norm).unwrap();
    assert!(run.converged && run.monotone);
    assert!(run.max_contraction() < 0.5, "{:?}", run.residuals);
    let mut traj = Trajectory::default();
    m.integrate(&x0, 20, &mut traj).unwrap();
    assert!(relative_l2_difference(run.limit(), &traj.states).unwrap() <= 1e-3);

    // At vanishing amplitude the model is effectively linear and both schemes agree.
    let (m, x0) = picard_setup(1e-6);
    let run = picard_integrate(&m, &x0, 20, 30, 1e-12, &norm).unwrap();
    let mut traj = Trajectory::default();
    m.integrate(&x0, 20, &mut traj).unwrap();
    assert!(relative_l2_difference(run.limit(), &traj.states).unwrap() <= 1e-9);
}

#[test]
fn picard_rejects_linear_models() {
    let g = Grid::new(8, 8, 5, 1.0).unwrap();
    let m = linear_model(g, PhysParams { alpha: 0.5, beta: 0.5, gamma: 0.5, nu: 0.1 }, 0.01);
    let norm = NormParams::new(2, 1.0).unwrap();
    assert!(picard_integrate(&m, &StateField::zeros(g), 5, 5, 1e-10, &norm).is_err());
}
