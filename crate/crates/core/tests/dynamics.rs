use peda::dynamics::{Forcing, Model, ModelConfig, PhysParams, Trajectory};
use peda::grid::{ddh, max_depth_integrated_divergence, Axis, Field3, Grid, StateField};
use peda::sample::random_state;
use peda::verify::check_w_bound;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(grid: Grid, phys: PhysParams, dt: f64, linear: bool, tau0: f64) -> Model {
    let forcing = if tau0 == 0.0 { Forcing::none() } else { Forcing::wind(&grid, tau0) };
    Model::new(grid, ModelConfig { phys, dt, linear, forcing }).unwrap()
}

fn phys() -> PhysParams {
    PhysParams { alpha: 0.5, beta: 0.3, gamma: 0.3, nu: 0.05 }
}

fn run(m: &Model, x0: &StateField, n: usize) -> StateField {
    m.integrate(x0, n, &mut |_: usize, _: &StateField, _: Option<&_>| {}).unwrap()
}

#[test]
fn pure_diffusion_never_gains_energy() {
    let g = Grid::new(16, 16, 9, 1.0).unwrap();
    let p = PhysParams { alpha: 0.0, beta: 0.0, gamma: 0.0, nu: 0.05 };
    let m = model(g, p, 0.01, true, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = random_state(&g, &mut rng, 1.0);
    for _ in 0..100 {
        let next = m.step(&x).unwrap();
        assert!(next.dot(&next) <= x.dot(&x));
        x = next;
    }
}

#[test]
fn linear_rest_stays_at_rest_and_zero_steps_is_identity() {
    let g = Grid::new(8, 8, 5, 1.0).unwrap();
    let m = model(g, phys(), 0.02, true, 0.0);
    let z = StateField::zeros(g);
    assert_eq!(run(&m, &z, 30), z);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_state(&g, &mut rng, 1.0);
    assert_eq!(run(&m, &x, 0), x);
}

#[test]
fn composition_is_bit_exact() {
    let g = Grid::new(12, 10, 7, 1.0).unwrap();
    let m = model(g, phys(), 0.02, false, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_state(&g, &mut rng, 0.5);
    assert_eq!(run(&m, &x, 25), run(&m, &run(&m, &x, 10), 15));
}

#[test]
fn heun_self_convergence_is_second_order() {
    let g = Grid::new(16, 16, 9, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = random_state(&g, &mut rng, 0.5);
    let horizon = 0.4;
    let solve = |dt: f64| run(&model(g, phys(), dt, false, 0.2), &x0, (horizon / dt).round() as usize);
    let reference = solve(0.025 / 32.0);
    let err = |dt: f64| {
        let mut d = solve(dt);
        d.axpy(-1.0, &reference);
        d.norm()
    };
    let (e1, e2, e3) = (err(0.025), err(0.0125), err(0.00625));
    let (o1, o2) = ((e1 / e2).log2(), (e2 / e3).log2());
    assert!(o1 >= 1.8 && o2 >= 1.8, "observed orders {o1} {o2}");
}

#[test]
fn cfl_step_is_stable_for_100_steps() {
    let g = Grid::new(16, 16, 9, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = random_state(&g, &mut rng, 1.0);
    let probe = model(g, phys(), 1.0, false, 0.0);
    let dt = probe.cfl_check(&x0);
    let m = model(g, phys(), dt, false, 0.0);
    let end = run(&m, &x0, 100);
    assert!(end.norm() <= 10.0 * x0.norm());
}

#[test]
fn rigid_lid_dirichlet_and_w_bound_hold_along_a_forced_run() {
    let g = Grid::new(16, 16, 9, 1.0).unwrap();
    let m = model(g, phys(), 0.02, false, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random_state(&g, &mut rng, 0.5);
    let mut traj = Trajectory::default();
    m.integrate(&x0, 60, &mut traj).unwrap();
    for x in &traj.states {
        assert!(max_depth_integrated_divergence(&x.u, &x.v) <= 1e-9);
        assert!(x.components().iter().all(|f| f.has_zero_boundaries()));
        assert!(check_w_bound(x).pass);
    }
}

#[test]
fn nondivergent_tendencies_pass_projection_unchanged() {
    let g = Grid::new(16, 16, 7, 1.0).unwrap();
    let m = model(g, phys(), 0.02, false, 0.0);
    // Discrete streamfunction pair: centered differences commute, so div = 0 exactly.
    let psi = Field3::from_fn(g, |x, y, z| x.sin() * (2.0 * y).cos() * (1.0 + z));
    let mut u = ddh(&psi, Axis::Y).scaled(-1.0);
    let mut v = ddh(&psi, Axis::X);
    u.zero_boundaries();
    v.zero_boundaries();
    let (pu, pv, ps) = m.project_rigid_lid(&u, &v).unwrap();
    let mut du = pu.clone();
    du.axpy(-1.0, &u);
    let mut dv = pv.clone();
    dv.axpy(-1.0, &v);
    assert!(du.max_abs() <= 1e-10 && dv.max_abs() <= 1e-10);
    assert!(ps.max_abs() <= 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = peda::sample::random_noise_state(&g, &mut rng, 1.0);
    let (pu, pv, _) = m.project_rigid_lid(&r.u, &r.v).unwrap();
    assert!(max_depth_integrated_divergence(&pu, &pv) <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn x_shifts_commute_with_integration(k in 1isize..12, seed in 0u64..1000) {
        let g = Grid::new(12, 8, 5, 1.0).unwrap();
        let m = model(g, phys(), 0.02, false, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random_state(&g, &mut rng, 0.5);
        let a = run(&m, &x0.roll(Axis::X, k), 10);
        let b = run(&m, &x0, 10).roll(Axis::X, k);
        let mut d = a.clone();
        d.axpy(-1.0, &b);
        prop_assert!(d.norm() <= 1e-12 * b.norm().max(1.0));
    }

    #[test]
    fn tendency_is_homogeneous_in_linear_mode(c in -3.0f64..3.0, seed in 0u64..1000) {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let m = model(g, phys(), 0.02, true, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_state(&g, &mut rng, 1.0);
        let a = m.tendency(&x.scaled(c)).unwrap();
        let b = m.tendency(&x).unwrap().scaled(c);
        let mut d = a.clone();
        d.axpy(-1.0, &b);
        prop_assert!(d.norm() <= 1e-12 * b.norm().max(1e-300) + 1e-14);
    }
}
