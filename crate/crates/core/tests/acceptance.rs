//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use peda::assim::{gradient_check, AssimProblem, BackgroundCov};
use peda::dynamics::{Forcing, Model, ModelConfig, PhysParams, Trajectory};
use peda::floats::{observe, FloatSet, ObsRecord, ObsSet};
use peda::grid::{max_depth_integrated_divergence, Grid, NormParams, StateField};
use peda::sample::{random_forcing, random_noise_state, random_state};
use peda::tlm::{adj_window, tlm_window, AdjointState, Checkpoints, TangentState};
use peda::twin::{run_twin, write_outputs, TwinConfig, TwinReport};
use peda::verify::{check_energy_inequality, check_w_bound, picard_integrate, relative_l2_difference};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    format!("error: {e}")
}

fn wind_model(g: Grid, phys: PhysParams, dt: f64, tau0: f64) -> Model {
    Model::new(g, ModelConfig { phys, dt, linear: false, forcing: Forcing::wind(&g, tau0) }).unwrap()
}

fn random_floats(rng: &mut ChaCha8Rng, n: usize, z0: f64) -> FloatSet {
    let tau = std::f64::consts::TAU;
    FloatSet::new((0..n).map(|_| [rng.random_range(0.0..tau), rng.random_range(0.0..tau)]).collect(), z0)
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

fn adjoint_dot_test() -> Outcome {
    let t = Instant::now();
    let g = Grid::new(16, 16, 7, 1.0).unwrap();
    let m = wind_model(g, PhysParams { alpha: 1.0, beta: 0.1, gamma: 0.1, nu: 0.01 }, 0.02, 0.15);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x0 = random_state(&g, &mut rng, 0.5);
    let fs = random_floats(&mut rng, 10, 0.8);
    let ck = Checkpoints::record(&m, &x0, &fs, 50).map_err(err)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dx = TangentState { state: random_noise_state(&g, &mut rng, 1.0), floats: random_pairs(&mut rng, 10) };
        let lam = AdjointState { state: random_noise_state(&g, &mut rng, 1.0), floats: random_pairs(&mut rng, 10) };
        let fwd = tlm_window(&m, &ck, &dx).map_err(err)?;
        let back = adj_window(&m, &ck, &lam).map_err(err)?;
        let (l, r) = (fwd[50].dot(&lam), dx.dot(&back));
        worst = worst.max((l - r).abs() / l.abs().max(r.abs()));
    }
    let secs = t.elapsed();
    check(worst <= 1e-11 && secs <= Duration::from_secs(30), format!("max relative discrepancy {worst:.2e}, {secs:.1?}"))
}

fn gradient_test() -> Outcome {
    let t = Instant::now();
    let g = Grid::new(16, 16, 7, 1.0).unwrap();
    let phys = PhysParams { alpha: 1.0, beta: 0.1, gamma: 0.1, nu: 0.01 };
    let m = wind_model(g, phys, 0.02, 0.15);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let truth = random_state(&g, &mut rng, 0.5);
    let fs = random_floats(&mut rng, 10, 0.8);
    let mut traj = Trajectory::default();
    m.integrate(&truth, 50, &mut traj).map_err(err)?;
    let mut records = Vec::new();
    for (ti, pos) in observe(&traj.states, &fs, &[10, 20, 30, 40, 50], m.dt()).map_err(err)? {
        for (f, p) in pos.iter().enumerate() {
            records.push(ObsRecord { float_id: fs.ids[f], time_index: ti, pos: *p, noise_sd: 1e-3 });
        }
    }
    let xb = truth.plus(0.3, &random_state(&g, &mut rng, 0.5));
    let x0 = xb.plus(0.2, &random_state(&g, &mut rng, 0.5));
    let mut worst = [0.0f64; 2];
    for (i, freeze) in [true, false].into_iter().enumerate() {
        let cov = BackgroundCov::uniform(&g, [1.0, 1.0, 1.0]).map_err(err)?;
        let p = AssimProblem::new(wind_model(g, phys, 0.02, 0.15), 50, xb.clone(), cov, 1.0, fs.clone(), ObsSet { records: records.clone() }, freeze)
            .map_err(err)?;
        let dirs: Vec<StateField> = (0..10).map(|_| random_state(&g, &mut rng, 0.5)).collect();
        for r in gradient_check(&x0, &p, &dirs, 1e-5).map_err(err)? {
            worst[i] = worst[i].max(r.rel_error);
        }
    }
    let secs = t.elapsed();
    check(
        worst[0] <= 1e-5 && worst[1] <= 1e-5 && secs <= Duration::from_secs(120),
        format!("max relative error freeze-theta {:.2e}, full {:.2e}, {secs:.1?}", worst[0], worst[1]),
    )
}

/// States of the 500-step constrained run, shared with the `w`-bound criterion.
fn constrained_run() -> Vec<StateField> {
    let g = Grid::new(32, 32, 9, 1.0).unwrap();
    let cfg = TwinConfig::default();
    let m = wind_model(g, cfg.phys, cfg.dt, cfg.tau0);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut traj = Trajectory::default();
    m.integrate(&random_state(&g, &mut rng, 0.5), 500, &mut traj).expect("constrained run");
    traj.states
}

fn constraint_test(states: &[StateField]) -> Outcome {
    let div = states.iter().map(|x| max_depth_integrated_divergence(&x.u, &x.v)).fold(0.0, f64::max);
    let walls = states.iter().all(|x| x.components().iter().all(|f| f.has_zero_boundaries()));
    check(
        states.len() == 501 && div <= 1e-9 && walls,
        format!("{} states, max divergence {div:.2e}, boundary levels zero: {walls}", states.len()),
    )
}

fn w_bound_test(states: &[StateField]) -> Outcome {
    let g = Grid::new(32, 32, 9, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut fails = 0;
    let randoms: Vec<StateField> = (0..100).map(|_| random_state(&g, &mut rng, 1.0)).collect();
    for x in randoms.iter().chain(states) {
        let c = check_w_bound(x);
        if !c.pass {
            fails += 1;
        }
        if c.rhs > 0.0 {
            worst = worst.max(c.lhs / c.rhs);
        }
    }
    check(fails == 0, format!("{} states, {fails} failures, max lhs/rhs {worst:.3}", randoms.len() + states.len()))
}

fn energy_test() -> Outcome {
    let g = Grid::new(24, 24, 9, 1.0).unwrap();
    let phys = PhysParams { alpha: 0.1, beta: 0.1, gamma: 0.1, nu: 0.1 };
    let m = Model::new(g, ModelConfig { phys, dt: 0.01, linear: true, forcing: Forcing::none() }).unwrap();
    let norm = NormParams::new(2, NormParams::energy_weight(1.0, phys.nu, phys.gamma, phys.beta)).unwrap();
    let mut min_margin = f64::INFINITY;
    let mut all = true;
    for s in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
        let x0 = random_state(&g, &mut rng, 1.0);
        let f = random_forcing(&g, &mut rng, 1.0);
        let r = check_energy_inequality(&x0, &f, &m, 50, &norm).map_err(err)?;
        all &= r.pass && r.min_margin() > 0.0;
        min_margin = min_margin.min(r.min_margin());
    }
    check(all, format!("10 runs to T=0.5 with K={}, min margin {min_margin:.3e}", norm.k))
}

fn picard_test() -> Outcome {
    let g = Grid::new(8, 8, 5, 1.0).unwrap();
    let phys = PhysParams { alpha: 0.5, beta: 0.5, gamma: 0.5, nu: 0.1 };
    let m = Model::new(g, ModelConfig { phys, dt: 0.01, linear: false, forcing: Forcing::none() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let x0 = random_state(&g, &mut rng, 0.1);
    let norm = NormParams::new(2, 1.0).unwrap();
    let run = picard_integrate(&m, &x0, 20, 30, 1e-12, &norm).map_err(err)?;
    let mut traj = Trajectory::default();
    m.integrate(&x0, 20, &mut traj).map_err(err)?;
    let diff = relative_l2_difference(run.limit(), &traj.states).map_err(err)?;
    let q = run.max_contraction();
    check(
        run.converged && run.monotone && q < 1.0 && diff <= 1e-3,
        format!("{} iterations, max contraction {q:.2e}, relative L2 difference {diff:.2e}", run.residuals.len()),
    )
}

fn twin_test(report: &TwinReport, elapsed: Duration) -> Outcome {
    let [(bu, bv), (au, av)] = report.final_errors();
    let (bu, bv, au, av) = (bu.unwrap_or(0.0), bv.unwrap_or(0.0), au.unwrap_or(f64::INFINITY), av.unwrap_or(f64::INFINITY));
    let jo_ratio = report.final_jo / report.initial_jo;
    check(
        jo_ratio <= 0.1 && au <= 0.5 * bu && av <= 0.5 * bv && elapsed <= Duration::from_secs(300),
        format!(
            "Jo ratio {jo_ratio:.3e}, final E_u {au:.3}/{bu:.3}, E_v {av:.3}/{bv:.3}, {:.1?}",
            elapsed
        ),
    )
}

fn monotone_test(report: &TwinReport) -> Outcome {
    let inner = report.log.records.iter().filter(|r| r.inner > 0).count();
    check(report.log.inner_monotone() && inner > 0, format!("{inner} inner iterations logged"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism_test(first: &TwinReport, cfg: &TwinConfig) -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir(&a).map_err(err)?;
    std::fs::create_dir(&b).map_err(err)?;
    write_outputs(first, cfg, &a).map_err(err)?;
    let second = run_twin(cfg).map_err(err)?;
    write_outputs(&second, cfg, &b).map_err(err)?;
    let (fa, fb) = (files_in(&a), files_in(&b));
    let same = fa == fb;
    let differing: Vec<&str> =
        fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    check(same && !fa.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        let (tag, detail) = match o {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag} {name}: {detail}");
    };

    report(1, "adjoint dot test", adjoint_dot_test());
    report(2, "gradient vs finite differences", gradient_test());
    let states = constrained_run();
    report(3, "rigid-lid and boundary constraints", constraint_test(&states));
    report(4, "vertical velocity bound", w_bound_test(&states));
    drop(states);
    report(5, "linear energy inequality", energy_test());
    report(6, "Picard cross-check", picard_test());

    let cfg = TwinConfig::default();
    let t = Instant::now();
    match run_twin(&cfg) {
        Ok(twin) => {
            let elapsed = t.elapsed();
            report(7, "twin experiment", twin_test(&twin, elapsed));
            report(8, "inner-loop monotonicity", monotone_test(&twin));
            report(9, "determinism", determinism_test(&twin, &cfg));
        }
        Err(e) => {
            for (n, name) in [(7, "twin experiment"), (8, "inner-loop monotonicity"), (9, "determinism")] {
                report(n, name, Err(err(&e)));
            }
        }
    }

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
