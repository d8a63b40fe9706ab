//! Identical-twin experiments: a wind-driven truth run generates noisy float
//! observations, a background with wrong velocities is corrected by 4D-Var,
//! and both runs are scored against the truth.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::assim::{assimilate, AssimOptions, AssimProblem, BackgroundCov, MinimizerLog};
use crate::dynamics::{DiagnosticsLog, Forcing, Model, ModelConfig, PhysParams, Trajectory};
use crate::error::{Error, Result};
use crate::floats::{float_tracks, wrap_position, FloatSet, ObsRecord, ObsSet};
use crate::grid::{Field3, Grid, StateField};
use crate::snapshot;

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub depth: f64,
    pub phys: PhysParams,
    pub dt: f64,
    pub tau0: f64,
    pub spinup_steps: usize,
    /// Steps per assimilation window.
    pub window_steps: usize,
    pub windows: usize,
    /// Number of floats.
    pub floats: usize,
    /// Observation times per window, evenly spaced and ending at the window end.
    pub obs_times: usize,
    pub obs_noise: f64,
    pub z0: f64,
    /// Background velocity scale.
    pub background_scale: f64,
    pub background_variance: [f64; 3],
    pub omega: f64,
    pub freeze_theta: bool,
    pub outer_loops: usize,
    pub inner_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            nx: 32,
            ny: 32,
            nz: 9,
            depth: 1.0,
            phys: PhysParams { alpha: 1.0, beta: 0.1, gamma: 0.1, nu: 0.01 },
            dt: 0.05,
            tau0: 0.15,
            spinup_steps: 1000,
            window_steps: 200,
            windows: 1,
            floats: 50,
            obs_times: 10,
            obs_noise: 1e-3,
            z0: 0.8,
            background_scale: 0.0,
            background_variance: [1.0, 1.0, 1.0],
            omega: 1.0,
            freeze_theta: true,
            outer_loops: 3,
            inner_iters: 10,
            tol: 1e-3,
            seed: 1,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.phys.validate()?;
        if self.floats == 0 {
            return Err(Error::param("floats", "need at least one float"));
        }
        if self.obs_times == 0 || self.obs_times > self.window_steps {
            return Err(Error::param("obs_times", "must lie in 1..=window_steps"));
        }
        if self.windows == 0 {
            return Err(Error::param("windows", "need at least one window"));
        }
        if !(0.0..=1.0).contains(&self.background_scale) {
            return Err(Error::param("background_scale", "must lie in [0, 1]"));
        }
        if !(self.obs_noise >= 0.0) {
            return Err(Error::param("obs_noise", "must be >= 0"));
        }
        if !(self.z0 > 0.0 && self.z0 < self.depth) {
            return Err(Error::param("z0", "drift depth must be strictly inside the column"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.nz, self.depth)
    }

    pub fn model(&self) -> Result<Model> {
        let grid = self.grid()?;
        Model::new(
            grid,
            ModelConfig { phys: self.phys, dt: self.dt, linear: false, forcing: Forcing::wind(&grid, self.tau0) },
        )
    }

    /// Time indices (within one window) at which floats are observed.
    pub fn obs_time_indices(&self) -> Vec<usize> {
        (1..=self.obs_times).map(|i| i * self.window_steps / self.obs_times).collect()
    }
}

/// Truth trajectory over all windows (`windows·window_steps + 1` states), after spin-up.
pub fn truth_run(cfg: &TwinConfig) -> Result<Vec<StateField>> {
    let model = cfg.model()?;
    let rest = StateField::zeros(*model.grid());
    let start = model.integrate(&rest, cfg.spinup_steps, &mut |_: usize, _: &StateField, _: Option<&_>| {})?;
    let mut traj = Trajectory::default();
    model.integrate(&start, cfg.windows * cfg.window_steps, &mut traj)?;
    Ok(traj.states)
}

/// Uniformly seeded floats at depth `z0`.
pub fn seed_floats<R: Rng + ?Sized>(cfg: &TwinConfig, rng: &mut R) -> FloatSet {
    let tau = std::f64::consts::TAU;
    let positions = (0..cfg.floats).map(|_| [rng.random_range(0.0..tau), rng.random_range(0.0..tau)]).collect();
    FloatSet::new(positions, cfg.z0)
}

/// Noisy observations of `fs0` advected through one window of `truth`.
pub fn synth_obs<R: Rng + ?Sized>(
    truth: &[StateField],
    fs0: &FloatSet,
    cfg: &TwinConfig,
    rng: &mut R,
) -> Result<ObsSet> {
    let times = cfg.obs_time_indices();
    let last = *times.last().expect("at least one obs time");
    if last >= truth.len() {
        return Err(Error::ObsTimeOutOfRange { index: last, len: truth.len() });
    }
    let tracks = float_tracks(&truth[..=last], fs0, cfg.dt)?;
    let noise = Normal::new(0.0, cfg.obs_noise).map_err(|e| Error::param("obs_noise", e.to_string()))?;
    let mut records = Vec::with_capacity(times.len() * fs0.len());
    for &t in &times {
        for (f, p) in tracks[t].iter().enumerate() {
            let (ex, ey) = if cfg.obs_noise > 0.0 { (noise.sample(rng), noise.sample(rng)) } else { (0.0, 0.0) };
            records.push(ObsRecord {
                float_id: fs0.ids[f],
                time_index: t,
                pos: wrap_position([p[0] + ex, p[1] + ey]),
                noise_sd: cfg.obs_noise,
            });
        }
    }
    Ok(ObsSet { records })
}

/// Truth with velocities scaled by `s_b` (θ kept).
pub fn make_background(truth0: &StateField, s_b: f64) -> StateField {
    StateField { u: truth0.u.scaled(s_b), v: truth0.v.scaled(s_b), theta: truth0.theta.clone() }
}

/// Relative RMS error `(∫|run − truth|² / ∫|truth|²)^½` of one field.
pub fn relative_rms(run: &Field3, truth: &Field3) -> Option<f64> {
    let den = truth.norm_sq();
    if den == 0.0 {
        return None;
    }
    let mut d = run.clone();
    d.axpy(-1.0, truth);
    Some((d.norm_sq() / den).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub e_u: Vec<Option<f64>>,
    pub e_v: Vec<Option<f64>>,
}

pub fn rms_error(run: &[StateField], truth: &[StateField]) -> Result<ErrorSeries> {
    if run.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} states", truth.len()), found: format!("{} states", run.len()) });
    }
    let mut e_u = Vec::with_capacity(run.len());
    let mut e_v = Vec::with_capacity(run.len());
    for (r, t) in run.iter().zip(truth) {
        t.grid().ensure_same(r.grid())?;
        e_u.push(relative_rms(&r.u, &t.u));
        e_v.push(relative_rms(&r.v, &t.v));
    }
    Ok(ErrorSeries { e_u, e_v })
}

#[derive(Debug, Clone)]
pub struct TwinReport {
    pub initial_jo: f64,
    pub final_jo: f64,
    pub background_errors: ErrorSeries,
    pub analysis_errors: ErrorSeries,
    pub log: MinimizerLog,
    pub obs: ObsSet,
    pub truth: Vec<StateField>,
    pub background: Vec<StateField>,
    pub analysis: Vec<StateField>,
}

impl TwinReport {
    pub fn final_errors(&self) -> [(Option<f64>, Option<f64>); 2] {
        let n = self.truth.len() - 1;
        [
            (self.background_errors.e_u[n], self.background_errors.e_v[n]),
            (self.analysis_errors.e_u[n], self.analysis_errors.e_v[n]),
        ]
    }
}

/// Runs truth, observations and one assimilation per window, chaining analyses.
pub fn run_twin(cfg: &TwinConfig) -> Result<TwinReport> {
    cfg.validate()?;
    let model_grid = cfg.grid()?;
    let truth = truth_run(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fs = seed_floats(cfg, &mut rng);
    let nw = cfg.window_steps;

    let mut background_x0 = make_background(&truth[0], cfg.background_scale);
    let mut all_obs = ObsSet::default();
    let mut log = MinimizerLog::default();
    let mut bg_traj: Vec<StateField> = Vec::new();
    let mut an_traj: Vec<StateField> = Vec::new();
    let (mut initial_jo, mut final_jo) = (0.0, 0.0);

    for w in 0..cfg.windows {
        let truth_w = &truth[w * nw..=(w + 1) * nw];
        let obs = synth_obs(truth_w, &fs, cfg, &mut rng)?;
        let cov = BackgroundCov::uniform(&model_grid, cfg.background_variance)?;
        let problem =
            AssimProblem::new(cfg.model()?, nw, background_x0.clone(), cov, cfg.omega, fs.clone(), obs.clone(), cfg.freeze_theta)?;
        let res = assimilate(
            &problem,
            AssimOptions { outer_loops: cfg.outer_loops, inner_iters: cfg.inner_iters, tol: cfg.tol },
        )?;
        if w == 0 {
            initial_jo = res.initial_cost.jo;
        }
        final_jo = res.cost.jo;
        let offset = w * cfg.outer_loops.saturating_add(1);
        log.records.extend(res.log.records.iter().map(|r| crate::assim::LogRecord { outer: r.outer + offset, ..*r }));

        let model = problem.model();
        let mut bg = Trajectory::default();
        model.integrate(&background_x0, nw, &mut bg)?;
        let mut an = Trajectory::default();
        let an_end = model.integrate(&res.analysis, nw, &mut an)?;
        let skip = usize::from(w > 0);
        bg_traj.extend(bg.states.into_iter().skip(skip));
        an_traj.extend(an.states.into_iter().skip(skip));

        // Shift observation times to the global clock.
        all_obs.records.extend(obs.records.iter().map(|r| ObsRecord { time_index: r.time_index + w * nw, ..*r }));
        // Next window: floats restart from their last observed positions; the
        // background is the analysis forecast.
        let last_t = *cfg.obs_time_indices().last().expect("obs time");
        fs = FloatSet {
            positions: obs.records.iter().filter(|r| r.time_index == last_t).map(|r| r.pos).collect(),
            ..fs
        };
        background_x0 = an_end;
    }

    let background_errors = rms_error(&bg_traj, &truth)?;
    let analysis_errors = rms_error(&an_traj, &truth)?;
    Ok(TwinReport {
        initial_jo,
        final_jo,
        background_errors,
        analysis_errors,
        log,
        obs: all_obs,
        truth,
        background: bg_traj,
        analysis: an_traj,
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.17e}"))
}

impl ErrorSeries {
    /// CSV `time,E_u_bg,E_v_bg,E_u_an,E_v_an`; missing values are left empty.
    pub fn write_pair_csv<W: Write>(bg: &ErrorSeries, an: &ErrorSeries, dt: f64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,E_u_bg,E_v_bg,E_u_an,E_v_an")?;
        for n in 0..bg.e_u.len() {
            writeln!(
                w,
                "{:.10e},{},{},{},{}",
                n as f64 * dt,
                fmt_opt(bg.e_u[n]),
                fmt_opt(bg.e_v[n]),
                fmt_opt(an.e_u[n]),
                fmt_opt(an.e_v[n])
            )?;
        }
        Ok(())
    }
}

/// Writes every twin artifact into `dir`.
pub fn write_outputs(report: &TwinReport, cfg: &TwinConfig, dir: &Path) -> Result<()> {
    report.obs.save(&dir.join("obs.csv"))?;
    write_file(&dir.join("errors.csv"), |w| {
        ErrorSeries::write_pair_csv(&report.background_errors, &report.analysis_errors, cfg.dt, w)
    })?;
    for (name, traj) in [("truth", &report.truth), ("background", &report.background), ("analysis", &report.analysis)] {
        let mut diag = DiagnosticsLog::new(cfg.dt);
        for (n, s) in traj.iter().enumerate() {
            crate::dynamics::Recorder::record(&mut diag, n, s, None);
        }
        write_file(&dir.join(format!("ke_{name}.csv")), |w| {
            writeln!(w, "step,time,kinetic_energy")?;
            for r in &diag.rows {
                writeln!(w, "{},{:.10e},{:.17e}", r.step, r.time, r.kinetic_energy)?;
            }
            Ok(())
        })?;
    }
    write_file(&dir.join("minlog.csv"), |w| report.log.write_csv(w))?;
    snapshot::write_state(&dir.join("analysis"), &report.analysis[0])?;
    snapshot::write_state(&dir.join("truth"), &report.truth[0])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_errors_follow_scale() {
        let g = Grid::new(8, 8, 5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = crate::sample::random_state(&g, &mut rng, 1.0);
        for (s, e) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)] {
            let b = make_background(&t, s);
            assert!((relative_rms(&b.u, &t.u).unwrap() - e).abs() < 1e-15);
            assert!((relative_rms(&b.v, &t.v).unwrap() - e).abs() < 1e-15);
        }
        let z = Field3::zeros(g);
        assert_eq!(relative_rms(&z, &z), None);
        let scaled = StateField { u: t.u.scaled(1.1), v: t.v.scaled(1.1), theta: t.theta.clone() };
        let e = rms_error(&[scaled], &[t]).unwrap();
        assert!((e.e_u[0].unwrap() - 0.1).abs() < 1e-14 && (e.e_v[0].unwrap() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn calm_truth_without_wind() {
        let cfg = TwinConfig { nx: 8, ny: 8, nz: 5, tau0: 0.0, spinup_steps: 5, window_steps: 10, ..Default::default() };
        let truth = truth_run(&cfg).unwrap();
        assert_eq!(truth.len(), 11);
        assert!(truth.iter().all(|s| *s == StateField::zeros(cfg.grid().unwrap())));
    }

    #[test]
    fn obs_count_and_noise_free_consistency() {
        let cfg = TwinConfig {
            nx: 8,
            ny: 8,
            nz: 5,
            spinup_steps: 20,
            window_steps: 20,
            floats: 7,
            obs_times: 4,
            obs_noise: 0.0,
            ..Default::default()
        };
        let truth = truth_run(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs = seed_floats(&cfg, &mut rng);
        let obs = synth_obs(&truth, &fs, &cfg, &mut rng).unwrap();
        assert_eq!(obs.len(), 28);
        let pred = crate::floats::observe(&truth, &fs, &cfg.obs_time_indices(), cfg.dt).unwrap();
        for (t, pos) in pred {
            for (f, p) in pos.iter().enumerate() {
                let r = obs.records.iter().find(|r| r.time_index == t && r.float_id == fs.ids[f]).unwrap();
                assert!((r.pos[0] - p[0]).abs() <= 1e-12 && (r.pos[1] - p[1]).abs() <= 1e-12);
            }
        }
    }
}
