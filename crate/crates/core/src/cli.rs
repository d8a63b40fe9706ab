//! Command-line front end. Every invocation writes into a fresh run directory
//! `<subcommand>-<config hash>-<unix seconds>` under `--out`, starting with the
//! resolved configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::assim::{assimilate, gradient_check, AssimOptions, AssimProblem, BackgroundCov};
use crate::config::RunConfig;
use crate::dynamics::{DiagnosticsLog, Model, Recorder, StepStages, Trajectory};
use crate::error::{Error, Result};
use crate::floats::{FloatSet, ObsSet};
use crate::grid::StateField;
use crate::sample::{random_forcing, random_state};
use crate::snapshot;
use crate::twin::{rms_error, run_twin, seed_floats, synth_obs, write_outputs, ErrorSeries};
use crate::verify::{check_energy_inequality, check_nonlinear_bound, check_w_bound, picard_integrate};

#[derive(Debug, Parser)]
#[command(name = "peda", version, about = "Float-data 4D-Var for a periodic primitive-equations ocean model")]
pub struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads for sample sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spin the wind-driven model up from rest; writes the final state and diagnostics.
    Spinup,
    /// Integrate the truth over all windows from a snapshot (or from a fresh spin-up).
    Truth {
        /// Snapshot prefix of the initial state.
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Seed floats and write noisy observations of the first window.
    Obs {
        /// Snapshot prefix of the truth initial state.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Run incremental 4D-Var over one window.
    Assimilate {
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        floats: PathBuf,
    },
    /// Relative RMS error of a run against the truth over all windows.
    Evaluate {
        /// Snapshot prefix of the initial state to score.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Compare the adjoint gradient with central differences.
    Gradcheck,
    /// Numerical checks of the analytical estimates.
    Verify {
        #[command(subcommand)]
        check: VerifyCheck,
    },
    /// Full identical-twin experiment.
    Twin,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum VerifyCheck {
    Wbound,
    Energy,
    Nlbound,
    Picard,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spinup => "spinup",
            Command::Truth { .. } => "truth",
            Command::Obs { .. } => "obs",
            Command::Assimilate { .. } => "assimilate",
            Command::Evaluate { .. } => "evaluate",
            Command::Gradcheck => "gradcheck",
            Command::Verify { check } => match check {
                VerifyCheck::Wbound => "verify-wbound",
                VerifyCheck::Energy => "verify-energy",
                VerifyCheck::Nlbound => "verify-nlbound",
                VerifyCheck::Picard => "verify-picard",
            },
            Command::Twin => "twin",
        }
    }
}

/// Parses the configuration, creates the run directory and runs the subcommand.
/// Returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.twin.seed = seed;
    }
    if cli.threads == 0 {
        return Err(Error::param("threads", "must be at least 1"));
    }
    let resolved = cfg.emit();
    log::info!("resolved configuration:\n{resolved}");
    let dir = create_run_dir(&cli.out, cli.command.name(), &resolved)?;
    write_text(&dir.join("config.txt"), &resolved)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &cfg, &dir))?;
    Ok(dir)
}

fn create_run_dir(out: &Path, name: &str, resolved: &str) -> Result<PathBuf> {
    let digest = Sha256::digest(resolved.as_bytes());
    let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let dir = out.join(format!("{name}-{hash}-{secs}"));
    // `create_dir` fails on an existing directory, so runs never overwrite each other.
    std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_with(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: &Command, cfg: &RunConfig, dir: &Path) -> Result<()> {
    match cmd {
        Command::Spinup => spinup(cfg, dir),
        Command::Truth { initial } => truth(cfg, initial.as_deref(), dir),
        Command::Obs { truth } => obs(cfg, truth, dir),
        Command::Assimilate { background, obs, floats } => assim(cfg, background, obs, floats, dir),
        Command::Evaluate { run, truth } => evaluate(cfg, run, truth, dir),
        Command::Gradcheck => gradcheck(cfg, dir),
        Command::Verify { check } => verify(*check, cfg, dir),
        Command::Twin => {
            let report = run_twin(&cfg.twin)?;
            write_outputs(&report, &cfg.twin, dir)
        }
    }
}

fn spun_up_state(model: &Model, cfg: &RunConfig, diag: &mut DiagnosticsLog) -> Result<StateField> {
    model.integrate(&StateField::zeros(*model.grid()), cfg.twin.spinup_steps, diag)
}

fn load_state(prefix: &Path, model: &Model) -> Result<StateField> {
    let x = snapshot::read_state(prefix)?;
    model.grid().ensure_same(x.grid())?;
    Ok(x)
}

fn spinup(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let model = cfg.model(cfg.linear)?;
    let mut diag = DiagnosticsLog::new(model.dt());
    let end = spun_up_state(&model, cfg, &mut diag)?;
    snapshot::write_state(&dir.join("spinup"), &end)?;
    write_with(&dir.join("diagnostics.csv"), |w| diag.write_csv(w))
}

/// Records diagnostics for every step and keeps snapshots at the output interval.
struct TruthRecorder {
    diag: DiagnosticsLog,
    interval: usize,
    last: usize,
    kept: Vec<(usize, StateField)>,
}

impl Recorder for TruthRecorder {
    fn record(&mut self, step: usize, x: &StateField, stages: Option<&StepStages>) {
        self.diag.record(step, x, stages);
        let keep = if self.interval == 0 { step == 0 || step == self.last } else { step.is_multiple_of(self.interval) || step == self.last };
        if keep {
            self.kept.push((step, x.clone()));
        }
    }
}

fn truth(cfg: &RunConfig, initial: Option<&Path>, dir: &Path) -> Result<()> {
    let model = cfg.model(cfg.linear)?;
    let x0 = match initial {
        Some(p) => load_state(p, &model)?,
        None => spun_up_state(&model, cfg, &mut DiagnosticsLog::new(model.dt()))?,
    };
    let nsteps = cfg.twin.windows * cfg.twin.window_steps;
    let mut rec = TruthRecorder { diag: DiagnosticsLog::new(model.dt()), interval: cfg.output_interval, last: nsteps, kept: Vec::new() };
    model.integrate(&x0, nsteps, &mut rec)?;
    for (step, x) in &rec.kept {
        snapshot::write_state(&dir.join(format!("truth_{step:06}")), x)?;
    }
    write_with(&dir.join("diagnostics.csv"), |w| rec.diag.write_csv(w))
}

fn obs(cfg: &RunConfig, truth0: &Path, dir: &Path) -> Result<()> {
    let model = cfg.twin.model()?;
    let x0 = load_state(truth0, &model)?;
    let mut traj = Trajectory::default();
    model.integrate(&x0, cfg.twin.window_steps, &mut traj)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.twin.seed);
    let fs = seed_floats(&cfg.twin, &mut rng);
    let set = synth_obs(&traj.states, &fs, &cfg.twin, &mut rng)?;
    fs.save(&dir.join("floats.csv"))?;
    set.save(&dir.join("obs.csv"))
}

fn assim(cfg: &RunConfig, background: &Path, obs: &Path, floats: &Path, dir: &Path) -> Result<()> {
    let t = &cfg.twin;
    let model = t.model()?;
    let xb = load_state(background, &model)?;
    let obs = ObsSet::load(obs)?;
    let fs = FloatSet::load(floats)?;
    let cov = BackgroundCov::uniform(model.grid(), t.background_variance)?;
    let problem = AssimProblem::new(model, t.window_steps, xb, cov, t.omega, fs, obs, t.freeze_theta)?;
    let res = assimilate(&problem, AssimOptions { outer_loops: t.outer_loops, inner_iters: t.inner_iters, tol: t.tol })?;
    snapshot::write_state(&dir.join("analysis"), &res.analysis)?;
    write_with(&dir.join("minlog.csv"), |w| res.log.write_csv(w))?;
    write_with(&dir.join("cost.csv"), |w| {
        writeln!(w, "stage,J,Jo,Jb")?;
        for (name, c) in [("initial", res.initial_cost), ("final", res.cost)] {
            writeln!(w, "{name},{:.17e},{:.17e},{:.17e}", c.j, c.jo, c.jb)?;
        }
        Ok(())
    })
}

fn evaluate(cfg: &RunConfig, run: &Path, truth0: &Path, dir: &Path) -> Result<()> {
    let model = cfg.twin.model()?;
    let t0 = snapshot::read_state(truth0)?;
    let r0 = snapshot::read_state(run)?;
    t0.grid().ensure_same(r0.grid())?;
    model.grid().ensure_same(t0.grid())?;
    let nsteps = cfg.twin.windows * cfg.twin.window_steps;
    let (mut tt, mut rt) = (Trajectory::default(), Trajectory::default());
    model.integrate(&t0, nsteps, &mut tt)?;
    model.integrate(&r0, nsteps, &mut rt)?;
    let e = rms_error(&rt.states, &tt.states)?;
    write_with(&dir.join("errors.csv"), |w| write_single_errors(&e, model.dt(), w))
}

fn write_single_errors<W: Write>(e: &ErrorSeries, dt: f64, mut w: W) -> std::io::Result<()> {
    let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.17e}"));
    writeln!(w, "time,E_u,E_v")?;
    for n in 0..e.e_u.len() {
        writeln!(w, "{:.10e},{},{}", n as f64 * dt, f(e.e_u[n]), f(e.e_v[n]))?;
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let t = &cfg.twin;
    let model = cfg.model(cfg.linear)?;
    let g = *model.grid();
    let amp = cfg.verify.amplitude;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let x0 = random_state(&g, &mut rng, amp);
    let mut truth0 = x0.clone();
    truth0.axpy(0.1, &random_state(&g, &mut rng, amp));
    let mut traj = Trajectory::default();
    model.integrate(&truth0, t.window_steps, &mut traj)?;
    let fs = seed_floats(t, &mut rng);
    let obs = synth_obs(&traj.states, &fs, t, &mut rng)?;
    let mut xb = x0.clone();
    xb.axpy(0.05, &random_state(&g, &mut rng, amp));
    let cov = BackgroundCov::uniform(&g, t.background_variance)?;
    let problem = AssimProblem::new(model, t.window_steps, xb, cov, t.omega, fs, obs, t.freeze_theta)?;
    let dirs: Vec<StateField> = (0..cfg.grad_directions).map(|_| random_state(&g, &mut rng, amp)).collect();
    let rows = gradient_check(&x0, &problem, &dirs, cfg.grad_eps)?;
    write_with(&dir.join("gradcheck.csv"), |w| {
        writeln!(w, "direction,analytic,fd,rel_error")?;
        for (i, r) in rows.iter().enumerate() {
            writeln!(w, "{i},{:.17e},{:.17e},{:.17e}", r.analytic, r.fd, r.rel_error)?;
        }
        Ok(())
    })
}

/// Independent per-sample generators, so sweeps give the same result on any thread count.
fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

fn verify(check: VerifyCheck, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let g = cfg.twin.grid()?;
    let v = &cfg.verify;
    let seed = cfg.twin.seed;
    let norm = cfg.norm()?;
    match check {
        VerifyCheck::Wbound => {
            let rows: Vec<_> = (0..v.samples)
                .into_par_iter()
                .map(|s| check_w_bound(&random_state(&g, &mut sample_rng(seed, s), v.amplitude)))
                .collect();
            write_with(&dir.join("wbound.csv"), |w| {
                writeln!(w, "sample,lhs,rhs,margin,pass")?;
                for (s, r) in rows.iter().enumerate() {
                    writeln!(w, "{s},{:.17e},{:.17e},{:.17e},{}", r.lhs, r.rhs, r.rhs - r.lhs, r.pass)?;
                }
                Ok(())
            })
        }
        VerifyCheck::Energy => {
            let model = cfg.model(true)?;
            let reports: Vec<_> = (0..v.samples)
                .into_par_iter()
                .map(|s| {
                    let mut rng = sample_rng(seed, s);
                    let x0 = random_state(&g, &mut rng, v.amplitude);
                    let f = random_forcing(&g, &mut rng, v.amplitude);
                    check_energy_inequality(&x0, &f, &model, v.steps, &norm)
                })
                .collect::<Result<_>>()?;
            write_with(&dir.join("energy.csv"), |w| {
                writeln!(w, "sample,step,time,lhs,rhs,margin,pass")?;
                for (s, rep) in reports.iter().enumerate() {
                    for r in &rep.rows {
                        writeln!(w, "{s},{},{:.10e},{:.17e},{:.17e},{:.17e},{}", r.step, r.time, r.lhs, r.rhs, r.margin, r.lhs <= r.rhs)?;
                    }
                }
                Ok(())
            })?;
            if let Some(rep) = reports.first() {
                let c = rep.constants;
                write_with(&dir.join("energy_constants.csv"), |w| {
                    writeln!(w, "C1,C2,C3,C4,K")?;
                    writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", c.c1, c.c2, c.c3, c.c4, rep.k)
                })?;
            }
            Ok(())
        }
        VerifyCheck::Nlbound => {
            let rows: Vec<_> = (0..v.samples)
                .into_par_iter()
                .map(|s| {
                    let mut rng = sample_rng(seed, s);
                    let x1 = random_state(&g, &mut rng, v.amplitude);
                    let x2 = random_state(&g, &mut rng, v.amplitude);
                    check_nonlinear_bound(&x1, &x2, &norm)
                })
                .collect::<Result<_>>()?;
            write_with(&dir.join("nlbound.csv"), |w| {
                writeln!(w, "sample,ratio_u,ratio_v,ratio_theta,max_ratio,degenerate")?;
                for (s, r) in rows.iter().enumerate() {
                    let [a, b, c] = r.ratios;
                    writeln!(w, "{s},{a:.17e},{b:.17e},{c:.17e},{:.17e},{}", r.max_ratio, r.degenerate)?;
                }
                Ok(())
            })
        }
        VerifyCheck::Picard => {
            let model = cfg.model(false)?;
            let x0 = random_state(&g, &mut sample_rng(seed, 0), v.amplitude);
            let run = picard_integrate(&model, &x0, v.steps, v.picard_max, v.picard_tol, &norm)?;
            let mut traj = Trajectory::default();
            model.integrate(&x0, v.steps, &mut traj)?;
            let diff = crate::verify::relative_l2_difference(run.limit(), &traj.states)?;
            write_with(&dir.join("picard.csv"), |w| {
                writeln!(w, "iteration,residual")?;
                for (n, r) in run.residuals.iter().enumerate() {
                    writeln!(w, "{},{r:.17e}", n + 1)?;
                }
                Ok(())
            })?;
            write_with(&dir.join("picard_summary.csv"), |w| {
                writeln!(w, "horizon,converged,monotone,max_contraction,relative_l2_difference")?;
                writeln!(w, "{:.10e},{},{},{:.17e},{:.17e}", run.horizon, run.converged, run.monotone, run.max_contraction(), diff)
            })
        }
    }
}

/// Entry point of the binary: runs the CLI and turns errors into one stderr line.
pub fn main_exit() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("run_dir={}", dir.display());
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            std::process::ExitCode::FAILURE
        }
    }
}
