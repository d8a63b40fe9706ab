//! Run configuration: `key = value` lines, `#` comments and `[section]` headers.
//!
//! Keys may appear under their section, as `section.key`, or bare at the top
//! level (every key name is unique). Omitted keys take their defaults.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::dynamics::{Forcing, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::grid::NormParams;
use crate::twin::TwinConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    /// Random samples per check.
    pub samples: usize,
    /// Steps of each integration.
    pub steps: usize,
    pub amplitude: f64,
    pub picard_max: usize,
    pub picard_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { samples: 10, steps: 50, amplitude: 1.0, picard_max: 30, picard_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub twin: TwinConfig,
    /// Drop the advection terms (used by `gradcheck`, `spinup` and `truth`).
    pub linear: bool,
    /// Truth snapshots every this many steps; 0 writes only the first and last.
    pub output_interval: usize,
    pub norm_m: usize,
    /// Temperature weight; `None` uses the smallest value allowed by the energy estimate.
    pub norm_k: Option<f64>,
    pub verify: VerifyConfig,
    pub grad_directions: usize,
    pub grad_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            twin: TwinConfig::default(),
            linear: false,
            output_interval: 0,
            norm_m: 2,
            norm_k: None,
            verify: VerifyConfig::default(),
            grad_directions: 10,
            grad_eps: 1e-5,
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["nx", "ny", "nz", "depth"]),
    ("physics", &["alpha", "beta", "gamma", "nu"]),
    ("time", &["dt", "linear", "spinup_steps", "window_steps", "windows", "output_interval"]),
    ("forcing", &["tau0"]),
    ("floats", &["floats", "obs_times", "obs_noise", "z0"]),
    (
        "assim",
        &[
            "background_scale",
            "background_variance_u",
            "background_variance_v",
            "background_variance_theta",
            "omega",
            "freeze_theta",
            "outer_loops",
            "inner_iters",
            "tol",
        ],
    ),
    ("norm", &["m", "K"]),
    ("verify", &["samples", "steps", "amplitude", "picard_max", "picard_tol"]),
    ("gradcheck", &["directions", "eps"]),
    ("run", &["seed"]),
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

fn parse_num<T: std::str::FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.twin;
        let real = |v: &str| parse_num::<f64>(v, "a real number");
        let count = |v: &str| parse_num::<usize>(v, "a nonnegative integer");
        match key {
            "nx" => t.nx = count(v)?,
            "ny" => t.ny = count(v)?,
            "nz" => t.nz = count(v)?,
            "depth" => t.depth = real(v)?,
            "alpha" => t.phys.alpha = real(v)?,
            "beta" => t.phys.beta = real(v)?,
            "gamma" => t.phys.gamma = real(v)?,
            "nu" => t.phys.nu = real(v)?,
            "dt" => t.dt = real(v)?,
            "linear" => self.linear = parse_bool(v)?,
            "spinup_steps" => t.spinup_steps = count(v)?,
            "window_steps" => t.window_steps = count(v)?,
            "windows" => t.windows = count(v)?,
            "output_interval" => self.output_interval = count(v)?,
            "tau0" => t.tau0 = real(v)?,
            "floats" => t.floats = count(v)?,
            "obs_times" => t.obs_times = count(v)?,
            "obs_noise" => t.obs_noise = real(v)?,
            "z0" => t.z0 = real(v)?,
            "background_scale" => t.background_scale = real(v)?,
            "background_variance_u" => t.background_variance[0] = real(v)?,
            "background_variance_v" => t.background_variance[1] = real(v)?,
            "background_variance_theta" => t.background_variance[2] = real(v)?,
            "omega" => t.omega = real(v)?,
            "freeze_theta" => t.freeze_theta = parse_bool(v)?,
            "outer_loops" => t.outer_loops = count(v)?,
            "inner_iters" => t.inner_iters = count(v)?,
            "tol" => t.tol = real(v)?,
            "m" => self.norm_m = count(v)?,
            "K" => self.norm_k = if v == "auto" { None } else { Some(real(v)?) },
            "samples" => self.verify.samples = count(v)?,
            "steps" => self.verify.steps = count(v)?,
            "amplitude" => self.verify.amplitude = real(v)?,
            "picard_max" => self.verify.picard_max = count(v)?,
            "picard_tol" => self.verify.picard_tol = real(v)?,
            "directions" => self.grad_directions = count(v)?,
            "eps" => self.grad_eps = real(v)?,
            "seed" => t.seed = parse_num(v, "an unsigned integer")?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.twin;
        match key {
            "nx" => t.nx.to_string(),
            "ny" => t.ny.to_string(),
            "nz" => t.nz.to_string(),
            "depth" => format!("{:?}", t.depth),
            "alpha" => format!("{:?}", t.phys.alpha),
            "beta" => format!("{:?}", t.phys.beta),
            "gamma" => format!("{:?}", t.phys.gamma),
            "nu" => format!("{:?}", t.phys.nu),
            "dt" => format!("{:?}", t.dt),
            "linear" => self.linear.to_string(),
            "spinup_steps" => t.spinup_steps.to_string(),
            "window_steps" => t.window_steps.to_string(),
            "windows" => t.windows.to_string(),
            "output_interval" => self.output_interval.to_string(),
            "tau0" => format!("{:?}", t.tau0),
            "floats" => t.floats.to_string(),
            "obs_times" => t.obs_times.to_string(),
            "obs_noise" => format!("{:?}", t.obs_noise),
            "z0" => format!("{:?}", t.z0),
            "background_scale" => format!("{:?}", t.background_scale),
            "background_variance_u" => format!("{:?}", t.background_variance[0]),
            "background_variance_v" => format!("{:?}", t.background_variance[1]),
            "background_variance_theta" => format!("{:?}", t.background_variance[2]),
            "omega" => format!("{:?}", t.omega),
            "freeze_theta" => t.freeze_theta.to_string(),
            "outer_loops" => t.outer_loops.to_string(),
            "inner_iters" => t.inner_iters.to_string(),
            "tol" => format!("{:?}", t.tol),
            "m" => self.norm_m.to_string(),
            "K" => self.norm_k.map_or_else(|| "auto".to_string(), |k| format!("{k:?}")),
            "samples" => self.verify.samples.to_string(),
            "steps" => self.verify.steps.to_string(),
            "amplitude" => format!("{:?}", self.verify.amplitude),
            "picard_max" => self.verify.picard_max.to_string(),
            "picard_tol" => format!("{:?}", self.verify.picard_tol),
            "directions" => self.grad_directions.to_string(),
            "eps" => format!("{:?}", self.grad_eps),
            "seed" => t.seed.to_string(),
            _ => unreachable!("key table and accessors disagree on `{key}`"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut lines: HashMap<&'static str, usize> = HashMap::new();
        let mut section: Option<&str> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, reason: String| Error::Config { line: line_no, key: key.to_string(), reason };
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(line, "unterminated section header".into()))?.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(err(name, "unknown section".into()));
                }
                section = Some(name);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(line, "expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let (sec, key) = match k.split_once('.') {
                Some((s, key)) => (Some(s), key),
                None => (section, k),
            };
            let Some(home) = section_of(key) else {
                return Err(err(k, "unknown key".into()));
            };
            if let Some(s) = sec {
                if s != home {
                    return Err(err(k, format!("belongs to section [{home}], not [{s}]")));
                }
            }
            cfg.set(key, v).map_err(|reason| err(key, reason))?;
            let interned = SECTIONS.iter().flat_map(|(_, ks)| ks.iter()).find(|&&s| s == key).expect("known key");
            lines.insert(interned, line_no);
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => {
                let line = lines
                    .iter()
                    .filter(|(k, _)| **k == name || k.starts_with(name))
                    .map(|(_, &l)| l)
                    .min()
                    .unwrap_or(0);
                Error::Config { line, key: name.to_string(), reason }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    /// Checks every parameter against its module's requirements.
    pub fn validate(&self) -> Result<()> {
        self.twin.validate()?;
        if !self.twin.tau0.is_finite() {
            return Err(Error::param("tau0", "must be finite"));
        }
        if !(self.twin.omega.is_finite() && self.twin.omega >= 0.0) {
            return Err(Error::param("omega", "must be >= 0"));
        }
        if !(self.twin.tol > 0.0 && self.twin.tol < 1.0) {
            return Err(Error::param("tol", "must lie in (0, 1)"));
        }
        if self.twin.background_variance.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::param("background_variance", "variances must be positive"));
        }
        self.model(self.linear)?;
        self.norm()?;
        let v = &self.verify;
        if v.samples == 0 || v.steps == 0 || v.picard_max == 0 {
            return Err(Error::param("samples", "samples, steps and picard_max must be positive"));
        }
        if !(v.amplitude.is_finite() && v.amplitude > 0.0) {
            return Err(Error::param("amplitude", "must be positive"));
        }
        if !(v.picard_tol > 0.0) {
            return Err(Error::param("picard_tol", "must be positive"));
        }
        if !(self.grad_eps > 0.0 && self.grad_eps.is_finite()) {
            return Err(Error::param("eps", "must be positive"));
        }
        Ok(())
    }

    pub fn model(&self, linear: bool) -> Result<Model> {
        let grid = self.twin.grid()?;
        let t = &self.twin;
        Model::new(grid, ModelConfig { phys: t.phys, dt: t.dt, linear, forcing: Forcing::wind(&grid, t.tau0) })
    }

    /// Temperature weight actually used.
    pub fn k(&self) -> f64 {
        let p = &self.twin.phys;
        self.norm_k.unwrap_or_else(|| NormParams::energy_weight(self.twin.depth, p.nu, p.gamma, p.beta))
    }

    pub fn norm(&self) -> Result<NormParams> {
        NormParams::new(self.norm_m, self.k())
    }

    /// Fully resolved configuration in the input format.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (i, (section, keys)) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for key in *keys {
                let _ = writeln!(out, "{key} = {}", self.get(key));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n  \n").unwrap(), RunConfig::default());
    }

    #[test]
    fn negative_viscosity_names_key_and_line() {
        let e = RunConfig::parse("# header\nnu = -1\n").unwrap_err();
        match e {
            Error::Config { line, key, reason } => {
                assert_eq!((line, key.as_str()), (2, "nu"));
                assert!(reason.contains("positive"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        let e = RunConfig::parse("[grid]\nnx = 16\nbogus = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, ref key, .. } if key == "bogus"));
        let e = RunConfig::parse("[grid]\nnu = 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = RunConfig::parse("[nosuch]\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = RunConfig::parse("nx = sixteen\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, ref key, .. } if key == "nx"));
    }

    #[test]
    fn sections_and_dotted_keys() {
        let c = RunConfig::parse("physics.nu = 0.02\n[grid]\nnx = 16 # comment\n[norm]\nK = 12.5\n").unwrap();
        assert_eq!(c.twin.phys.nu, 0.02);
        assert_eq!(c.twin.nx, 16);
        assert_eq!(c.k(), 12.5);
        assert_eq!(RunConfig::default().k(), 2.0 * 4.0 / (0.01 * 0.01));
    }

    #[test]
    fn emit_round_trip() {
        let mut c = RunConfig::default();
        c.twin.phys.alpha = 0.1 + 0.2;
        c.twin.dt = 1.0 / 3.0;
        c.twin.seed = u64::MAX;
        c.norm_k = Some(std::f64::consts::PI);
        c.linear = true;
        let text = c.emit();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().emit()).unwrap(), RunConfig::default());
    }
}
