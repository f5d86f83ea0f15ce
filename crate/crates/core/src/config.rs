//! Run configuration: a flat `key = value` text with `[section]` headers.
//!
//! ```text
//! [run]
//! mode = solve
//! [grid]
//! n = 63
//! window = 0.125 0.875 0.125 0.875
//! [problem]
//! alpha = 1e-3
//! gamma = 1e-4
//! [target]
//! kind = two-bumps
//! amp1 = 1
//! amp2 = -1
//! ```
//!
//! `#` and `;` start comments. Unknown sections or keys, duplicates and out
//! of range values are errors carrying the line number.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::grid::{build_grid, Grid, ScalarField, Window};
use crate::io;
use crate::norm::NormChoice;
use crate::objective::{ObjectiveError, ProblemSpec};
use crate::soc::{ProbeMode, SOCConfig};
use crate::solver::{HomotopySchedule, InnerMethod};
use crate::state::{LinearSolver, Nonlinearity, StateOptions};
use crate::targets::{Bump, TwoBumps};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Line { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("{0}")]
    Problem(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Solve,
    Verify,
    Soc,
    Sweep,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "solve" => Ok(RunMode::Solve),
            "verify" => Ok(RunMode::Verify),
            "soc" => Ok(RunMode::Soc),
            "sweep" => Ok(RunMode::Sweep),
            o => Err(format!("unknown mode '{o}' (expected solve, verify, soc or sweep)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    TwoBumps(TwoBumps),
    Csv { file: PathBuf },
}

/// Starting control of the continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialControl {
    Zero,
    /// Uniform noise in `[-scale, scale]` drawn from the run seed.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Not serialized, so reports of identical runs in different
    /// directories compare equal.
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    pub init: InitialControl,
    pub n: usize,
    pub window: Window,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub norm: NormChoice,
    /// `f(x, y) = c0 y + a y^3 + d0`
    pub f_c0: f64,
    pub f_a: f64,
    pub f_d0: f64,
    pub target: TargetSpec,
    pub state: StateOptions,
    pub schedule: HomotopySchedule,
    pub soc: SOCConfig,
    /// Activity threshold of the certificate; `None` for the default.
    pub certificate_theta: Option<f64>,
    pub sweep_alphas: Vec<f64>,
    pub sweep_norms: Vec<NormChoice>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Solve,
            out: PathBuf::from("out"),
            seed: 0,
            init: InitialControl::Zero,
            n: 63,
            window: Window::square(0.125, 0.875),
            alpha: 1e-3,
            beta: 0.0,
            gamma: 1e-4,
            norm: NormChoice::LInf,
            f_c0: 0.0,
            f_a: 1.0,
            f_d0: 0.0,
            target: TargetSpec::TwoBumps(TwoBumps::default()),
            state: StateOptions::default(),
            schedule: HomotopySchedule {
                eps0: 1e-9,
                ..Default::default()
            },
            soc: SOCConfig::default(),
            certificate_theta: None,
            sweep_alphas: vec![4e-4, 6e-4, 8e-4, 1e-3, 1.2e-3],
            sweep_norms: vec![NormChoice::LInf],
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key -> value` map with line numbers.
struct Ini {
    path: String,
    entries: HashMap<String, Entry>,
}

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["mode", "out", "seed", "init", "init_scale"]),
    ("grid", &["n", "window"]),
    ("problem", &["alpha", "beta", "gamma", "norm", "c0", "a", "d0"]),
    (
        "target",
        &["kind", "file", "amp1", "cx1", "cy1", "sigma1", "amp2", "cx2", "cy2", "sigma2"],
    ),
    ("state", &["tol", "max_newton", "linear_solver"]),
    (
        "schedule",
        &["eps0", "delta0", "shrink", "stages", "method", "gtol_rel", "max_iter", "max_cg", "memory"],
    ),
    (
        "soc",
        &[
            "tau",
            "theta",
            "samples",
            "modes",
            "strict_tol",
            "smoothing_passes",
            "growth_directions",
            "growth_steps",
        ],
    ),
    ("certificate", &["theta"]),
    ("sweep", &["alphas", "norms"]),
];

impl Ini {
    fn parse(path: &str, text: &str) -> Result<Ini, ConfigError> {
        let err = |line: usize, msg: String| ConfigError::Line {
            path: path.to_string(),
            line,
            msg,
        };
        let mut section: Option<&'static str> = None;
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split(['#', ';']).next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("malformed section header '{s}'")))?
                    .trim();
                section = Some(
                    KEYS.iter()
                        .find(|(k, _)| *k == name)
                        .map(|(k, _)| *k)
                        .ok_or_else(|| err(line, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected 'key = value', found '{s}'")))?;
            let sec = section.ok_or_else(|| err(line, "key outside of a [section]".into()))?;
            let k = k.trim();
            let allowed = KEYS.iter().find(|(n, _)| *n == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&k) {
                return Err(err(line, format!("unknown key '{k}' in [{sec}]")));
            }
            let full = format!("{sec}.{k}");
            if let Some(prev) = entries.get(&full) {
                let prev: &Entry = prev;
                return Err(err(line, format!("duplicate key '{k}' (first set on line {})", prev.line)));
            }
            entries.insert(
                full,
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(Ini {
            path: path.to_string(),
            entries,
        })
    }

    fn err(&self, e: &Entry, msg: String) -> ConfigError {
        ConfigError::Line {
            path: self.path.clone(),
            line: e.line,
            msg,
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str, check: impl Fn(&T) -> Result<(), String>) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        let v: T = e
            .value
            .parse()
            .map_err(|x: T::Err| self.err(e, format!("{key}: cannot parse '{}': {x}", e.value)))?;
        check(&v).map_err(|m| self.err(e, format!("{key}: {m}")))?;
        Ok(Some(v))
    }

    fn set<T: std::str::FromStr>(&self, key: &str, slot: &mut T, check: impl Fn(&T) -> Result<(), String>) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key, check)? {
            *slot = v;
        }
        Ok(())
    }

    /// Whitespace or comma separated list.
    fn list<T: std::str::FromStr>(&self, key: &str, check: impl Fn(&T) -> Result<(), String>) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for item in e.value.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let v: T = item
                .parse()
                .map_err(|x: T::Err| self.err(e, format!("{key}: cannot parse '{item}': {x}")))?;
            check(&v).map_err(|m| self.err(e, format!("{key}: {m}")))?;
            out.push(v);
        }
        if out.is_empty() {
            return Err(self.err(e, format!("{key}: empty list")));
        }
        Ok(Some(out))
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }
}

fn any(_: &impl Sized) -> Result<(), String> {
    Ok(())
}

fn positive(v: &f64) -> Result<(), String> {
    if *v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn nonnegative(v: &f64) -> Result<(), String> {
    if *v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("must be finite and >= 0, got {v}"))
    }
}

fn finite(v: &f64) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("must be finite, got {v}"))
    }
}

fn at_least(min: usize) -> impl Fn(&usize) -> Result<(), String> {
    move |v| {
        if *v >= min {
            Ok(())
        } else {
            Err(format!("must be at least {min}, got {v}"))
        }
    }
}

fn unit_interval(v: &f64) -> Result<(), String> {
    if *v > 0.0 && *v < 1.0 {
        Ok(())
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut cfg = RunConfig::parse_str(&path.display().to_string(), &text)?;
        // relative target files are resolved against the config's directory
        if let TargetSpec::Csv { file } = &mut cfg.target {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses and range-checks `text`; `origin` labels error messages.
    pub fn parse_str(origin: &str, text: &str) -> Result<RunConfig, ConfigError> {
        let ini = Ini::parse(origin, text)?;
        let mut c = RunConfig::default();

        ini.set("run.mode", &mut c.mode, any)?;
        if let Some(out) = ini.get::<String>("run.out", |s| {
            if s.is_empty() {
                Err("must not be empty".into())
            } else {
                Ok(())
            }
        })? {
            c.out = PathBuf::from(out);
        }
        ini.set("run.seed", &mut c.seed, any)?;
        let scale = ini.get("run.init_scale", positive)?.unwrap_or(1.0);
        if let Some(kind) = ini.get::<String>("run.init", |s| match s.as_str() {
            "zero" | "random" => Ok(()),
            o => Err(format!("unknown initial control '{o}' (expected zero or random)")),
        })? {
            c.init = if kind == "random" {
                InitialControl::Random { scale }
            } else {
                InitialControl::Zero
            };
        }

        ini.set("grid.n", &mut c.n, at_least(3))?;
        if let Some(w) = ini.list::<f64>("grid.window", finite)? {
            let line = ini.line_of("grid.window").unwrap_or(0);
            let win = match w.as_slice() {
                [lo, hi] => Window::square(*lo, *hi),
                [x0, x1, y0, y1] => Window::new(*x0, *x1, *y0, *y1),
                _ => {
                    return Err(ConfigError::Line {
                        path: origin.into(),
                        line,
                        msg: "grid.window: expected 'lo hi' or 'x0 x1 y0 y1'".into(),
                    })
                }
            };
            if !win.is_valid() {
                return Err(ConfigError::Line {
                    path: origin.into(),
                    line,
                    msg: "grid.window: need 0 < x0 < x1 < 1 and 0 < y0 < y1 < 1".into(),
                });
            }
            c.window = win;
        }

        ini.set("problem.alpha", &mut c.alpha, positive)?;
        ini.set("problem.beta", &mut c.beta, nonnegative)?;
        ini.set("problem.gamma", &mut c.gamma, nonnegative)?;
        ini.set("problem.norm", &mut c.norm, any)?;
        ini.set("problem.c0", &mut c.f_c0, nonnegative)?;
        ini.set("problem.a", &mut c.f_a, nonnegative)?;
        ini.set("problem.d0", &mut c.f_d0, finite)?;

        let kind = ini
            .get::<String>("target.kind", |s| match s.as_str() {
                "two-bumps" | "csv" => Ok(()),
                o => Err(format!("unknown target '{o}' (expected two-bumps or csv)")),
            })?
            .unwrap_or_else(|| "two-bumps".into());
        if kind == "csv" {
            let file = ini.get::<String>("target.file", any)?.ok_or_else(|| ConfigError::Line {
                path: origin.into(),
                line: ini.line_of("target.kind").unwrap_or(0),
                msg: "target.kind = csv requires target.file".into(),
            })?;
            c.target = TargetSpec::Csv { file: PathBuf::from(file) };
        } else {
            let mut t = TwoBumps::default();
            for (i, b) in [&mut t.first, &mut t.second].into_iter().enumerate() {
                let k = |name: &str| format!("target.{name}{}", i + 1);
                let Bump { amp, cx, cy, sigma } = b;
                ini.set(&k("amp"), amp, finite)?;
                ini.set(&k("cx"), cx, finite)?;
                ini.set(&k("cy"), cy, finite)?;
                ini.set(&k("sigma"), sigma, positive)?;
            }
            c.target = TargetSpec::TwoBumps(t);
        }

        ini.set("state.tol", &mut c.state.tol, positive)?;
        ini.set("state.max_newton", &mut c.state.max_newton, at_least(1))?;
        ini.set::<LinearSolver>("state.linear_solver", &mut c.state.linear_solver, any)?;

        let s = &mut c.schedule;
        ini.set("schedule.eps0", &mut s.eps0, positive)?;
        ini.set("schedule.delta0", &mut s.delta0, positive)?;
        ini.set("schedule.shrink", &mut s.shrink, unit_interval)?;
        ini.set("schedule.stages", &mut s.stages, at_least(1))?;
        ini.set::<InnerMethod>("schedule.method", &mut s.inner.method, any)?;
        ini.set("schedule.gtol_rel", &mut s.inner.gtol_rel, positive)?;
        ini.set("schedule.max_iter", &mut s.inner.max_iter, at_least(1))?;
        ini.set("schedule.max_cg", &mut s.inner.max_cg, at_least(1))?;
        ini.set("schedule.memory", &mut s.inner.memory, at_least(1))?;

        let q = &mut c.soc;
        ini.set("soc.tau", &mut q.tau, positive)?;
        if let Some(t) = ini.get("soc.theta", positive)? {
            q.theta = Some(t);
        }
        ini.set("soc.samples", &mut q.samples, at_least(1))?;
        if let Some(m) = ini.list::<ProbeMode>("soc.modes", any)? {
            q.modes = m;
        }
        ini.set("soc.strict_tol", &mut q.strict_tol, positive)?;
        ini.set("soc.smoothing_passes", &mut q.smoothing_passes, any)?;
        ini.set("soc.growth_directions", &mut q.growth_directions, any)?;
        if let Some(t) = ini.list::<f64>("soc.growth_steps", positive)? {
            q.growth_steps = t;
        }
        if let Some(t) = ini.get("certificate.theta", positive)? {
            c.certificate_theta = Some(t);
        }

        if let Some(a) = ini.list::<f64>("sweep.alphas", positive)? {
            c.sweep_alphas = a;
        }
        if let Some(n) = ini.list::<NormChoice>("sweep.norms", any)? {
            c.sweep_norms = n;
        }
        Ok(c)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        build_grid(self.n, self.n, self.window).map_err(|e| ConfigError::File {
            path: "grid".into(),
            msg: e.to_string(),
        })
    }

    pub fn target_field(&self, grid: &Grid) -> Result<ScalarField, ConfigError> {
        match &self.target {
            TargetSpec::TwoBumps(t) => Ok(t.sample(grid)),
            TargetSpec::Csv { file } => io::read_scalar_csv(file, grid).map_err(|e| ConfigError::File {
                path: file.display().to_string(),
                msg: e.to_string(),
            }),
        }
    }

    /// The validated problem with the configured `alpha` and norm.
    pub fn problem(&self) -> Result<ProblemSpec, ConfigError> {
        self.problem_with(self.alpha, self.norm)
    }

    pub fn problem_with(&self, alpha: f64, norm: NormChoice) -> Result<ProblemSpec, ConfigError> {
        let grid = self.grid()?;
        let y_d = self.target_field(&grid)?;
        let f = Nonlinearity::constant(&grid, self.f_c0, self.f_a, self.f_d0);
        let mut spec = ProblemSpec::new(grid, alpha, self.beta, self.gamma, y_d, f, norm)?;
        spec.state = self.state;
        Ok(spec)
    }

    /// The SOC settings with the run seed.
    pub fn soc_config(&self) -> SOCConfig {
        SOCConfig {
            seed: self.seed,
            ..self.soc.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(e: ConfigError) -> usize {
        match e {
            ConfigError::Line { line, .. } => line,
            other => panic!("expected a line error, got {other}"),
        }
    }

    #[test]
    fn parses_all_sections() {
        let text = "\
# benchmark
[run]
mode = sweep
seed = 42
init = random   ; noise
init_scale = 0.5
[grid]
n = 31
window = 0.25 0.75
[problem]
alpha = 2e-3
norm = l2
c0 = 1
a = 0
[target]
amp1 = 1
amp2 = -1
[schedule]
stages = 4
method = lbfgs
[soc]
modes = random-smooth, plateau-indicator
growth_steps = 1e-2 1e-1
[sweep]
alphas = 1e-3, 2e-3
norms = l2 linf
";
        let c = RunConfig::parse_str("t.ini", text).unwrap();
        assert_eq!(c.mode, RunMode::Sweep);
        assert_eq!(c.seed, 42);
        assert_eq!(c.init, InitialControl::Random { scale: 0.5 });
        assert_eq!(c.n, 31);
        assert_eq!(c.window, Window::square(0.25, 0.75));
        assert_eq!(c.norm, NormChoice::L2);
        assert_eq!(c.schedule.stages, 4);
        assert_eq!(c.schedule.inner.method, InnerMethod::Lbfgs);
        assert_eq!(c.soc.modes, vec![ProbeMode::RandomSmooth, ProbeMode::PlateauIndicator]);
        assert_eq!(c.soc.growth_steps, vec![1e-2, 1e-1]);
        assert_eq!(c.sweep_alphas, vec![1e-3, 2e-3]);
        assert_eq!(c.sweep_norms, vec![NormChoice::L2, NormChoice::LInf]);
        let TargetSpec::TwoBumps(t) = c.target else { panic!() };
        assert_eq!((t.first.amp, t.second.amp), (1.0, -1.0));
        let spec = c.problem().unwrap();
        assert!(spec.f.is_affine());
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(RunConfig::parse_str("t", "[problem]\n\nalpha = -1\n").unwrap_err()), 3);
        assert_eq!(line_of(RunConfig::parse_str("t", "[grid]\nsize = 3\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("t", "[nope]\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("t", "alpha = 1\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("t", "[grid]\nn = 7\nn = 9\n").unwrap_err()), 3);
        assert_eq!(line_of(RunConfig::parse_str("t", "[schedule]\nshrink = 1\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("t", "[grid]\nwindow = 0.5 0.2\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("t", "[soc]\nmodes = x\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("t", "[target]\nkind = csv\n").unwrap_err()), 2);
    }

    #[test]
    fn cubic_without_control_cost_is_rejected() {
        let c = RunConfig::parse_str("t", "[problem]\ngamma = 0\nbeta = 0\n").unwrap();
        let e = c.problem().unwrap_err();
        assert!(matches!(e, ConfigError::Problem(ObjectiveError::ExistenceCondition)));
        assert!(e.to_string().contains("existence") || e.to_string().contains("beta + gamma > 0"));
    }
}
