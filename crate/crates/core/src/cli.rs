//! Batch front end: `bvcontrol <solve|verify|soc|sweep> --config PATH`.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 the solver did not
//! converge (outputs are still written when a final iterate exists).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::certificate::{self, Certificate, StructureReport};
use crate::config::{ConfigError, InitialControl, RunConfig, RunMode};
use crate::grid::ControlField;
use crate::io::{self, IoError};
use crate::norm::NormChoice;
use crate::objective::{self, ObjectiveError, ProblemSpec};
use crate::soc::{self, SocError};
use crate::solver::{self, SolveReport, SolverError, StageRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NONCONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bvcontrol", version, about = "Total-variation regularized control of semilinear elliptic equations")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Run the continuation and write the fields, report and structure.
    Solve(Common),
    /// Solve, then check the first-order certificate.
    Verify(Common),
    /// Solve, certify, and probe second-order conditions.
    Soc(Common),
    /// Solve for every alpha and norm of the sweep lists.
    Sweep(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `run.out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// RNG seed (overrides `run.seed`).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Soc(#[from] SocError),
    #[error("solver failed: {0}")]
    Solver(SolverError),
    #[error("{path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => EXIT_NONCONVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NONCONVERGED
        }
    }
}

/// The deterministic part of a solve, written to `report.json`. Wall-clock
/// times go to `timing.json`.
#[derive(Debug, Serialize)]
pub struct ReportDoc<'a> {
    pub config: &'a RunConfig,
    pub converged: bool,
    /// `J(u) = F(u) + alpha TV(u)` of the written control.
    pub j: f64,
    pub f: f64,
    pub tv: f64,
    pub final_eps: f64,
    pub final_delta: f64,
    pub stages: &'a [StageRecord],
}

#[derive(Debug, Serialize)]
struct TimingDoc {
    solve_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub norm: NormChoice,
    pub j: f64,
    pub f: f64,
    pub tv: f64,
    pub plateau_count: usize,
    pub coverage5: f64,
    pub residual: f64,
    pub residual_relative: f64,
    pub converged: bool,
}

fn initial_control(cfg: &RunConfig, spec: &ProblemSpec) -> Option<ControlField> {
    match cfg.init {
        InitialControl::Zero => None,
        InitialControl::Random { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Some(ControlField::from_vec(
                (0..spec.grid.omega_len()).map(|_| rng.gen_range(-scale..=scale)).collect(),
            ))
        }
    }
}

/// Runs the continuation; a failed stage with a partial result is reported
/// as nonconverged instead of an error when at least one stage finished.
pub fn solve(cfg: &RunConfig, spec: &ProblemSpec) -> Result<SolveReport, CliError> {
    let u0 = initial_control(cfg, spec);
    match solver::homotopy_solve_from(spec, &cfg.schedule, u0.as_ref()) {
        Ok(r) => Ok(r),
        Err(SolverError::StageFailed { stage, source, partial }) if !partial.stages.is_empty() => {
            warn!("stage {stage} failed ({source}); keeping the last completed stage");
            Ok(*partial)
        }
        Err(e @ SolverError::InvalidSchedule(_)) => Err(CliError::Config(ConfigError::File {
            path: "schedule".into(),
            msg: e.to_string(),
        })),
        Err(e) => Err(CliError::Solver(e)),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::OutputDir {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes the fields, `report.json`, `timing.json`, `structure.json` and the
/// rasters of one solve.
pub fn write_solution(
    dir: &Path,
    cfg: &RunConfig,
    spec: &ProblemSpec,
    rep: &SolveReport,
) -> Result<(Vec<PathBuf>, StructureReport), CliError> {
    ensure_dir(dir)?;
    let g = &spec.grid;
    let mut files = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    io::write_control_csv(&put("u.csv"), g, &rep.u)?;
    io::write_scalar_csv(&put("y.csv"), g, &rep.y)?;
    io::write_scalar_csv(&put("phi.csv"), g, &rep.phi)?;
    io::write_grad_csv(&put("lambda.csv"), g, &rep.lambda)?;
    let f = objective::eval_f(spec, &rep.u)?;
    let tv = objective::eval_tv(g, &rep.u, spec.norm);
    let doc = ReportDoc {
        config: cfg,
        converged: rep.converged,
        j: objective::eval_j(spec, &rep.u)?,
        f,
        tv,
        final_eps: rep.final_eps(),
        final_delta: rep.final_delta(),
        stages: &rep.stages,
    };
    io::write_json(&put("report.json"), &doc)?;
    io::write_json(
        &put("timing.json"),
        &TimingDoc {
            solve_seconds: rep.elapsed_seconds,
        },
    )?;
    let structure = certificate::structure_report(g, &rep.u, certificate::default_quantization(&rep.u));
    io::write_json(&put("structure.json"), &structure)?;
    files.extend(io::emit_plotdata(dir, g, &rep.u, &rep.lambda)?);
    Ok((files, structure))
}

pub fn certify(cfg: &RunConfig, spec: &ProblemSpec, rep: &SolveReport) -> Result<Certificate, CliError> {
    Ok(certificate::check_first_order(
        spec,
        &rep.u,
        &rep.lambda,
        cfg.certificate_theta.unwrap_or(0.0),
        0.0,
    )?)
}

/// Executes `cfg` in its configured mode.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    if cfg.mode == RunMode::Sweep {
        return run_sweep(cfg);
    }
    let spec = cfg.problem()?;
    let rep = solve(cfg, &spec)?;
    let (mut files, structure) = write_solution(&cfg.out, cfg, &spec, &rep)?;
    info!(
        "J = {:.10e}, {} plateau levels, converged = {}",
        rep.last().map(|s| s.j).unwrap_or(f64::NAN),
        structure.plateau_count,
        rep.converged
    );
    if matches!(cfg.mode, RunMode::Verify | RunMode::Soc) {
        let cert = certify(cfg, &spec, &rep)?;
        info!(
            "stationarity residual {:.3e} (relative {:.3e}), dual overshoot {:.3e}",
            cert.residual, cert.residual_relative, cert.dual_overshoot
        );
        let p = cfg.out.join("certificate.json");
        io::write_json(&p, &cert)?;
        files.push(p);
    }
    if cfg.mode == RunMode::Soc {
        let report = soc::sufficient_condition_scan(&spec, &rep.u, &rep.lambda, &cfg.soc_config())?;
        info!(
            "{} of {} probes in the cone, {} necessary-condition violations",
            report.cone_members,
            report.directions.len(),
            report.necessary_violations
        );
        let p = cfg.out.join("soc.json");
        io::write_json(&p, &report)?;
        files.push(p);
    }
    Ok(RunOutcome {
        converged: rep.converged,
        files,
    })
}

fn run_sweep(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    ensure_dir(&cfg.out)?;
    let jobs: Vec<(usize, NormChoice, f64)> = cfg
        .sweep_norms
        .iter()
        .flat_map(|&n| cfg.sweep_alphas.iter().map(move |&a| (n, a)))
        .enumerate()
        .map(|(i, (n, a))| (i, n, a))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, norm, alpha)| -> Result<(SweepRow, Vec<PathBuf>), CliError> {
            let run_cfg = RunConfig {
                alpha,
                norm,
                mode: RunMode::Verify,
                out: cfg.out.join(format!("run{i:02}_{norm}")),
                ..cfg.clone()
            };
            let spec = run_cfg.problem()?;
            let rep = solve(&run_cfg, &spec)?;
            let (mut files, structure) = write_solution(&run_cfg.out, &run_cfg, &spec, &rep)?;
            let cert = certify(&run_cfg, &spec, &rep)?;
            let p = run_cfg.out.join("certificate.json");
            io::write_json(&p, &cert)?;
            files.push(p);
            let f = objective::eval_f(&spec, &rep.u)?;
            let tv = objective::eval_tv(&spec.grid, &rep.u, norm);
            Ok((
                SweepRow {
                    alpha,
                    norm,
                    j: f + alpha * tv,
                    f,
                    tv,
                    plateau_count: structure.plateau_count,
                    coverage5: structure.coverage(5),
                    residual: cert.residual,
                    residual_relative: cert.residual_relative,
                    converged: rep.converged,
                },
                files,
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::from("alpha,norm,j,f,tv,plateau_count,coverage5,residual,residual_relative,converged\n");
    let mut files = Vec::new();
    let mut converged = true;
    for (r, f) in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            io::format_f64(r.alpha),
            r.norm,
            io::format_f64(r.j),
            io::format_f64(r.f),
            io::format_f64(r.tv),
            r.plateau_count,
            io::format_f64(r.coverage5),
            io::format_f64(r.residual),
            io::format_f64(r.residual_relative),
            r.converged
        ));
        converged &= r.converged;
        files.extend(f);
    }
    let p = cfg.out.join("sweep.csv");
    fs::write(&p, text).map_err(|source| CliError::OutputDir { path: p.clone(), source })?;
    files.push(p);
    Ok(RunOutcome { converged, files })
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (mode, common) = match cli.verb {
        Verb::Solve(c) => (RunMode::Solve, c),
        Verb::Verify(c) => (RunMode::Verify, c),
        Verb::Soc(c) => (RunMode::Soc, c),
        Verb::Sweep(c) => (RunMode::Sweep, c),
    };
    let level = if common.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    let mut cfg = match RunConfig::from_file(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    cfg.mode = mode;
    if let Some(out) = common.out {
        cfg.out = out;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match run(&cfg) {
        Ok(outcome) => {
            if !common.quiet {
                for f in &outcome.files {
                    println!("{}", f.display());
                }
            }
            if !outcome.converged {
                eprintln!("warning: the solver did not reach its tolerance in every stage");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
