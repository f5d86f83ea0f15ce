//! Continuation solver for the smoothed problems
//! `min J_{eps,delta}(u) = F(u) + alpha TV_delta(u) + eps/2 ||grad u||^2`
//! with `(eps, delta) -> 0` and warm starts.

mod lbfgs;
mod newton;

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ControlField, GradField, Grid, ScalarField};
use crate::linalg::{BandCholesky, LinalgError, SymBand};
use crate::norm::NormChoice;
use crate::objective::{self, HuberCurvature, ObjectiveError, ProblemSpec, SmoothPoint};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("initial control has {got} values, expected {expected}")]
    BadInitialControl { expected: usize, got: usize },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Linear(#[from] LinalgError),
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: usize,
        #[source]
        source: Box<SolverError>,
        partial: Box<SolveReport>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    /// Truncated Newton with preconditioned conjugate gradients.
    NewtonCg,
    /// Limited-memory BFGS with the TV-curvature preconditioner as `H0`.
    Lbfgs,
}

impl std::str::FromStr for InnerMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "newton-cg" | "newton_cg" | "newton" => Ok(InnerMethod::NewtonCg),
            "lbfgs" | "l-bfgs" => Ok(InnerMethod::Lbfgs),
            o => Err(format!("unknown inner method '{o}' (expected newton-cg or lbfgs)")),
        }
    }
}

/// Inner stopping rule and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub method: InnerMethod,
    /// Stop when `||grad J_{eps,delta}||_{L^2} <= gtol_rel * (1 + |J|)`.
    pub gtol_rel: f64,
    pub max_iter: usize,
    /// Conjugate-gradient cap per Newton step.
    pub max_cg: usize,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            method: InnerMethod::NewtonCg,
            gtol_rel: 1e-8,
            max_iter: 200,
            max_cg: 300,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub eps0: f64,
    pub delta0: f64,
    pub shrink: f64,
    pub stages: usize,
    pub inner: InnerOptions,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        HomotopySchedule {
            eps0: 1e-1,
            delta0: 1e-1,
            shrink: 0.5,
            stages: 12,
            inner: InnerOptions::default(),
        }
    }
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidSchedule(m));
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return bad(format!("eps0 must be positive (got {})", self.eps0));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return bad(format!("delta0 must be positive (got {})", self.delta0));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0,1) (got {})", self.shrink));
        }
        if self.stages == 0 {
            return bad("at least one stage is required".into());
        }
        if !(self.inner.gtol_rel > 0.0) || self.inner.max_iter == 0 {
            return bad("inner tolerance and iteration limit must be positive".into());
        }
        Ok(())
    }

    pub fn eps(&self, k: usize) -> f64 {
        self.eps0 * self.shrink.powi(k as i32)
    }

    pub fn delta(&self, k: usize) -> f64 {
        self.delta0 * self.shrink.powi(k as i32)
    }
}

/// Statistics of one inner solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerStats {
    pub iterations: usize,
    pub cg_iterations: usize,
    pub backtracks: usize,
    pub grad_norm: f64,
    pub tolerance: f64,
    pub converged: bool,
    /// The line search could not decrease `J` any further.
    pub stalled: bool,
    /// `J_{eps,delta}` of the accepted iterates never increased.
    pub monotone: bool,
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub u: ControlField,
    pub lambda: GradField,
    pub y: ScalarField,
    pub phi: ScalarField,
    /// `J_{eps,delta}(u)`
    pub objective: f64,
    pub stats: InnerStats,
}

/// Smoothed objective and its gradient at one control.
#[derive(Debug, Clone)]
pub(crate) struct SmoothedEval {
    pub point: SmoothPoint,
    pub grad_u: GradField,
    pub lambda: GradField,
    pub value: f64,
    pub grad: ControlField,
}

pub(crate) fn evaluate(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    u: &ControlField,
    warm: Option<&ScalarField>,
) -> Result<SmoothedEval, SolverError> {
    let g = &spec.grid;
    let point = SmoothPoint::evaluate(spec, u, warm)?;
    let grad_u = g.gradient(u);
    let lambda = objective::huber_dual(&grad_u, spec.norm, delta);
    let tv_d = objective::huber_tv_of_gradient(g, &grad_u, spec.norm, delta);
    let h1 = g.dot_grad(&grad_u, &grad_u);
    let value = point.f_value + spec.alpha * tv_d + 0.5 * eps * h1;
    // alpha lambda + eps grad u, then one divergence
    let mut flux = GradField::zeros(grad_u.len());
    for c in 0..flux.len() {
        flux.gx[c] = spec.alpha * lambda.gx[c] + eps * grad_u.gx[c];
        flux.gy[c] = spec.alpha * lambda.gy[c] + eps * grad_u.gy[c];
    }
    let div = g.divergence(&flux);
    let grad = ControlField::from_vec(
        point
            .grad
            .values
            .iter()
            .zip(&div.values)
            .map(|(a, b)| a - b)
            .collect(),
    );
    Ok(SmoothedEval {
        point,
        grad_u,
        lambda,
        value,
        grad,
    })
}

/// Per-cell flux weights `alpha W + eps I` of the smoothed regularizers.
pub(crate) struct RegularizerCurvature {
    k: HuberCurvature,
}

impl RegularizerCurvature {
    pub fn new(spec: &ProblemSpec, eps: f64, delta: f64, grad_u: &GradField) -> Self {
        Self::from_huber(spec, eps, HuberCurvature::new(grad_u, spec.norm, delta))
    }

    pub fn from_huber(spec: &ProblemSpec, eps: f64, mut k: HuberCurvature) -> Self {
        for c in 0..k.wxx.len() {
            k.wxx[c] = spec.alpha * k.wxx[c] + eps;
            k.wxy[c] *= spec.alpha;
            k.wyy[c] = spec.alpha * k.wyy[c] + eps;
        }
        RegularizerCurvature { k }
    }

    /// `-div(K grad v)`
    pub fn apply(&self, g: &Grid, v: &ControlField) -> ControlField {
        g.divergence(&self.k.apply(&g.gradient(v))).scaled(-1.0)
    }

    /// Banded matrix of `shift I - div(K grad .)` on the window cells.
    pub fn assemble(&self, g: &Grid, shift: f64) -> SymBand {
        let (mx, my) = g.omega_shape();
        let ih = 1.0 / g.h();
        let mut a = SymBand::zeros(mx * my, mx);
        for b in 0..my {
            for x in 0..mx {
                let c = b * mx + x;
                a.add(c, c, shift);
                // local rows of the two difference operators over (c, c+1, c+mx)
                let mut idx = [c, usize::MAX, usize::MAX];
                let mut dx = [0.0; 3];
                let mut dy = [0.0; 3];
                if x + 1 < mx {
                    idx[1] = c + 1;
                    dx[0] = -ih;
                    dx[1] = ih;
                }
                if b + 1 < my {
                    idx[2] = c + mx;
                    dy[0] = -ih;
                    dy[2] = ih;
                }
                let (kxx, kxy, kyy) = (self.k.wxx[c], self.k.wxy[c], self.k.wyy[c]);
                for p in 0..3 {
                    if idx[p] == usize::MAX {
                        continue;
                    }
                    for q in 0..=p {
                        if idx[q] == usize::MAX {
                            continue;
                        }
                        let v = kxx * dx[p] * dx[q]
                            + kxy * (dx[p] * dy[q] + dy[p] * dx[q])
                            + kyy * dy[p] * dy[q];
                        if v != 0.0 {
                            a.add(idx[p], idx[q], v);
                        }
                    }
                }
            }
        }
        a
    }
}

/// Constant standing in for `F''` in the preconditioner: `gamma` plus a
/// fraction of the squared inverse of the smallest Dirichlet eigenvalue.
pub(crate) fn smooth_part_shift(spec: &ProblemSpec) -> f64 {
    let lam1 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
    spec.gamma + 0.1 / (lam1 * lam1)
}

pub(crate) fn preconditioner(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    grad_u: &GradField,
) -> Result<(RegularizerCurvature, BandCholesky), SolverError> {
    preconditioner_for(spec, RegularizerCurvature::new(spec, eps, delta, grad_u))
}

pub(crate) fn preconditioner_for(
    spec: &ProblemSpec,
    k: RegularizerCurvature,
) -> Result<(RegularizerCurvature, BandCholesky), SolverError> {
    let q = k.assemble(&spec.grid, smooth_part_shift(spec)).cholesky()?;
    Ok((k, q))
}

/// Minimizes `J_{eps,delta}` starting from `u_init`.
pub fn solve_smooth_subproblem(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    u_init: &ControlField,
    opts: &InnerOptions,
) -> Result<SubproblemResult, SolverError> {
    if !(eps >= 0.0) || !(delta > 0.0) {
        return Err(SolverError::InvalidSchedule(format!(
            "need eps >= 0 and delta > 0 (got {eps}, {delta})"
        )));
    }
    if u_init.len() != spec.grid.omega_len() {
        return Err(SolverError::BadInitialControl {
            expected: spec.grid.omega_len(),
            got: u_init.len(),
        });
    }
    match opts.method {
        InnerMethod::NewtonCg => newton::solve(spec, eps, delta, u_init, opts),
        InnerMethod::Lbfgs => lbfgs::solve(spec, eps, delta, u_init, opts),
    }
}

/// Huber dual of `grad u`; the certificate candidate of the smoothed problem.
pub fn dual_from_smoothed(grid: &Grid, u: &ControlField, delta: f64, norm: NormChoice) -> GradField {
    objective::huber_dual(&grid.gradient(u), norm, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub eps: f64,
    pub delta: f64,
    /// `J_{eps,delta}(u_k)`, the minimized objective.
    pub j_smoothed: f64,
    /// `J(u_k) + eps/2 ||grad u_k||^2`
    pub j_eps: f64,
    /// `J(u_k) = F(u_k) + alpha TV(u_k)`
    pub j: f64,
    pub f: f64,
    pub tv: f64,
    /// `eps ||grad u_k||^2`
    pub eps_term: f64,
    pub l2_norm: f64,
    /// `||u_k - u_{k-1}||_{L^2}` (`None` for the first stage)
    pub l2_change: Option<f64>,
    pub inner: InnerStats,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: ControlField,
    pub lambda: GradField,
    pub y: ScalarField,
    pub phi: ScalarField,
    pub stages: Vec<StageRecord>,
    pub schedule: HomotopySchedule,
    pub converged: bool,
    pub elapsed_seconds: f64,
}

impl SolveReport {
    pub fn last(&self) -> Option<&StageRecord> {
        self.stages.last()
    }

    pub fn final_delta(&self) -> f64 {
        self.last().map(|s| s.delta).unwrap_or(self.schedule.delta0)
    }

    pub fn final_eps(&self) -> f64 {
        self.last().map(|s| s.eps).unwrap_or(self.schedule.eps0)
    }
}

/// Runs the continuation from `u0` (zero when `None`).
pub fn homotopy_solve_from(
    spec: &ProblemSpec,
    schedule: &HomotopySchedule,
    u0: Option<&ControlField>,
) -> Result<SolveReport, SolverError> {
    schedule.validate()?;
    let start = Instant::now();
    let g = &spec.grid;
    let mut u = match u0 {
        Some(u0) => {
            if u0.len() != g.omega_len() {
                return Err(SolverError::BadInitialControl {
                    expected: g.omega_len(),
                    got: u0.len(),
                });
            }
            u0.clone()
        }
        None => ControlField::zeros(g.omega_len()),
    };
    let mut report = SolveReport {
        u: u.clone(),
        lambda: GradField::zeros(g.omega_len()),
        y: ScalarField::zeros(g.domain_len()),
        phi: ScalarField::zeros(g.domain_len()),
        stages: Vec::new(),
        schedule: *schedule,
        converged: true,
        elapsed_seconds: 0.0,
    };
    for k in 0..schedule.stages {
        let (eps, delta) = (schedule.eps(k), schedule.delta(k));
        let res = match solve_smooth_subproblem(spec, eps, delta, &u, &schedule.inner) {
            Ok(r) => r,
            Err(e) => {
                report.elapsed_seconds = start.elapsed().as_secs_f64();
                report.converged = false;
                return Err(SolverError::StageFailed {
                    stage: k,
                    source: Box::new(e),
                    partial: Box::new(report),
                });
            }
        };
        let gu = g.gradient(&res.u);
        let tv = objective::tv_of_gradient(g, &gu, spec.norm);
        let f = res.objective - spec.alpha * objective::huber_tv_of_gradient(g, &gu, spec.norm, delta)
            - 0.5 * eps * g.dot_grad(&gu, &gu);
        // recompute F from the state for an exact record
        let f = objective::eval_f(spec, &res.u).unwrap_or(f);
        let h1 = g.dot_grad(&gu, &gu);
        let j = f + spec.alpha * tv;
        let change = if k == 0 {
            None
        } else {
            Some(g.norm_omega(&res.u.add_scaled(-1.0, &u)))
        };
        let rec = StageRecord {
            stage: k,
            eps,
            delta,
            j_smoothed: res.objective,
            j_eps: j + 0.5 * eps * h1,
            j,
            f,
            tv,
            eps_term: eps * h1,
            l2_norm: g.norm_omega(&res.u),
            l2_change: change,
            inner: res.stats.clone(),
        };
        info!(
            "stage {k:2}: eps={eps:.3e} delta={delta:.3e} J={:.10e} TV={:.6e} iters={} |g|={:.2e}{}",
            rec.j,
            rec.tv,
            rec.inner.iterations,
            rec.inner.grad_norm,
            if rec.inner.converged { "" } else { " (not converged)" }
        );
        debug!("stage {k}: {:?}", rec.inner);
        report.converged &= res.stats.converged;
        report.stages.push(rec);
        u = res.u;
        report.u = u.clone();
        report.lambda = res.lambda;
        report.y = res.y;
        report.phi = res.phi;
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn homotopy_solve(spec: &ProblemSpec, schedule: &HomotopySchedule) -> Result<SolveReport, SolverError> {
    homotopy_solve_from(spec, schedule, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Window};
    use crate::state::Nonlinearity;

    #[test]
    fn schedule_values() {
        let s = HomotopySchedule::default();
        assert!(s.validate().is_ok());
        assert_eq!(s.eps(0), 0.1);
        assert!((s.delta(11) - 0.1 / 2048.0).abs() < 1e-18);
        assert!(HomotopySchedule { shrink: 1.0, ..s }.validate().is_err());
        assert!(HomotopySchedule { stages: 0, ..s }.validate().is_err());
    }

    #[test]
    fn assembled_regularizer_matches_operator() {
        let g = build_grid(13, 13, Window::new(0.2, 0.7, 0.3, 0.8)).unwrap();
        let f = Nonlinearity::constant(&g, 0.0, 1.0, 0.0);
        let yd = ScalarField::zeros(g.domain_len());
        for norm in [NormChoice::L2, NormChoice::LInf] {
            let spec = ProblemSpec::new(g.clone(), 0.3, 0.0, 1e-3, yd.clone(), f.clone(), norm).unwrap();
            let u = g.control_from_fn(|x, y| (7.0 * x).sin() + if y > 0.55 { 1.0 } else { 0.0 });
            let k = RegularizerCurvature::new(&spec, 0.01, 0.5, &g.gradient(&u));
            let m = k.assemble(&g, 0.25);
            let v = g.control_from_fn(|x, y| x * y + (3.0 * y).cos());
            let mut mv = vec![0.0; g.omega_len()];
            m.matvec(&v.values, &mut mv);
            let op = k.apply(&g, &v).add_scaled(0.25, &v);
            for (a, b) in mv.iter().zip(&op.values) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} {b}");
            }
        }
    }

    #[test]
    fn dual_of_constant_and_step() {
        let g = build_grid(4, 4, Window::new(0.2, 0.8, 0.35, 0.45)).unwrap();
        let c = ControlField::constant(g.omega_len(), 1.0);
        let l = dual_from_smoothed(&g, &c, 0.1, NormChoice::L2);
        assert!(l.gx.iter().chain(&l.gy).all(|v| *v == 0.0));
        let step = g.control_from_fn(|x, _| if x < 0.5 { 0.0 } else { 1.0 });
        for norm in [NormChoice::L2, NormChoice::LInf] {
            let l = dual_from_smoothed(&g, &step, 0.1, norm);
            assert_eq!(l.at(1), [1.0, 0.0]);
        }
    }
}
