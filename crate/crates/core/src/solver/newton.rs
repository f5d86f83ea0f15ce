//! Truncated Newton iteration for the smoothed subproblem.
//!
//! Hessian-vector products of `F` are exact (two solves with the factored
//! state operator each). The Huber part uses a primal-dual curvature: a
//! separate dual estimate is carried along and updated by its own linearized
//! equation, which avoids the overlong steps that the exact Huber Hessian
//! (flat along `grad u` on saturated cells) produces far from a solution.
//! The inner conjugate-gradient loop is preconditioned by the banded operator
//! `c I - div((alpha W + eps I) grad)` and stops early on negative
//! curvature. Steps are globalized by Armijo backtracking on `J_{eps,delta}`.

use log::trace;

use super::{evaluate, preconditioner_for, InnerOptions, InnerStats, SmoothedEval, SolverError, SubproblemResult};
use super::RegularizerCurvature;
use crate::grid::{ControlField, GradField};
use crate::linalg;
use crate::norm::NormChoice;
use crate::objective::{HuberCurvature, ProblemSpec};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

pub(super) fn solve(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    u_init: &ControlField,
    opts: &InnerOptions,
) -> Result<SubproblemResult, SolverError> {
    let g = &spec.grid;
    let mut cur = evaluate(spec, eps, delta, u_init, None)?;
    let first_norm = g.norm_omega(&cur.grad).max(f64::MIN_POSITIVE);
    let mut dual = cur.lambda.clone();
    let mut t_prev = 1.0f64;
    let mut stats = InnerStats {
        iterations: 0,
        cg_iterations: 0,
        backtracks: 0,
        grad_norm: 0.0,
        tolerance: 0.0,
        converged: false,
        stalled: false,
        monotone: true,
    };
    for it in 0..=opts.max_iter {
        let gn = g.norm_omega(&cur.grad);
        let tol = opts.gtol_rel * (1.0 + cur.value.abs());
        stats.iterations = it;
        stats.grad_norm = gn;
        stats.tolerance = tol;
        if gn <= tol {
            stats.converged = true;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        let (step, cg) = newton_direction(spec, eps, delta, &cur, &dual, gn / first_norm, opts.max_cg)?;
        stats.cg_iterations += cg;
        match line_search(spec, eps, delta, &cur, step, gn, (4.0 * t_prev).min(1.0))? {
            Some((next, backtracks, increased, t)) => {
                t_prev = t;
                stats.backtracks += backtracks;
                stats.monotone &= !increased;
                trace!(
                    "newton {it}: J={:.12e} |g|={gn:.3e} cg={cg} bt={backtracks}",
                    next.value
                );
                let ds = g.gradient(&next.point.u.add_scaled(-1.0, &cur.point.u));
                dual = dual_update(&cur.grad_u, &dual, &ds, spec.norm, delta);
                cur = next;
            }
            None => {
                stats.stalled = true;
                break;
            }
        }
    }
    Ok(SubproblemResult {
        u: cur.point.u.clone(),
        lambda: cur.lambda,
        y: cur.point.y,
        phi: cur.point.phi,
        objective: cur.value,
        stats,
    })
}

/// Approximate solution of `H d = -grad` by preconditioned CG with
/// Steihaug's negative-curvature exit.
fn newton_direction(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    cur: &SmoothedEval,
    dual: &GradField,
    progress: f64,
    max_cg: usize,
) -> Result<(ControlField, usize), SolverError> {
    let g = &spec.grid;
    let w = HuberCurvature::primal_dual(&cur.grad_u, dual, spec.norm, delta);
    let (curv, q) = preconditioner_for(spec, RegularizerCurvature::from_huber(spec, eps, w))?;
    let m = g.omega_len();
    let forcing = progress.sqrt().min(0.1);
    let mut r: Vec<f64> = cur.grad.values.iter().map(|v| -v).collect();
    let rhs_norm = linalg::norm2(&r);
    let mut z = q.solve(&r);
    let mut p = ControlField::from_vec(z.clone());
    let mut d = vec![0.0; m];
    let mut rz = linalg::dot(&r, &z);
    let mut iters = 0;
    while iters < max_cg {
        let hp = cur.point.hess_vec(spec, &p)?.add_scaled(1.0, &curv.apply(g, &p));
        let php = linalg::dot(&p.values, &hp.values);
        iters += 1;
        if !(php > 0.0) {
            if iters == 1 {
                // preconditioned steepest descent
                d.copy_from_slice(&p.values);
            }
            break;
        }
        let a = rz / php;
        linalg::axpy(a, &p.values, &mut d);
        linalg::axpy(-a, &hp.values, &mut r);
        if linalg::norm2(&r) <= forcing * rhs_norm {
            break;
        }
        z = q.solve(&r);
        let rz_new = linalg::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p.values[i] = z[i] + beta * p.values[i];
        }
    }
    Ok((ControlField::from_vec(d), iters))
}

/// Linearized update of the dual estimate after the primal gradient moved
/// from `g` by `dg`, projected back onto the dual unit ball.
fn dual_update(g: &GradField, lam: &GradField, dg: &GradField, norm: NormChoice, delta: f64) -> GradField {
    let mut out = GradField::zeros(g.len());
    for c in 0..g.len() {
        let [gx, gy] = g.at(c);
        let [lx, ly] = lam.at(c);
        let [dx, dy] = dg.at(c);
        match norm {
            NormChoice::L2 => {
                let r = gx.hypot(gy);
                let (mut nx, mut ny) = if r <= delta {
                    ((gx + dx) / delta, (gy + dy) / delta)
                } else {
                    let (ex, ey) = (gx / r, gy / r);
                    let ed = ex * dx + ey * dy;
                    (ex + (dx - lx * ed) / r, ey + (dy - ly * ed) / r)
                };
                let s = nx.hypot(ny);
                if s > 1.0 {
                    nx /= s;
                    ny /= s;
                }
                out.gx[c] = nx;
                out.gy[c] = ny;
            }
            NormChoice::LInf => {
                let comp = |d: f64, l: f64, dd: f64| {
                    let v = if d.abs() <= delta {
                        (d + dd) / delta
                    } else {
                        d.signum() + (1.0 - l * d.signum()) * dd / d.abs()
                    };
                    v.clamp(-1.0, 1.0)
                };
                out.gx[c] = comp(gx, lx, dx);
                out.gy[c] = comp(gy, ly, dy);
            }
        }
    }
    out
}

/// Backtracking along `step`. Returns the accepted point, the number of
/// halvings, and whether `J` rose (within rounding) at the accepted point.
fn line_search(
    spec: &ProblemSpec,
    eps: f64,
    delta: f64,
    cur: &SmoothedEval,
    mut step: ControlField,
    gn: f64,
    t0: f64,
) -> Result<Option<(SmoothedEval, usize, bool, f64)>, SolverError> {
    let g = &spec.grid;
    let mut slope = g.dot_omega(&cur.grad, &step);
    if !(slope < 0.0) {
        step = cur.grad.scaled(-1.0);
        slope = -gn * gn;
    }
    // below this predicted change, differences of J are rounding noise
    let noise = 64.0 * f64::EPSILON * (cur.value.abs() + cur.point.f_value.abs());
    // first-order prediction of the state along the ray as Newton guess
    let dy = cur.point.linearized(spec, &step)?;
    let mut t = t0;
    for bt in 0..MAX_BACKTRACK {
        let mut next_t = 0.5 * t;
        let trial_u = cur.point.u.add_scaled(t, &step);
        let mut warm = cur.point.y.clone();
        linalg::axpy(t, &dy.values, &mut warm.values);
        match evaluate(spec, eps, delta, &trial_u, Some(&warm)) {
            Ok(next) => {
                let armijo = next.value <= cur.value + ARMIJO * t * slope;
                if armijo && next.value <= cur.value {
                    return Ok(Some((next, bt, false, t)));
                }
                if (t * slope).abs() <= noise
                    && next.value <= cur.value + noise
                    && g.norm_omega(&next.grad) < gn
                {
                    let rose = next.value > cur.value;
                    return Ok(Some((next, bt, rose, t)));
                }
                // minimizer of the quadratic through J(0), J'(0) and J(t)
                let curv = next.value - cur.value - t * slope;
                if curv > 0.0 {
                    next_t = (-0.5 * slope * t * t / curv).clamp(0.1 * t, 0.5 * t);
                }
            }
            // a state solve can fail for a wild trial step; shorten it
            Err(SolverError::Objective(crate::objective::ObjectiveError::State(_))) if bt + 1 < MAX_BACKTRACK => {}
            Err(e) => return Err(e),
        }
        t = next_t;
    }
    Ok(None)
}
