//! Limited-memory BFGS for the smoothed subproblem, with the banded
//! regularizer operator of the current iterate as the initial inverse Hessian.

use std::collections::VecDeque;

use super::{evaluate, preconditioner, InnerOptions, InnerStats, SolverError, SubproblemResult};
use crate::grid::ControlField;
use crate::linalg;
use crate::objective::ProblemSpec;

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
    let (_, mut h0) = preconditioner(spec, eps, delta, &cur.grad_u)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
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
    let max_iter = opts.max_iter.saturating_mul(10);
    for it in 0..=max_iter {
        let gn = g.norm_omega(&cur.grad);
        let tol = opts.gtol_rel * (1.0 + cur.value.abs());
        stats.iterations = it;
        stats.grad_norm = gn;
        stats.tolerance = tol;
        if gn <= tol {
            stats.converged = true;
            break;
        }
        if it == max_iter {
            break;
        }
        // two-loop recursion
        let mut q = cur.grad.values.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * linalg::dot(s, &q);
            linalg::axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let mut r = h0.solve(&q);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * linalg::dot(y, &r);
            linalg::axpy(a - b, s, &mut r);
        }
        let mut dir = ControlField::from_vec(r.iter().map(|v| -v).collect());
        let mut slope = linalg::dot(&cur.grad.values, &dir.values);
        if !(slope < 0.0) {
            hist.clear();
            dir = ControlField::from_vec(h0.solve(&cur.grad.values).iter().map(|v| -v).collect());
            slope = linalg::dot(&cur.grad.values, &dir.values);
        }
        let noise = 64.0 * f64::EPSILON * (cur.value.abs() + cur.point.f_value.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for bt in 0..MAX_BACKTRACK {
            let trial = cur.point.u.add_scaled(t, &dir);
            if let Ok(next) = evaluate(spec, eps, delta, &trial, Some(&cur.point.y)) {
                let dec = g.cell_weight() * ARMIJO * t * slope;
                if next.value <= cur.value + dec && next.value <= cur.value {
                    accepted = Some((next, bt, false));
                    break;
                }
                if (g.cell_weight() * t * slope).abs() <= noise
                    && next.value <= cur.value + noise
                    && g.norm_omega(&next.grad) < gn
                {
                    let rose = next.value > cur.value;
                    accepted = Some((next, bt, rose));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, bt, rose)) = accepted else {
            stats.stalled = true;
            break;
        };
        stats.backtracks += bt;
        stats.monotone &= !rose;
        // the Huber curvature changes fast where |grad u| crosses delta, so
        // H0 follows the iterate
        h0 = preconditioner(spec, eps, delta, &next.grad_u)?.1;
        let s: Vec<f64> = next.point.u.values.iter().zip(&cur.point.u.values).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.values.iter().zip(&cur.grad.values).map(|(a, b)| a - b).collect();
        let sy = linalg::dot(&s, &y);
        if sy > 1e-12 * linalg::norm2(&s) * linalg::norm2(&y) {
            if hist.len() == opts.memory.max(1) {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        cur = next;
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
