//! Semilinear state equation `-Delta y + f(x, y) = u chi_omega`, its
//! linearizations and the adjoint equation.
//!
//! All linear systems share the operator `-Delta_h + diag f_y(y_u)`, which is
//! symmetric positive definite because `f_y >= 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ControlField, Grid, ScalarField};
use crate::linalg::{self, BandCholesky, LinalgError, ShiftedLaplacian};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),
    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("field has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linear(#[from] LinalgError),
}

/// `f(x, y) = c0(x) y + a y^3 + d0(x)`
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    pub c0: ScalarField,
    pub a: f64,
    pub d0: ScalarField,
}

impl Nonlinearity {
    pub fn constant(grid: &Grid, c0: f64, a: f64, d0: f64) -> Self {
        let n = grid.domain_len();
        Nonlinearity {
            c0: ScalarField::from_vec(vec![c0; n]),
            a,
            d0: ScalarField::from_vec(vec![d0; n]),
        }
    }

    /// `f = c0 y + d0`
    pub fn affine(grid: &Grid, c0: f64, d0: f64) -> Self {
        Self::constant(grid, c0, 0.0, d0)
    }

    pub fn is_affine(&self) -> bool {
        self.a == 0.0
    }

    /// Checks monotonicity (`c0 >= 0`, `a >= 0`), finiteness and sizes.
    pub fn validate(&self, grid: &Grid) -> Result<(), StateError> {
        let n = grid.domain_len();
        for field in [&self.c0, &self.d0] {
            if field.len() != n {
                return Err(StateError::LengthMismatch {
                    expected: n,
                    got: field.len(),
                });
            }
        }
        if !self.a.is_finite() || self.a < 0.0 {
            return Err(StateError::InvalidNonlinearity(format!(
                "cubic coefficient must be finite and >= 0 (got {})",
                self.a
            )));
        }
        if let Some(k) = self.c0.values.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(StateError::InvalidNonlinearity(format!(
                "linear coefficient must be finite and >= 0 (c0 = {} at node {k})",
                self.c0.values[k]
            )));
        }
        if self.d0.values.iter().any(|d| !d.is_finite()) {
            return Err(StateError::InvalidNonlinearity(
                "offset d0 must be finite".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn f(&self, k: usize, y: f64) -> f64 {
        self.c0.values[k] * y + self.a * y * y * y + self.d0.values[k]
    }

    #[inline]
    pub fn f_y(&self, k: usize, y: f64) -> f64 {
        self.c0.values[k] + 3.0 * self.a * y * y
    }

    #[inline]
    pub fn f_yy(&self, y: f64) -> f64 {
        6.0 * self.a * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Banded Cholesky up to 128 x 128 nodes, conjugate gradients above.
    Auto,
    Cg,
    Direct,
}

impl std::str::FromStr for LinearSolver {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(LinearSolver::Auto),
            "cg" => Ok(LinearSolver::Cg),
            "direct" | "cholesky" => Ok(LinearSolver::Direct),
            o => Err(format!("unknown linear solver '{o}' (expected auto, cg or direct)")),
        }
    }
}

const AUTO_DIRECT_MAX_N: usize = 128;
/// Reuse a factor while the shifts differ by at most this fraction of the
/// smallest Laplacian eigenvalue.
const REUSE_FRACTION: f64 = 0.05;
const MAX_REFINE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateOptions {
    /// Newton stops once the residual is below `tol * max(1, ||rhs||)`
    /// or at the rounding floor of the discrete operator.
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub cg_rtol: f64,
    pub cg_max_iter: usize,
    pub linear_solver: LinearSolver,
}

impl Default for StateOptions {
    fn default() -> Self {
        StateOptions {
            tol: 1e-12,
            max_newton: 50,
            max_halvings: 30,
            cg_rtol: 1e-12,
            cg_max_iter: 20_000,
            linear_solver: LinearSolver::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSolution {
    pub y: ScalarField,
    /// Number of residual evaluations in the Newton loop, so an exact initial
    /// guess counts as one iteration.
    pub newton_iters: usize,
    /// `L^2_h` norm of `-Delta_h y + f(y) - u chi_omega`.
    pub residual_norm: f64,
}

/// `-Delta_h + diag f_y(y_u)` with a cached factorization.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    op: ShiftedLaplacian,
    factor: Option<BandCholesky>,
    /// The factor belongs to a nearby shift; solves are refined against `op`.
    stale: bool,
    jacobi: Vec<f64>,
    opts: StateOptions,
    f_yy: Vec<f64>,
    h: f64,
}

impl LinearizedOperator {
    pub fn new(grid: &Grid, y_u: &ScalarField, f: &Nonlinearity, opts: &StateOptions) -> Result<Self, StateError> {
        let shift: Vec<f64> = y_u
            .values
            .iter()
            .enumerate()
            .map(|(k, y)| f.f_y(k, *y))
            .collect();
        let f_yy = y_u.values.iter().map(|y| f.f_yy(*y)).collect();
        Self::from_shift(grid, shift, f_yy, opts)
    }

    /// Like [`LinearizedOperator::new`], but keeps `near`, a factorization
    /// for the shift `near_shift`, when the shifts are close enough for
    /// iterative refinement to contract quickly.
    pub(crate) fn reusing(
        grid: &Grid,
        y_u: &ScalarField,
        f: &Nonlinearity,
        opts: &StateOptions,
        near: Option<(Vec<f64>, BandCholesky)>,
    ) -> Result<Self, StateError> {
        let Some((near_shift, factor)) = near else {
            return Self::new(grid, y_u, f, opts);
        };
        let shift: Vec<f64> = y_u
            .values
            .iter()
            .enumerate()
            .map(|(k, y)| f.f_y(k, *y))
            .collect();
        let gap = shift
            .iter()
            .zip(&near_shift)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let h = grid.h();
        // smallest eigenvalue of -Delta_h bounds the refinement contraction
        let lam1 = 8.0 / (h * h) * (0.5 * std::f64::consts::PI * h).sin().powi(2);
        if gap > REUSE_FRACTION * lam1 {
            return Self::new(grid, y_u, f, opts);
        }
        let f_yy = y_u.values.iter().map(|y| f.f_yy(*y)).collect();
        let op = ShiftedLaplacian::new(grid.n(), h, shift);
        let jacobi = op.diagonal();
        Ok(LinearizedOperator {
            op,
            factor: Some(factor),
            stale: gap > 0.0,
            jacobi,
            opts: *opts,
            f_yy,
            h,
        })
    }

    fn from_shift(grid: &Grid, shift: Vec<f64>, f_yy: Vec<f64>, opts: &StateOptions) -> Result<Self, StateError> {
        let n = grid.n();
        let op = ShiftedLaplacian::new(n, grid.h(), shift);
        let direct = match opts.linear_solver {
            LinearSolver::Direct => true,
            LinearSolver::Cg => false,
            LinearSolver::Auto => n <= AUTO_DIRECT_MAX_N,
        };
        let factor = if direct {
            Some(op.assemble().cholesky()?)
        } else {
            None
        };
        let jacobi = op.diagonal();
        Ok(LinearizedOperator {
            op,
            factor,
            stale: false,
            jacobi,
            opts: *opts,
            f_yy,
            h: grid.h(),
        })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply(x, out);
    }

    /// `f_yy(y_u)` per node.
    pub fn f_yy(&self) -> &[f64] {
        &self.f_yy
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, StateError> {
        match &self.factor {
            Some(f) => {
                let mut x = f.solve(rhs);
                if self.stale {
                    self.refine(f, rhs, &mut x);
                }
                if x.iter().all(|v| v.is_finite()) {
                    Ok(x)
                } else {
                    Err(LinalgError::NonFinite.into())
                }
            }
            None => {
                let mut x = vec![0.0; rhs.len()];
                let d = &self.jacobi;
                linalg::pcg(
                    |v, o| self.op.apply(v, o),
                    |r, z| {
                        for i in 0..r.len() {
                            z[i] = r[i] / d[i];
                        }
                    },
                    rhs,
                    &mut x,
                    self.opts.cg_rtol,
                    self.opts.cg_max_iter,
                )?;
                Ok(x)
            }
        }
    }

    /// Iterative refinement with a factor of a nearby operator, until the
    /// residual stops shrinking.
    fn refine(&self, f: &BandCholesky, rhs: &[f64], x: &mut [f64]) {
        let mut r = vec![0.0; rhs.len()];
        let mut prev = f64::INFINITY;
        let bn = linalg::norm2(rhs);
        for _ in 0..MAX_REFINE {
            self.op.apply(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let rn = linalg::norm2(&r);
            if rn <= f64::EPSILON * bn || rn > 0.5 * prev {
                break;
            }
            prev = rn;
            f.solve_in_place(&mut r);
            linalg::axpy(1.0, &r, x);
        }
    }

    /// `z_v`: solves `A z = v chi_omega`.
    pub fn linearized(&self, grid: &Grid, v: &ControlField) -> Result<ScalarField, StateError> {
        Ok(ScalarField::from_vec(self.solve(&grid.extend(v).values)?))
    }

    /// `z_vw`: solves `A z = -f_yy(y_u) z_v z_w`.
    pub fn second_linearized(&self, z_v: &ScalarField, z_w: &ScalarField) -> Result<ScalarField, StateError> {
        let rhs: Vec<f64> = (0..self.f_yy.len())
            .map(|k| -self.f_yy[k] * z_v.values[k] * z_w.values[k])
            .collect();
        Ok(ScalarField::from_vec(self.solve(&rhs)?))
    }

    /// `phi_u`: solves `A phi = y_u - y_d`.
    pub fn adjoint(&self, y_u: &ScalarField, y_d: &ScalarField) -> Result<ScalarField, StateError> {
        let rhs: Vec<f64> = y_u.values.iter().zip(&y_d.values).map(|(a, b)| a - b).collect();
        Ok(ScalarField::from_vec(self.solve(&rhs)?))
    }

    /// Mesh width of the underlying grid.
    pub fn h(&self) -> f64 {
        self.h
    }
}

fn residual(grid: &Grid, f: &Nonlinearity, lap: &ShiftedLaplacian, y: &[f64], rhs: &[f64], out: &mut [f64]) -> f64 {
    lap.apply(y, out);
    for k in 0..y.len() {
        out[k] += f.f(k, y[k]) - rhs[k];
    }
    grid.h() * linalg::norm2(out)
}

/// Newton's method for the state equation from the initial guess `y0`
/// (zero when `None`).
pub fn solve_state_from(
    grid: &Grid,
    u: &ControlField,
    f: &Nonlinearity,
    opts: &StateOptions,
    y0: Option<&ScalarField>,
) -> Result<StateSolution, StateError> {
    solve_state_keeping_factor(grid, u, f, opts, y0).map(|(s, _)| s)
}

/// Newton solve that also hands back the last Jacobian factorization and its
/// shift, when one was computed by a direct solver.
pub(crate) fn solve_state_keeping_factor(
    grid: &Grid,
    u: &ControlField,
    f: &Nonlinearity,
    opts: &StateOptions,
    y0: Option<&ScalarField>,
) -> Result<(StateSolution, Option<(Vec<f64>, BandCholesky)>), StateError> {
    f.validate(grid)?;
    if u.len() != grid.omega_len() {
        return Err(StateError::LengthMismatch {
            expected: grid.omega_len(),
            got: u.len(),
        });
    }
    let nn = grid.domain_len();
    let n = grid.n();
    let h = grid.h();
    let rhs = grid.extend(u).values;
    let lap = ShiftedLaplacian::new(n, h, vec![0.0; nn]);
    let mut y = match y0 {
        Some(y0) if y0.len() == nn => y0.values.clone(),
        _ => vec![0.0; nn],
    };
    let mut r = vec![0.0; nn];
    let mut res = residual(grid, f, &lap, &y, &rhs, &mut r);
    let source: Vec<f64> = (0..nn).map(|k| rhs[k] - f.d0.values[k]).collect();
    let scale = (h * linalg::norm2(&source)).max(1.0);
    let mut trial = vec![0.0; nn];
    let mut r_trial = vec![0.0; nn];
    let mut last = None;
    for it in 1..=opts.max_newton {
        if !res.is_finite() {
            return Err(StateError::NonConvergence { iters: it, residual: res });
        }
        // rounding floor of the discrete residual at the current iterate
        let ymax = linalg::max_abs(&y);
        let floor = 64.0 * f64::EPSILON * (8.0 / (h * h) * ymax + f.a * ymax.powi(3) + 1.0) * scale;
        if res <= opts.tol * scale || res <= floor {
            let sol = StateSolution {
                y: ScalarField::from_vec(y),
                newton_iters: it,
                residual_norm: res,
            };
            return Ok((sol, last));
        }
        let shift: Vec<f64> = (0..nn).map(|k| f.f_y(k, y[k])).collect();
        let jac = LinearizedOperator::from_shift(grid, shift, Vec::new(), opts)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = jac.solve(&neg)?;
        last = jac.factor.map(|fac| (jac.op.shift, fac));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            for k in 0..nn {
                trial[k] = y[k] + t * step[k];
            }
            let rt = residual(grid, f, &lap, &trial, &rhs, &mut r_trial);
            if rt < res {
                std::mem::swap(&mut y, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                res = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(StateError::NonConvergence { iters: it, residual: res });
        }
    }
    Err(StateError::NonConvergence {
        iters: opts.max_newton,
        residual: res,
    })
}

/// `S(u)`: solves the state equation starting from `y = 0`.
pub fn solve_state(grid: &Grid, u: &ControlField, f: &Nonlinearity, opts: &StateOptions) -> Result<StateSolution, StateError> {
    solve_state_from(grid, u, f, opts, None)
}

pub fn solve_linearized(
    grid: &Grid,
    y_u: &ScalarField,
    v: &ControlField,
    f: &Nonlinearity,
    opts: &StateOptions,
) -> Result<ScalarField, StateError> {
    LinearizedOperator::new(grid, y_u, f, opts)?.linearized(grid, v)
}

pub fn solve_second_linearized(
    grid: &Grid,
    y_u: &ScalarField,
    z_v: &ScalarField,
    z_w: &ScalarField,
    f: &Nonlinearity,
    opts: &StateOptions,
) -> Result<ScalarField, StateError> {
    LinearizedOperator::new(grid, y_u, f, opts)?.second_linearized(z_v, z_w)
}

pub fn solve_adjoint(
    grid: &Grid,
    y_u: &ScalarField,
    y_d: &ScalarField,
    f: &Nonlinearity,
    opts: &StateOptions,
) -> Result<ScalarField, StateError> {
    LinearizedOperator::new(grid, y_u, f, opts)?.adjoint(y_u, y_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Window};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        build_grid(n, n, Window::square(0.2, 0.8)).unwrap()
    }

    fn random_control(g: &Grid, seed: u64) -> ControlField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ControlField::from_vec((0..g.omega_len()).map(|_| rng.gen_range(-5.0..5.0)).collect())
    }

    #[test]
    fn zero_control_zero_state_one_iteration() {
        let g = grid(15);
        let f = Nonlinearity::constant(&g, 1.0, 1.0, 0.0);
        let s = solve_state(&g, &ControlField::zeros(g.omega_len()), &f, &StateOptions::default()).unwrap();
        assert_eq!(s.newton_iters, 1);
        assert!(s.y.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_decreasing_nonlinearity() {
        let g = grid(7);
        let f = Nonlinearity::constant(&g, -1.0, 0.0, 0.0);
        assert!(matches!(
            solve_state(&g, &ControlField::zeros(g.omega_len()), &f, &StateOptions::default()),
            Err(StateError::InvalidNonlinearity(_))
        ));
        let f = Nonlinearity::constant(&g, 0.0, -0.5, 0.0);
        assert!(f.validate(&g).is_err());
    }

    #[test]
    fn cg_and_direct_agree() {
        let g = grid(20);
        let u = random_control(&g, 1);
        let f = Nonlinearity::constant(&g, 0.5, 2.0, 0.1);
        let a = solve_state(&g, &u, &f, &StateOptions { linear_solver: LinearSolver::Direct, ..Default::default() }).unwrap();
        let b = solve_state(&g, &u, &f, &StateOptions { linear_solver: LinearSolver::Cg, ..Default::default() }).unwrap();
        let err = a.y.values.iter().zip(&b.y.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10 * a.y.max_abs().max(1.0), "{err}");
    }

    #[test]
    fn large_control_needs_damping_and_converges() {
        let g = grid(15);
        let u = ControlField::constant(g.omega_len(), 1e4);
        let f = Nonlinearity::constant(&g, 0.0, 1.0, 0.0);
        let s = solve_state(&g, &u, &f, &StateOptions::default()).unwrap();
        assert!(s.residual_norm <= 1e-8 * 1e4);
        assert!(s.y.max_abs().is_finite());
    }

    #[test]
    fn operators_are_shared_and_symmetric() {
        let g = grid(9);
        let u = random_control(&g, 2);
        let f = Nonlinearity::constant(&g, 1.0, 1.0, 0.0);
        let opts = StateOptions::default();
        let y = solve_state(&g, &u, &f, &opts).unwrap().y;
        let op = LinearizedOperator::new(&g, &y, &f, &opts).unwrap();
        let m = op.op.assemble();
        for i in 0..g.domain_len() {
            for j in 0..g.domain_len() {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }
}
