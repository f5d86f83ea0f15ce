//! The smooth part `F`, the total variation `G = TV`, their smoothed
//! surrogates and the discrete directional derivative of `TV`.
//!
//! `F(u) = 1/2 ||y_u - y_d||^2 + beta/2 (int u)^2 + gamma/2 ||u||^2`.
//! Derivatives use the adjoint `phi` and the linearized states `z_v`:
//! `F'(u) = phi|_omega + gamma u + beta int u` and
//! `F''(u)(v,w) = int (1 - phi f_yy) z_v z_w + gamma <v,w> + beta int v int w`.

use thiserror::Error;

use crate::grid::{ControlField, GradField, Grid, ScalarField};
use crate::norm::NormChoice;
use crate::state::{self, LinearizedOperator, Nonlinearity, StateError, StateOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error(
        "existence condition violated: a cubic nonlinearity (f_y grows like |y|^2) requires beta + gamma > 0"
    )]
    ExistenceCondition,
    #[error("smoothing parameter must be positive (got {0})")]
    NonPositiveDelta(f64),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Everything that defines one instance of the control problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub y_d: ScalarField,
    pub f: Nonlinearity,
    pub norm: NormChoice,
    pub state: StateOptions,
}

impl ProblemSpec {
    /// Builds and validates a problem.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid,
        alpha: f64,
        beta: f64,
        gamma: f64,
        y_d: ScalarField,
        f: Nonlinearity,
        norm: NormChoice,
    ) -> Result<Self, ObjectiveError> {
        let spec = ProblemSpec {
            grid,
            alpha,
            beta,
            gamma,
            y_d,
            f,
            norm,
            state: StateOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Range checks plus the existence condition: either `beta + gamma > 0`
    /// or `f_y` grows slower than `|y|^2` (true for affine `f`).
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(ObjectiveError::InvalidSpec(format!(
                "alpha must be positive (got {})",
                self.alpha
            )));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ObjectiveError::InvalidSpec(format!(
                    "{name} must be finite and >= 0 (got {v})"
                )));
            }
        }
        if self.y_d.len() != self.grid.domain_len() {
            return Err(ObjectiveError::InvalidSpec(format!(
                "target has {} values, grid has {} nodes",
                self.y_d.len(),
                self.grid.domain_len()
            )));
        }
        if self.y_d.values.iter().any(|v| !v.is_finite()) {
            return Err(ObjectiveError::InvalidSpec("target has non-finite values".into()));
        }
        self.f.validate(&self.grid)?;
        if !self.f.is_affine() && self.beta + self.gamma == 0.0 {
            return Err(ObjectiveError::ExistenceCondition);
        }
        Ok(())
    }
}

/// State, adjoint and derivative information of `F` at one control.
#[derive(Debug, Clone)]
pub struct SmoothPoint {
    pub u: ControlField,
    pub y: ScalarField,
    pub phi: ScalarField,
    pub f_value: f64,
    /// `L^2(omega)` representative of `F'(u)`.
    pub grad: ControlField,
    pub newton_iters: usize,
    op: LinearizedOperator,
    /// `1 - phi f_yy(y)` per node.
    weight: Vec<f64>,
}

impl SmoothPoint {
    pub fn evaluate(spec: &ProblemSpec, u: &ControlField, warm: Option<&ScalarField>) -> Result<Self, ObjectiveError> {
        let g = &spec.grid;
        let (sol, near) = state::solve_state_keeping_factor(g, u, &spec.f, &spec.state, warm)?;
        let y = sol.y;
        let op = LinearizedOperator::reusing(g, &y, &spec.f, &spec.state, near)?;
        let phi = op.adjoint(&y, &spec.y_d)?;
        let f_value = f_from_state(spec, u, &y);
        let int_u = g.integral(u);
        let pr = g.restrict(&phi);
        let grad = ControlField::from_vec(
            pr.values
                .iter()
                .zip(&u.values)
                .map(|(p, uc)| p + spec.gamma * uc + spec.beta * int_u)
                .collect(),
        );
        let weight = phi
            .values
            .iter()
            .zip(op.f_yy())
            .map(|(p, fyy)| 1.0 - p * fyy)
            .collect();
        Ok(SmoothPoint {
            u: u.clone(),
            y,
            phi,
            f_value,
            grad,
            newton_iters: sol.newton_iters,
            op,
            weight,
        })
    }

    /// `z_v`
    pub fn linearized(&self, spec: &ProblemSpec, v: &ControlField) -> Result<ScalarField, ObjectiveError> {
        Ok(self.op.linearized(&spec.grid, v)?)
    }

    /// `F''(u)(v,w)`
    pub fn hess_bilinear(&self, spec: &ProblemSpec, v: &ControlField, w: &ControlField) -> Result<f64, ObjectiveError> {
        let zv = self.linearized(spec, v)?;
        let zw = self.linearized(spec, w)?;
        Ok(self.hess_bilinear_with(spec, v, w, &zv, &zw))
    }

    /// `F''(u)(v,w)` from precomputed `z_v`, `z_w`.
    pub fn hess_bilinear_with(
        &self,
        spec: &ProblemSpec,
        v: &ControlField,
        w: &ControlField,
        zv: &ScalarField,
        zw: &ScalarField,
    ) -> f64 {
        let g = &spec.grid;
        let s: f64 = (0..zv.len())
            .map(|k| self.weight[k] * zv.values[k] * zw.values[k])
            .sum();
        g.cell_weight() * s + spec.gamma * g.dot_omega(v, w) + spec.beta * g.integral(v) * g.integral(w)
    }

    /// `L^2(omega)` representative of `F''(u) v`.
    pub fn hess_vec(&self, spec: &ProblemSpec, v: &ControlField) -> Result<ControlField, ObjectiveError> {
        let g = &spec.grid;
        let z = self.op.linearized(g, v)?;
        let rhs: Vec<f64> = z.values.iter().zip(&self.weight).map(|(a, b)| a * b).collect();
        let p = ScalarField::from_vec(self.op.solve(&rhs)?);
        let int_v = g.integral(v);
        let pr = g.restrict(&p);
        Ok(ControlField::from_vec(
            pr.values
                .iter()
                .zip(&v.values)
                .map(|(a, b)| a + spec.gamma * b + spec.beta * int_v)
                .collect(),
        ))
    }
}

fn f_from_state(spec: &ProblemSpec, u: &ControlField, y: &ScalarField) -> f64 {
    let g = &spec.grid;
    let misfit: f64 = y
        .values
        .iter()
        .zip(&spec.y_d.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let int_u = g.integral(u);
    0.5 * g.cell_weight() * misfit + 0.5 * spec.beta * int_u * int_u + 0.5 * spec.gamma * g.dot_omega(u, u)
}

pub fn eval_f(spec: &ProblemSpec, u: &ControlField) -> Result<f64, ObjectiveError> {
    let y = state::solve_state(&spec.grid, u, &spec.f, &spec.state)?.y;
    Ok(f_from_state(spec, u, &y))
}

pub fn grad_f(spec: &ProblemSpec, u: &ControlField) -> Result<ControlField, ObjectiveError> {
    Ok(SmoothPoint::evaluate(spec, u, None)?.grad)
}

pub fn hess_f_bilinear(
    spec: &ProblemSpec,
    u: &ControlField,
    v: &ControlField,
    w: &ControlField,
) -> Result<f64, ObjectiveError> {
    SmoothPoint::evaluate(spec, u, None)?.hess_bilinear(spec, v, w)
}

/// `TV` of a precomputed discrete gradient.
pub fn tv_of_gradient(grid: &Grid, g: &GradField, norm: NormChoice) -> f64 {
    let s: f64 = (0..g.len()).map(|c| norm.mass(g.at(c))).sum();
    grid.cell_weight() * s
}

/// `h^2 sum |grad u|_2` (isotropic) or `h^2 sum (|u_x| + |u_y|)` (anisotropic).
pub fn eval_tv(grid: &Grid, u: &ControlField, norm: NormChoice) -> f64 {
    tv_of_gradient(grid, &grid.gradient(u), norm)
}

/// `J(u) = F(u) + alpha TV(u)`
pub fn eval_j(spec: &ProblemSpec, u: &ControlField) -> Result<f64, ObjectiveError> {
    Ok(eval_f(spec, u)? + spec.alpha * eval_tv(&spec.grid, u, spec.norm))
}

#[inline]
pub fn huber(t: f64, delta: f64) -> f64 {
    if t <= delta {
        0.5 * t * t / delta
    } else {
        t - 0.5 * delta
    }
}

/// Huber dual of a gradient field.
///
/// Isotropic: `lambda = g / max(delta, |g|_2)`. Anisotropic: each component
/// clamped, `lambda_j = clamp(g_j / delta, -1, 1)`.
pub fn huber_dual(g: &GradField, norm: NormChoice, delta: f64) -> GradField {
    let mut lam = GradField::zeros(g.len());
    for c in 0..g.len() {
        let [gx, gy] = g.at(c);
        match norm {
            NormChoice::L2 => {
                let d = gx.hypot(gy).max(delta);
                let (mut lx, mut ly) = (gx / d, gy / d);
                // keep |lambda|_2 <= 1 in floating point, not just in exact arithmetic
                while lx.hypot(ly) > 1.0 {
                    lx *= 1.0 - f64::EPSILON;
                    ly *= 1.0 - f64::EPSILON;
                }
                lam.gx[c] = lx;
                lam.gy[c] = ly;
            }
            NormChoice::LInf => {
                lam.gx[c] = (gx / delta).clamp(-1.0, 1.0);
                lam.gy[c] = (gy / delta).clamp(-1.0, 1.0);
            }
        }
    }
    lam
}

/// Huber-smoothed total variation of a precomputed gradient.
pub fn huber_tv_of_gradient(grid: &Grid, g: &GradField, norm: NormChoice, delta: f64) -> f64 {
    let s: f64 = (0..g.len())
        .map(|c| {
            let [gx, gy] = g.at(c);
            match norm {
                NormChoice::L2 => huber(gx.hypot(gy), delta),
                NormChoice::LInf => huber(gx.abs(), delta) + huber(gy.abs(), delta),
            }
        })
        .sum();
    grid.cell_weight() * s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTv {
    pub value: f64,
    /// `-div lambda`
    pub gradient: ControlField,
    pub dual: GradField,
}

pub fn eval_tv_smoothed(
    grid: &Grid,
    u: &ControlField,
    norm: NormChoice,
    delta: f64,
) -> Result<SmoothedTv, ObjectiveError> {
    if !(delta > 0.0) {
        return Err(ObjectiveError::NonPositiveDelta(delta));
    }
    let g = grid.gradient(u);
    let dual = huber_dual(&g, norm, delta);
    let gradient = grid.divergence(&dual).scaled(-1.0);
    Ok(SmoothedTv {
        value: huber_tv_of_gradient(grid, &g, norm, delta),
        gradient,
        dual,
    })
}

/// Per-cell symmetric 2x2 second derivative of the Huber integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct HuberCurvature {
    pub wxx: Vec<f64>,
    pub wxy: Vec<f64>,
    pub wyy: Vec<f64>,
}

impl HuberCurvature {
    pub fn new(g: &GradField, norm: NormChoice, delta: f64) -> Self {
        let m = g.len();
        let mut w = HuberCurvature {
            wxx: vec![0.0; m],
            wxy: vec![0.0; m],
            wyy: vec![0.0; m],
        };
        for c in 0..m {
            let [gx, gy] = g.at(c);
            match norm {
                NormChoice::L2 => {
                    let r = gx.hypot(gy);
                    if r <= delta {
                        w.wxx[c] = 1.0 / delta;
                        w.wyy[c] = 1.0 / delta;
                    } else {
                        let (ex, ey) = (gx / r, gy / r);
                        w.wxx[c] = (1.0 - ex * ex) / r;
                        w.wxy[c] = -ex * ey / r;
                        w.wyy[c] = (1.0 - ey * ey) / r;
                    }
                }
                NormChoice::LInf => {
                    w.wxx[c] = if gx.abs() <= delta { 1.0 / delta } else { 0.0 };
                    w.wyy[c] = if gy.abs() <= delta { 1.0 / delta } else { 0.0 };
                }
            }
        }
        w
    }

    /// Primal-dual variant: on cells where the Huber function is linear, the
    /// dual estimate `lam` replaces the unit direction in one factor, which
    /// keeps curvature along `grad u` until `lam` has caught up. Equals
    /// [`HuberCurvature::new`] when `lam` is the Huber dual of `g`, and is
    /// positive semidefinite whenever `lam` lies in the dual unit ball.
    pub fn primal_dual(g: &GradField, lam: &GradField, norm: NormChoice, delta: f64) -> Self {
        let m = g.len();
        let mut w = HuberCurvature {
            wxx: vec![0.0; m],
            wxy: vec![0.0; m],
            wyy: vec![0.0; m],
        };
        for c in 0..m {
            let [gx, gy] = g.at(c);
            let [lx, ly] = lam.at(c);
            match norm {
                NormChoice::L2 => {
                    let r = gx.hypot(gy);
                    if r <= delta {
                        w.wxx[c] = 1.0 / delta;
                        w.wyy[c] = 1.0 / delta;
                    } else {
                        let (ex, ey) = (gx / r, gy / r);
                        w.wxx[c] = (1.0 - lx * ex) / r;
                        w.wxy[c] = -0.5 * (lx * ey + ly * ex) / r;
                        w.wyy[c] = (1.0 - ly * ey) / r;
                    }
                }
                NormChoice::LInf => {
                    let comp = |d: f64, l: f64| {
                        if d.abs() <= delta {
                            1.0 / delta
                        } else {
                            (1.0 - l * d.signum()) / d.abs()
                        }
                    };
                    w.wxx[c] = comp(gx, lx);
                    w.wyy[c] = comp(gy, ly);
                }
            }
        }
        w
    }

    pub fn apply(&self, p: &GradField) -> GradField {
        let mut out = GradField::zeros(p.len());
        for c in 0..p.len() {
            out.gx[c] = self.wxx[c] * p.gx[c] + self.wxy[c] * p.gy[c];
            out.gy[c] = self.wxy[c] * p.gx[c] + self.wyy[c] * p.gy[c];
        }
        out
    }
}

/// Default activity threshold `1e-3 * max |grad u|`.
pub fn default_theta(g: &GradField, norm: NormChoice) -> f64 {
    let m = (0..g.len()).fold(0.0f64, |m, c| {
        let [x, y] = g.at(c);
        m.max(match norm {
            NormChoice::L2 => x.hypot(y),
            NormChoice::LInf => x.abs().max(y.abs()),
        })
    });
    1e-3 * m
}

/// Split of the cells by the size of `grad u_bar`.
///
/// Isotropic: a cell is active when `|grad u_bar|_2 > theta`, with unit
/// direction `h_bar`. Anisotropic: component `j` of a cell is active when
/// `|d_j u_bar| > theta`, with `h_bar_j = sign(d_j u_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetDecomposition {
    pub norm: NormChoice,
    pub theta: f64,
    pub grad: GradField,
    pub active: Vec<[bool; 2]>,
    pub hbar: GradField,
}

impl ActiveSetDecomposition {
    pub fn new(grid: &Grid, ubar: &ControlField, norm: NormChoice, theta: f64) -> Self {
        let grad = grid.gradient(ubar);
        let m = grad.len();
        let mut active = vec![[false, false]; m];
        let mut hbar = GradField::zeros(m);
        for c in 0..m {
            let [gx, gy] = grad.at(c);
            match norm {
                NormChoice::L2 => {
                    let r = gx.hypot(gy);
                    if r > theta {
                        active[c] = [true, true];
                        hbar.gx[c] = gx / r;
                        hbar.gy[c] = gy / r;
                    }
                }
                NormChoice::LInf => {
                    if gx.abs() > theta {
                        active[c][0] = true;
                        hbar.gx[c] = gx.signum();
                    }
                    if gy.abs() > theta {
                        active[c][1] = true;
                        hbar.gy[c] = gy.signum();
                    }
                }
            }
        }
        ActiveSetDecomposition {
            norm,
            theta,
            grad,
            active,
            hbar,
        }
    }

    /// Area of the active cells (any component active).
    pub fn active_area(&self, grid: &Grid) -> f64 {
        grid.cell_weight() * self.active.iter().filter(|a| a[0] || a[1]).count() as f64
    }

    /// Density `h_v` of `grad v` w.r.t. `|grad u_bar|` on the active set and
    /// the mass of its singular part off the active set.
    pub fn density(&self, grid: &Grid, v: &ControlField) -> (GradField, f64) {
        let gv = grid.gradient(v);
        let mut hv = GradField::zeros(gv.len());
        let mut singular = 0.0;
        for c in 0..gv.len() {
            let [vx, vy] = gv.at(c);
            let [gx, gy] = self.grad.at(c);
            match self.norm {
                NormChoice::L2 => {
                    if self.active[c][0] {
                        let r = gx.hypot(gy);
                        hv.gx[c] = vx / r;
                        hv.gy[c] = vy / r;
                    } else {
                        singular += vx.hypot(vy);
                    }
                }
                NormChoice::LInf => {
                    if self.active[c][0] {
                        hv.gx[c] = vx / gx.abs();
                    } else {
                        singular += vx.abs();
                    }
                    if self.active[c][1] {
                        hv.gy[c] = vy / gy.abs();
                    } else {
                        singular += vy.abs();
                    }
                }
            }
        }
        (hv, grid.cell_weight() * singular)
    }

    /// Discrete `G'(u_bar; v)`.
    pub fn directional_derivative(&self, grid: &Grid, v: &ControlField) -> f64 {
        let gv = grid.gradient(v);
        let mut s = 0.0;
        for c in 0..gv.len() {
            let [vx, vy] = gv.at(c);
            match self.norm {
                NormChoice::L2 => {
                    s += if self.active[c][0] {
                        self.hbar.gx[c] * vx + self.hbar.gy[c] * vy
                    } else {
                        vx.hypot(vy)
                    };
                }
                NormChoice::LInf => {
                    s += if self.active[c][0] { self.hbar.gx[c] * vx } else { vx.abs() };
                    s += if self.active[c][1] { self.hbar.gy[c] * vy } else { vy.abs() };
                }
            }
        }
        grid.cell_weight() * s
    }
}

pub fn tv_directional_derivative(
    grid: &Grid,
    ubar: &ControlField,
    v: &ControlField,
    norm: NormChoice,
    theta: f64,
) -> f64 {
    ActiveSetDecomposition::new(grid, ubar, norm, theta).directional_derivative(grid, v)
}
