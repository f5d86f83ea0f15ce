//! Uniform node grid on the unit square with an embedded control window.
//!
//! The domain is `[0,1]^2` discretized by `n x n` interior nodes with mesh
//! width `h = 1/(n+1)`; boundary nodes carry the homogeneous Dirichlet value
//! and are not stored. The control window is the block of interior nodes
//! lying in a closed axis-aligned rectangle. Every node of the block owns an
//! `h x h` cell, so `|omega| = h^2 * (number of cells)`.
//!
//! Discrete gradient and divergence act on the window only. The gradient is
//! a forward difference with zero slope on the last column / row of the
//! window (values outside the window are never read), and the divergence is
//! its exact negative adjoint for the `h^2`-weighted inner products.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 3 interior nodes per axis, got {0}")]
    TooSmall(usize),
    #[error("square cells require nx == ny (got nx={nx}, ny={ny})")]
    NonSquare { nx: usize, ny: usize },
    #[error("control window {0:?} must lie strictly inside (0,1)^2 with positive area")]
    BadWindow(Window),
    #[error("control window {0:?} contains no grid node")]
    EmptyOmega(Window),
    #[error("field length {got} does not match {region} size {expected}")]
    LengthMismatch {
        region: Region,
        expected: usize,
        got: usize,
    },
}

/// Integration region of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Interior nodes of the unit square.
    Domain,
    /// Cells of the control window.
    Omega,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Domain => f.write_str("domain"),
            Region::Omega => f.write_str("control window"),
        }
    }
}

/// Axis-aligned rectangle `[x0,x1] x [y0,y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Window {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Window { x0, x1, y0, y1 }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Window::new(lo, hi, lo, hi)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite());
        finite
            && self.x0 > 0.0
            && self.y0 > 0.0
            && self.x1 < 1.0
            && self.y1 < 1.0
            && self.x1 > self.x0
            && self.y1 > self.y0
    }
}

/// Values on the interior nodes of the domain, row-major (`k = j*n + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

/// Values on the cells of the control window, row-major (`c = b*mx + a`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub values: Vec<f64>,
}

/// A vector field on the control window cells (two component arrays).
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(len: usize) -> Self {
        ScalarField {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ControlField {
    pub fn zeros(len: usize) -> Self {
        ControlField {
            values: vec![0.0; len],
        }
    }

    pub fn constant(len: usize, c: f64) -> Self {
        ControlField {
            values: vec![c; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ControlField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + t * other`
    pub fn add_scaled(&self, t: f64, other: &ControlField) -> ControlField {
        debug_assert_eq!(self.len(), other.len());
        ControlField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + t * b)
                .collect(),
        }
    }

    pub fn scaled(&self, t: f64) -> ControlField {
        ControlField {
            values: self.values.iter().map(|a| t * a).collect(),
        }
    }
}

impl GradField {
    pub fn zeros(len: usize) -> Self {
        GradField {
            gx: vec![0.0; len],
            gy: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.gx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gx.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize) -> [f64; 2] {
        [self.gx[c], self.gy[c]]
    }

    pub fn scaled(&self, t: f64) -> GradField {
        GradField {
            gx: self.gx.iter().map(|v| t * v).collect(),
            gy: self.gy.iter().map(|v| t * v).collect(),
        }
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(x, y)| x.hypot(*y))
            .collect()
    }
}

/// The discretization of the domain and of the control window.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    window: Window,
    ox: usize,
    oy: usize,
    mx: usize,
    my: usize,
}

/// Build the grid for `nx x ny` interior nodes and the given control window.
pub fn build_grid(nx: usize, ny: usize, window: Window) -> Result<Grid, GridError> {
    Grid::new(nx, ny, window)
}

impl Grid {
    pub fn new(nx: usize, ny: usize, window: Window) -> Result<Grid, GridError> {
        if nx < 3 || ny < 3 {
            return Err(GridError::TooSmall(nx.min(ny)));
        }
        if nx != ny {
            return Err(GridError::NonSquare { nx, ny });
        }
        if !window.is_valid() {
            return Err(GridError::BadWindow(window));
        }
        let n = nx;
        let h = 1.0 / (n as f64 + 1.0);
        let slack = 1e-9 * h;
        let inside = |lo: f64, hi: f64| -> Option<(usize, usize)> {
            let idx: Vec<usize> = (0..n)
                .filter(|&i| {
                    let x = (i as f64 + 1.0) * h;
                    x >= lo - slack && x <= hi + slack
                })
                .collect();
            match (idx.first(), idx.last()) {
                (Some(&a), Some(&b)) => Some((a, b - a + 1)),
                _ => None,
            }
        };
        let (ox, mx) = inside(window.x0, window.x1).ok_or(GridError::EmptyOmega(window))?;
        let (oy, my) = inside(window.y0, window.y1).ok_or(GridError::EmptyOmega(window))?;
        Ok(Grid {
            n,
            h,
            window,
            ox,
            oy,
            mx,
            my,
        })
    }

    /// Interior nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of interior nodes of the domain.
    pub fn domain_len(&self) -> usize {
        self.n * self.n
    }

    /// Number of control cells.
    pub fn omega_len(&self) -> usize {
        self.mx * self.my
    }

    /// Shape `(mx, my)` of the control cell block.
    pub fn omega_shape(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    /// Node offset `(ox, oy)` of the first control cell.
    pub fn omega_offset(&self) -> (usize, usize) {
        (self.ox, self.oy)
    }

    /// The window as requested by the caller.
    pub fn requested_window(&self) -> Window {
        self.window
    }

    /// The node-resolved window: the union of the control cells.
    pub fn snapped_window(&self) -> Window {
        let h = self.h;
        let x0 = (self.ox as f64 + 1.0) * h - 0.5 * h;
        let y0 = (self.oy as f64 + 1.0) * h - 0.5 * h;
        Window::new(
            x0,
            x0 + self.mx as f64 * h,
            y0,
            y0 + self.my as f64 * h,
        )
    }

    /// `|omega| = h^2 * #cells`
    pub fn omega_area(&self) -> f64 {
        self.h * self.h * self.omega_len() as f64
    }

    pub fn cell_weight(&self) -> f64 {
        self.h * self.h
    }

    /// Domain index of control cell `c`.
    #[inline]
    pub fn omega_to_domain(&self, c: usize) -> usize {
        let a = c % self.mx;
        let b = c / self.mx;
        (self.oy + b) * self.n + self.ox + a
    }

    /// Coordinates of domain node `k`.
    pub fn node_xy(&self, k: usize) -> [f64; 2] {
        let i = k % self.n;
        let j = k / self.n;
        [(i as f64 + 1.0) * self.h, (j as f64 + 1.0) * self.h]
    }

    /// Coordinates of the node carrying control cell `c`.
    pub fn cell_xy(&self, c: usize) -> [f64; 2] {
        self.node_xy(self.omega_to_domain(c))
    }

    pub fn scalar_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField {
            values: (0..self.domain_len())
                .map(|k| {
                    let [x, y] = self.node_xy(k);
                    f(x, y)
                })
                .collect(),
        }
    }

    pub fn control_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> ControlField {
        ControlField {
            values: (0..self.omega_len())
                .map(|c| {
                    let [x, y] = self.cell_xy(c);
                    f(x, y)
                })
                .collect(),
        }
    }

    /// Restriction of a domain field to the control cells.
    pub fn restrict(&self, y: &ScalarField) -> ControlField {
        ControlField {
            values: (0..self.omega_len())
                .map(|c| y.values[self.omega_to_domain(c)])
                .collect(),
        }
    }

    /// `u * chi_omega` as a domain field.
    pub fn extend(&self, u: &ControlField) -> ScalarField {
        let mut out = vec![0.0; self.domain_len()];
        for (c, v) in u.values.iter().enumerate() {
            out[self.omega_to_domain(c)] = *v;
        }
        ScalarField { values: out }
    }

    /// Forward-difference gradient on the control window.
    pub fn gradient(&self, u: &ControlField) -> GradField {
        let mut g = GradField::zeros(self.omega_len());
        self.gradient_into(&u.values, &mut g);
        g
    }

    pub(crate) fn gradient_into(&self, u: &[f64], g: &mut GradField) {
        let (mx, my) = (self.mx, self.my);
        let inv_h = 1.0 / self.h;
        for b in 0..my {
            for a in 0..mx {
                let c = b * mx + a;
                g.gx[c] = if a + 1 < mx {
                    (u[c + 1] - u[c]) * inv_h
                } else {
                    0.0
                };
                g.gy[c] = if b + 1 < my {
                    (u[c + mx] - u[c]) * inv_h
                } else {
                    0.0
                };
            }
        }
    }

    /// Discrete divergence, the negative adjoint of [`Grid::gradient`].
    pub fn divergence(&self, p: &GradField) -> ControlField {
        let mut out = vec![0.0; self.omega_len()];
        self.divergence_into(p, &mut out);
        ControlField { values: out }
    }

    pub(crate) fn divergence_into(&self, p: &GradField, out: &mut [f64]) {
        let (mx, my) = (self.mx, self.my);
        let inv_h = 1.0 / self.h;
        for b in 0..my {
            for a in 0..mx {
                let c = b * mx + a;
                let mut d = 0.0;
                if a + 1 < mx {
                    d += p.gx[c];
                }
                if a >= 1 {
                    d -= p.gx[c - 1];
                }
                if b + 1 < my {
                    d += p.gy[c];
                }
                if b >= 1 {
                    d -= p.gy[c - mx];
                }
                out[c] = d * inv_h;
            }
        }
    }

    /// `h^2 * sum a_i b_i` over the given region, with length checks.
    pub fn inner_product(&self, a: &[f64], b: &[f64], region: Region) -> Result<f64, GridError> {
        let expected = match region {
            Region::Domain => self.domain_len(),
            Region::Omega => self.omega_len(),
        };
        for got in [a.len(), b.len()] {
            if got != expected {
                return Err(GridError::LengthMismatch {
                    region,
                    expected,
                    got,
                });
            }
        }
        Ok(self.cell_weight() * crate::linalg::dot(a, b))
    }

    pub fn dot_omega(&self, a: &ControlField, b: &ControlField) -> f64 {
        debug_assert_eq!(a.len(), self.omega_len());
        debug_assert_eq!(b.len(), self.omega_len());
        self.cell_weight() * crate::linalg::dot(&a.values, &b.values)
    }

    pub fn dot_domain(&self, a: &ScalarField, b: &ScalarField) -> f64 {
        debug_assert_eq!(a.len(), self.domain_len());
        debug_assert_eq!(b.len(), self.domain_len());
        self.cell_weight() * crate::linalg::dot(&a.values, &b.values)
    }

    /// `h^2 * sum (px qx + py qy)`
    pub fn dot_grad(&self, p: &GradField, q: &GradField) -> f64 {
        self.cell_weight()
            * (crate::linalg::dot(&p.gx, &q.gx) + crate::linalg::dot(&p.gy, &q.gy))
    }

    pub fn norm_omega(&self, a: &ControlField) -> f64 {
        self.dot_omega(a, a).sqrt()
    }

    pub fn norm_domain(&self, a: &ScalarField) -> f64 {
        self.dot_domain(a, a).sqrt()
    }

    pub fn norm_grad(&self, p: &GradField) -> f64 {
        self.dot_grad(p, p).sqrt()
    }

    /// `int_omega u`
    pub fn integral(&self, u: &ControlField) -> f64 {
        self.cell_weight() * u.values.iter().sum::<f64>()
    }

    /// `a_u = (1/|omega|) int_omega u`
    pub fn mean(&self, u: &ControlField) -> f64 {
        self.integral(u) / self.omega_area()
    }

    /// `u - a_u`
    pub fn centered(&self, u: &ControlField) -> ControlField {
        let a = self.mean(u);
        ControlField {
            values: u.values.iter().map(|v| v - a).collect(),
        }
    }

    /// `||u||_{L^1(omega)}`
    pub fn l1_norm(&self, u: &ControlField) -> f64 {
        self.cell_weight() * u.values.iter().map(|v| v.abs()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_control(grid: &Grid, rng: &mut ChaCha8Rng) -> ControlField {
        ControlField::from_vec((0..grid.omega_len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_node_window() {
        let g = build_grid(3, 3, Window::square(0.4, 0.6)).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.omega_len(), 1);
        assert_eq!(g.cell_xy(0), [0.5, 0.5]);
    }

    #[test]
    fn closed_window_includes_nodes_on_its_edges() {
        let g = build_grid(3, 3, Window::square(0.25, 0.75)).unwrap();
        assert_eq!(g.omega_len(), 9);
    }

    #[test]
    fn full_interior_window() {
        let h = 1.0 / 64.0;
        let g = build_grid(63, 63, Window::square(h, 1.0 - h)).unwrap();
        assert_eq!(g.omega_len(), 3969);
        assert_eq!(g.omega_area(), g.h() * g.h() * 3969.0);
        assert_eq!(g.snapped_window().area(), g.omega_area());
    }

    #[test]
    fn rejects_empty_and_touching_windows() {
        assert!(matches!(
            build_grid(3, 3, Window::square(0.9, 0.95)),
            Err(GridError::EmptyOmega(_))
        ));
        assert!(matches!(
            build_grid(7, 7, Window::square(0.0, 0.5)),
            Err(GridError::BadWindow(_))
        ));
        assert!(matches!(
            build_grid(7, 7, Window::new(0.2, 0.2, 0.2, 0.5)),
            Err(GridError::BadWindow(_))
        ));
        assert!(matches!(
            build_grid(7, 9, Window::square(0.2, 0.5)),
            Err(GridError::NonSquare { .. })
        ));
        assert!(matches!(
            build_grid(2, 2, Window::square(0.2, 0.5)),
            Err(GridError::TooSmall(2))
        ));
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = build_grid(15, 15, Window::square(0.2, 0.8)).unwrap();
        let grad = g.gradient(&ControlField::constant(g.omega_len(), 3.5));
        assert!(grad.gx.iter().chain(&grad.gy).all(|v| *v == 0.0));
    }

    #[test]
    fn step_gradient_and_dipole_divergence() {
        // a single row of four cells with h = 0.2
        let g = build_grid(4, 4, Window::new(0.2, 0.8, 0.35, 0.45)).unwrap();
        assert_eq!(g.omega_shape(), (4, 1));
        let u = g.control_from_fn(|x, _| if x < 0.5 { 0.0 } else { 1.0 });
        let p = g.gradient(&u);
        let expected = [0.0, 5.0, 0.0, 0.0];
        for (a, b) in p.gx.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.gy.iter().all(|v| *v == 0.0));
        let d = g.divergence(&p);
        let expected = [0.0, 25.0, -25.0, 0.0];
        for (a, b) in d.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn divergence_of_zero_is_zero() {
        let g = build_grid(7, 7, Window::square(0.2, 0.8)).unwrap();
        let d = g.divergence(&GradField::zeros(g.omega_len()));
        assert!(d.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_dense_difference_matrix() {
        let g = build_grid(9, 9, Window::square(0.1, 0.8)).unwrap();
        let (mx, my) = g.omega_shape();
        assert_eq!((mx, my), (8, 8));
        let m = g.omega_len();
        // dense forward-difference matrices built from cell coordinates
        let mut dx = vec![vec![0.0; m]; m];
        let mut dy = vec![vec![0.0; m]; m];
        for c in 0..m {
            let [x, y] = g.cell_xy(c);
            for e in 0..m {
                let [xe, ye] = g.cell_xy(e);
                if (ye - y).abs() < 1e-12 && (xe - x - g.h()).abs() < 1e-12 {
                    dx[c][e] = 1.0 / g.h();
                    dx[c][c] = -1.0 / g.h();
                }
                if (xe - x).abs() < 1e-12 && (ye - y - g.h()).abs() < 1e-12 {
                    dy[c][e] = 1.0 / g.h();
                    dy[c][c] = -1.0 / g.h();
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_control(&g, &mut rng);
        let p = g.gradient(&u);
        for c in 0..m {
            let ex: f64 = (0..m).map(|e| dx[c][e] * u.values[e]).sum();
            let ey: f64 = (0..m).map(|e| dy[c][e] * u.values[e]).sum();
            assert!((ex - p.gx[c]).abs() <= 1e-14 * ex.abs().max(1.0) * 16.0);
            assert!((ey - p.gy[c]).abs() <= 1e-14 * ey.abs().max(1.0) * 16.0);
        }
    }

    #[test]
    fn adjointness_on_random_pairs() {
        let g = build_grid(16, 16, Window::square(0.1, 0.9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u = random_control(&g, &mut rng);
            let p = GradField {
                gx: (0..g.omega_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                gy: (0..g.omega_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let lhs = g.dot_grad(&g.gradient(&u), &p);
            let rhs = g.dot_omega(&u, &g.divergence(&p));
            let scale = g.norm_omega(&u) * g.norm_grad(&p);
            assert!((lhs + rhs).abs() <= 1e-12 * scale, "{lhs} {rhs}");
        }
    }

    #[test]
    fn inner_product_quadrature() {
        let h = 1.0 / 64.0;
        let g = build_grid(63, 63, Window::square(h, 1.0 - h)).unwrap();
        let ones = vec![1.0; g.omega_len()];
        let v = g.inner_product(&ones, &ones, Region::Omega).unwrap();
        assert!((v - 3969.0 / 4096.0).abs() < 1e-15);
        assert!((v - 0.96899).abs() < 1e-5);
        let small = build_grid(63, 63, Window::square(0.25, 0.75)).unwrap();
        let ones = vec![1.0; small.omega_len()];
        assert!(small.inner_product(&ones, &ones, Region::Omega).is_ok());
        assert!(matches!(
            small.inner_product(&ones, &ones, Region::Domain),
            Err(GridError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn disjoint_supports_are_orthogonal_and_symmetric() {
        let g = build_grid(15, 15, Window::square(0.2, 0.8)).unwrap();
        let a = g.control_from_fn(|x, _| if x < 0.5 { x } else { 0.0 });
        let b = g.control_from_fn(|x, y| if x >= 0.5 { y + 1.0 } else { 0.0 });
        assert_eq!(g.dot_omega(&a, &b), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_control(&g, &mut rng);
        let d = random_control(&g, &mut rng);
        assert_eq!(g.dot_omega(&c, &d), g.dot_omega(&d, &c));
    }

    #[test]
    fn mean_and_centering() {
        let g = build_grid(15, 15, Window::square(0.2, 0.8)).unwrap();
        let five = ControlField::constant(g.omega_len(), 5.0);
        assert!((g.mean(&five) - 5.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_control(&g, &mut rng);
        assert!(g.mean(&g.centered(&u)).abs() < 1e-14);
    }

    #[test]
    fn extend_restrict_roundtrip() {
        let g = build_grid(11, 11, Window::new(0.2, 0.6, 0.3, 0.9)).unwrap();
        let u = g.control_from_fn(|x, y| x * y);
        assert_eq!(g.restrict(&g.extend(&u)), u);
        let ext = g.extend(&u);
        let nonzero = ext.values.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, g.omega_len());
    }
}
