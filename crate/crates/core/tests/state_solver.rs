use std::f64::consts::PI;

use bvcontrol::grid::{build_grid, ControlField, Grid, ScalarField, Window};
use bvcontrol::linalg::ShiftedLaplacian;
use bvcontrol::state::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full_interior(n: usize) -> Grid {
    let h = 1.0 / (n as f64 + 1.0);
    build_grid(n, n, Window::square(h, 1.0 - h)).unwrap()
}

fn smooth_control(g: &Grid, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    g.control_from_fn(|x, y| a * (b * x).sin() * (c * y).cos() + 0.5 * a)
}

fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn manufactured_error(n: usize) -> f64 {
    let g = full_interior(n);
    let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let u = g.control_from_fn(|x, y| {
        let s = exact(x, y);
        2.0 * PI * PI * s + s + s * s * s
    });
    let f = Nonlinearity::constant(&g, 1.0, 1.0, 0.0);
    let sol = solve_state(&g, &u, &f, &StateOptions::default()).unwrap();
    let ys = g.scalar_from_fn(exact);
    max_diff(&sol.y, &ys)
}

#[test]
fn manufactured_solution_is_second_order() {
    let e1 = manufactured_error(31);
    let e2 = manufactured_error(63);
    let ratio = e1 / e2;
    assert!((3.6..=4.4).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
}

#[test]
fn affine_state_matches_single_linear_solve() {
    let g = build_grid(31, 31, Window::square(0.25, 0.75)).unwrap();
    let u = smooth_control(&g, 1);
    let f = Nonlinearity::affine(&g, 2.0, 0.3);
    let sol = solve_state(&g, &u, &f, &StateOptions::default()).unwrap();
    let op = ShiftedLaplacian::new(g.n(), g.h(), vec![2.0; g.domain_len()]);
    let rhs: Vec<f64> = g.extend(&u).values.iter().map(|v| v - 0.3).collect();
    let direct = op.assemble().cholesky().unwrap().solve(&rhs);
    let err = max_diff(&sol.y, &ScalarField::from_vec(direct));
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn newton_residual_never_increases() {
    // capping the iteration count at k exposes the residual of the k-th iterate
    let g = build_grid(31, 31, Window::square(0.2, 0.8)).unwrap();
    let u = ControlField::constant(g.omega_len(), 500.0);
    let f = Nonlinearity::constant(&g, 0.0, 3.0, 0.0);
    let mut history = Vec::new();
    for k in 1..=40 {
        let opts = StateOptions { max_newton: k, ..Default::default() };
        match solve_state(&g, &u, &f, &opts) {
            Ok(s) => {
                history.push(s.residual_norm);
                break;
            }
            Err(StateError::NonConvergence { residual, .. }) => history.push(residual),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(history.len() > 2, "{history:?}");
    for w in history.windows(2) {
        assert!(w[1] <= w[0], "{history:?}");
    }
}

#[test]
fn linearized_is_exact_for_affine() {
    let g = build_grid(31, 31, Window::square(0.25, 0.75)).unwrap();
    let f = Nonlinearity::affine(&g, 1.0, 0.5);
    let opts = StateOptions::default();
    let u = smooth_control(&g, 2);
    let v = smooth_control(&g, 3);
    let y = solve_state(&g, &u, &f, &opts).unwrap().y;
    let y2 = solve_state(&g, &u.add_scaled(1.0, &v), &f, &opts).unwrap().y;
    let z = solve_linearized(&g, &y, &v, &f, &opts).unwrap();
    let diff = ScalarField::from_vec(y2.values.iter().zip(&y.values).map(|(a, b)| a - b).collect());
    assert!(max_diff(&diff, &z) <= 1e-10);
    let zero = solve_linearized(&g, &y, &ControlField::zeros(g.omega_len()), &f, &opts).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
    let zvv = solve_second_linearized(&g, &y, &z, &z, &f, &opts).unwrap();
    assert!(zvv.values.iter().all(|v| *v == 0.0));
}

fn taylor_defects(order: u32) -> Vec<f64> {
    let g = build_grid(31, 31, Window::square(0.2, 0.8)).unwrap();
    let f = Nonlinearity::constant(&g, 0.0, 1.0, 0.0);
    let opts = StateOptions::default();
    let u = smooth_control(&g, 4).scaled(10.0);
    let v = smooth_control(&g, 5).scaled(10.0);
    let y = solve_state(&g, &u, &f, &opts).unwrap().y;
    let op = LinearizedOperator::new(&g, &y, &f, &opts).unwrap();
    let z = op.linearized(&g, &v).unwrap();
    let zz = op.second_linearized(&z, &z).unwrap();
    [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|rho| {
            let yr = solve_state(&g, &u.add_scaled(*rho, &v), &f, &opts).unwrap().y;
            let d: Vec<f64> = (0..g.domain_len())
                .map(|k| {
                    let mut e = yr.values[k] - y.values[k] - rho * z.values[k];
                    if order == 3 {
                        e -= 0.5 * rho * rho * zz.values[k];
                    }
                    e
                })
                .collect();
            g.norm_domain(&ScalarField::from_vec(d))
        })
        .collect()
}

#[test]
fn first_order_taylor_defect_is_quadratic() {
    let d = taylor_defects(2);
    for w in d.windows(2) {
        let r = w[0] / w[1];
        assert!((3.5..=4.5).contains(&r), "{d:?}");
    }
}

#[test]
fn second_order_taylor_defect_is_cubic() {
    let d = taylor_defects(3);
    for w in d.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 3.0).abs() <= 0.3, "{d:?}");
    }
}

#[test]
fn second_linearization_is_symmetric() {
    let g = build_grid(23, 23, Window::square(0.2, 0.8)).unwrap();
    let f = Nonlinearity::constant(&g, 0.2, 2.0, 0.0);
    let opts = StateOptions::default();
    let y = solve_state(&g, &smooth_control(&g, 6).scaled(20.0), &f, &opts).unwrap().y;
    let zv = solve_linearized(&g, &y, &smooth_control(&g, 7), &f, &opts).unwrap();
    let zw = solve_linearized(&g, &y, &smooth_control(&g, 8), &f, &opts).unwrap();
    let a = solve_second_linearized(&g, &y, &zv, &zw, &f, &opts).unwrap();
    let b = solve_second_linearized(&g, &y, &zw, &zv, &f, &opts).unwrap();
    assert!(max_diff(&a, &b) <= 1e-12 * a.max_abs().max(1e-300));
}

#[test]
fn adjoint_identity() {
    let g = build_grid(31, 31, Window::square(0.2, 0.7)).unwrap();
    let f = Nonlinearity::constant(&g, 0.5, 1.0, 0.1);
    let opts = StateOptions::default();
    let y = solve_state(&g, &smooth_control(&g, 9).scaled(10.0), &f, &opts).unwrap().y;
    let yd = g.scalar_from_fn(|x, y| (3.0 * x).sin() * y);
    let phi = solve_adjoint(&g, &y, &yd, &f, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let misfit = ScalarField::from_vec(y.values.iter().zip(&yd.values).map(|(a, b)| a - b).collect());
    for _ in 0..10 {
        let v = ControlField::from_vec((0..g.omega_len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let z = solve_linearized(&g, &y, &v, &f, &opts).unwrap();
        let lhs = g.dot_domain(&misfit, &z);
        let rhs = g.dot_omega(&g.restrict(&phi), &v);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs(), "{lhs} {rhs}");
    }
    let zero = solve_adjoint(&g, &y, &y, &f, &opts).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
}

#[test]
fn state_bound_is_stable_under_refinement() {
    let run = |n: usize| {
        let g = build_grid(n, n, Window::square(0.25, 0.75)).unwrap();
        let f = Nonlinearity::constant(&g, 1.0, 1.0, 0.5);
        let u = g.control_from_fn(|x, y| 20.0 * (1.0 + x * y));
        solve_state(&g, &u, &f, &StateOptions::default()).unwrap().y.max_abs()
    };
    let (a, b) = (run(63), run(127));
    assert!((a - b).abs() / a < 0.05, "{a} {b}");
}
