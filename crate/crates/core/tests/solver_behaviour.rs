use bvcontrol::grid::{build_grid, ControlField, Grid, Window};
use bvcontrol::norm::NormChoice;
use bvcontrol::objective::{self, ProblemSpec};
use bvcontrol::solver::{
    dual_from_smoothed, homotopy_solve, homotopy_solve_from, solve_smooth_subproblem, HomotopySchedule, InnerMethod,
    InnerOptions,
};
use bvcontrol::state::{solve_state, Nonlinearity, StateOptions};
use bvcontrol::targets::TwoBumps;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_control(g: &Grid, seed: u64, scale: f64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ControlField::from_vec((0..g.omega_len()).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= m * a[k][j];
            }
            b[i] -= m * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[test]
fn quadratic_case_matches_normal_equations() {
    // alpha = beta = gamma = 0, f = y + 1/2: J_eps(u) = 1/2 |S u + y0 - y_d|^2 + eps/2 |D u|^2
    let n = 7;
    let g = build_grid(n, n, Window::square(0.2, 0.8)).unwrap();
    let h = g.h();
    let (c0, d0, eps) = (1.0, 0.5, 1e-2);
    let y_d = TwoBumps::default().sample(&g);
    let spec = ProblemSpec {
        grid: g.clone(),
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        y_d: y_d.clone(),
        f: Nonlinearity::affine(&g, c0, d0),
        norm: NormChoice::L2,
        state: StateOptions::default(),
    };
    // dense A = -Laplacian + c0 on the n x n interior nodes
    let nn = n * n;
    let mut a = vec![vec![0.0; nn]; nn];
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            a[k][k] = 4.0 / (h * h) + c0;
            if i > 0 {
                a[k][k - 1] = -1.0 / (h * h);
            }
            if i + 1 < n {
                a[k][k + 1] = -1.0 / (h * h);
            }
            if j > 0 {
                a[k][k - n] = -1.0 / (h * h);
            }
            if j + 1 < n {
                a[k][k + n] = -1.0 / (h * h);
            }
        }
    }
    let y0 = dense_solve(a.clone(), vec![-d0; nn]);
    let (mx, my) = g.omega_shape();
    let m = mx * my;
    let (ox, oy) = g.omega_offset();
    let node = |c: usize| (oy + c / mx) * n + ox + c % mx;
    let s: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let mut e = vec![0.0; nn];
            e[node(c)] = 1.0;
            dense_solve(a.clone(), e)
        })
        .collect();
    // forward differences with zero slope across the far edges of omega
    let mut d: Vec<Vec<f64>> = Vec::new();
    for c in 0..m {
        let (x, yy) = (c % mx, c / mx);
        if x + 1 < mx {
            let mut r = vec![0.0; m];
            r[c] = -1.0 / h;
            r[c + 1] = 1.0 / h;
            d.push(r);
        }
        if yy + 1 < my {
            let mut r = vec![0.0; m];
            r[c] = -1.0 / h;
            r[c + mx] = 1.0 / h;
            d.push(r);
        }
    }
    let mut lhs = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for p in 0..m {
        for q in 0..m {
            let sts: f64 = (0..nn).map(|k| s[p][k] * s[q][k]).sum();
            let dtd: f64 = d.iter().map(|r| r[p] * r[q]).sum();
            lhs[p][q] = sts + eps * dtd;
        }
        rhs[p] = (0..nn).map(|k| s[p][k] * (y_d.values[k] - y0[k])).sum();
    }
    let want = dense_solve(lhs, rhs);

    let opts = InnerOptions {
        gtol_rel: 1e-12,
        ..Default::default()
    };
    for method in [InnerMethod::NewtonCg, InnerMethod::Lbfgs] {
        let r = solve_smooth_subproblem(&spec, eps, 0.1, &ControlField::zeros(m), &InnerOptions { method, ..opts }).unwrap();
        assert!(r.stats.converged, "{method:?}");
        let err = r.u.values.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "{method:?}: max error {err:e}");
    }
}

#[test]
fn reachable_target_is_stationary_at_zero() {
    let g = build_grid(15, 15, Window::square(0.25, 0.75)).unwrap();
    let f = Nonlinearity::constant(&g, 0.5, 1.0, 2.0);
    let y0 = solve_state(&g, &ControlField::zeros(g.omega_len()), &f, &StateOptions::default()).unwrap();
    for norm in [NormChoice::L2, NormChoice::LInf] {
        let spec = ProblemSpec::new(g.clone(), 1e-2, 0.3, 1e-3, y0.y.clone(), f.clone(), norm).unwrap();
        let r = solve_smooth_subproblem(&spec, 1e-3, 1e-2, &ControlField::zeros(g.omega_len()), &InnerOptions::default())
            .unwrap();
        assert!(r.stats.converged);
        assert_eq!(r.stats.iterations, 0);
        assert!(r.u.values.iter().all(|v| *v == 0.0));
    }
}

fn small_benchmark(norm: NormChoice, alpha: f64, cubic: bool) -> ProblemSpec {
    let g = build_grid(31, 31, Window::square(0.125, 0.875)).unwrap();
    let y_d = TwoBumps::default().sample(&g);
    let f = if cubic {
        Nonlinearity::constant(&g, 0.0, 1.0, 0.0)
    } else {
        Nonlinearity::affine(&g, 1.0, 0.0)
    };
    ProblemSpec::new(g, alpha, 0.0, 1e-4, y_d, f, norm).unwrap()
}

fn schedule(stages: usize) -> HomotopySchedule {
    HomotopySchedule {
        eps0: 1e-9,
        stages,
        ..Default::default()
    }
}

#[test]
fn accepted_iterates_descend() {
    for norm in [NormChoice::L2, NormChoice::LInf] {
        let spec = small_benchmark(norm, 1e-3, true);
        let r = homotopy_solve(&spec, &schedule(6)).unwrap();
        assert!(r.converged, "{norm}");
        assert!(r.stages.iter().all(|s| s.inner.monotone), "{norm}");
        // quasi-Newton needs many more iterations; a looser tolerance keeps
        // the test short
        let mut s = schedule(4);
        s.inner.method = InnerMethod::Lbfgs;
        s.inner.gtol_rel = 1e-6;
        let r = homotopy_solve(&spec, &s).unwrap();
        assert!(r.converged, "lbfgs {norm}");
        assert!(r.stages.iter().all(|s| s.inner.monotone), "lbfgs {norm}");
    }
}

#[test]
fn report_values_are_reproducible() {
    let spec = small_benchmark(NormChoice::L2, 1e-3, true);
    let r = homotopy_solve(&spec, &schedule(8)).unwrap();
    let g = &spec.grid;
    let last = r.last().unwrap();
    let j = objective::eval_j(&spec, &r.u).unwrap();
    assert!((j - last.j).abs() <= 1e-12 * j.abs());
    let h1 = g.dot_grad(&g.gradient(&r.u), &g.gradient(&r.u));
    assert!((last.j_eps - (j + 0.5 * last.eps * h1)).abs() <= 1e-12 * j.abs());
    assert!((last.eps_term - last.eps * h1).abs() <= 1e-12 * last.eps_term);
    for c in 0..r.lambda.len() {
        assert!(NormChoice::L2.dual(r.lambda.at(c)) <= 1.0);
    }
    // gamma > 0: successive controls settle
    let changes: Vec<f64> = r.stages.iter().filter_map(|s| s.l2_change).collect();
    assert!(changes.windows(2).all(|w| w[1] < w[0]), "{changes:?}");
    assert!(changes[changes.len() - 1] <= 0.05 * changes[0]);
}

#[test]
fn affine_problem_has_a_unique_solution() {
    for norm in [NormChoice::L2, NormChoice::LInf] {
        let spec = small_benchmark(norm, 1e-3, false);
        let g = &spec.grid;
        let a = homotopy_solve_from(&spec, &schedule(12), Some(&random_control(g, 1, 1.0))).unwrap();
        let b = homotopy_solve_from(&spec, &schedule(12), Some(&random_control(g, 2, 1.0))).unwrap();
        let rel = g.norm_omega(&a.u.add_scaled(-1.0, &b.u)) / g.norm_omega(&a.u);
        assert!(rel <= 1e-3, "{norm}: relative distance {rel:e}");
    }
}

#[test]
fn total_variation_decreases_along_alpha() {
    for norm in [NormChoice::L2, NormChoice::LInf] {
        let mut prev = f64::INFINITY;
        for alpha in [5e-4, 1e-3, 2e-3] {
            let spec = small_benchmark(norm, alpha, true);
            let r = homotopy_solve(&spec, &schedule(10)).unwrap();
            let tv = r.last().unwrap().tv;
            assert!(tv <= prev * (1.0 + 1e-6), "{norm}: TV {tv} after {prev}");
            prev = tv;
        }
    }
}

#[test]
fn smoothed_dual_examples() {
    let g = build_grid(15, 15, Window::square(0.2, 0.8)).unwrap();
    for norm in [NormChoice::L2, NormChoice::LInf] {
        let lam = dual_from_smoothed(&g, &ControlField::constant(g.omega_len(), 3.0), 0.1, norm);
        assert!(lam.gx.iter().chain(&lam.gy).all(|v| *v == 0.0));
        let step = g.control_from_fn(|x, _| if x > 0.5 { 1.0 } else { 0.0 });
        let lam = dual_from_smoothed(&g, &step, 0.1, norm);
        let gu = g.gradient(&step);
        for c in 0..gu.len() {
            if gu.gx[c] != 0.0 {
                assert_eq!(lam.at(c), [1.0, 0.0]);
            }
        }
        let delta = 0.05;
        for seed in 0..20 {
            let u = random_control(&g, seed, 0.2);
            let gu = g.gradient(&u);
            let lam = dual_from_smoothed(&g, &u, delta, norm);
            let tv = objective::tv_of_gradient(&g, &gu, norm);
            assert!(g.dot_grad(&lam, &gu) >= tv - delta * g.omega_area() - 1e-12);
        }
    }
}
