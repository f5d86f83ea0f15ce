use bvcontrol::grid::{build_grid, ControlField, GradField, Grid, Window};
use bvcontrol::measures::{self, Atom, PointMassMeasure};
use bvcontrol::norm::NormChoice;
use bvcontrol::objective::{eval_tv, eval_tv_smoothed, tv_directional_derivative};
use proptest::prelude::*;

fn grid() -> Grid {
    build_grid(15, 15, Window::new(0.2, 0.7, 0.3, 0.8)).unwrap()
}

fn control(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn norm_choice() -> impl Strategy<Value = NormChoice> {
    prop_oneof![Just(NormChoice::L2), Just(NormChoice::LInf)]
}

fn measure(norm: NormChoice) -> impl Strategy<Value = PointMassMeasure> {
    // atoms on a coarse lattice so that two measures share locations often
    prop::collection::btree_map((0u8..6, 0u8..6), (-3.0f64..3.0, -3.0f64..3.0), 0..6).prop_map(move |m| {
        let atoms = m
            .into_iter()
            .map(|((i, j), (a, b))| {
                let a = if a.abs() < 0.3 { 0.0 } else { a };
                Atom::new([0.1 + 0.15 * i as f64, 0.1 + 0.15 * j as f64], [a, b])
            })
            .collect();
        PointMassMeasure::new(atoms, norm).unwrap()
    })
}

fn norm_and_pair() -> impl Strategy<Value = (PointMassMeasure, PointMassMeasure)> {
    norm_choice().prop_flat_map(|n| (measure(n), measure(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_divergence_adjoint(u in control(64), px in control(64), py in control(64)) {
        let g = build_grid(9, 9, Window::square(0.1, 0.8)).unwrap();
        let u = ControlField::from_vec(u);
        let p = GradField { gx: px, gy: py };
        let lhs = g.dot_grad(&g.gradient(&u), &p);
        let rhs = g.dot_omega(&u, &g.divergence(&p));
        prop_assert!((lhs + rhs).abs() <= 1e-12 * (g.norm_omega(&u) * g.norm_grad(&p)).max(1e-300));
    }

    #[test]
    fn tv_is_convex_and_homogeneous(a in control(64), b in control(64), t in 0.0f64..5.0, norm in norm_choice()) {
        let g = grid();
        prop_assert_eq!(g.omega_len(), 64);
        let (a, b) = (ControlField::from_vec(a), ControlField::from_vec(b));
        let mid = a.scaled(0.5).add_scaled(0.5, &b);
        let lhs = eval_tv(&g, &mid, norm);
        let rhs = 0.5 * eval_tv(&g, &a, norm) + 0.5 * eval_tv(&g, &b, norm);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        let scaled = eval_tv(&g, &a.scaled(t), norm);
        prop_assert!((scaled - t * eval_tv(&g, &a, norm)).abs() <= 1e-12 * scaled.max(1.0));
    }

    #[test]
    fn isotropic_anisotropic_sandwich(a in control(64)) {
        let g = grid();
        let u = ControlField::from_vec(a);
        let iso = eval_tv(&g, &u, NormChoice::L2);
        let aniso = eval_tv(&g, &u, NormChoice::LInf);
        prop_assert!(iso <= aniso * (1.0 + 1e-14));
        prop_assert!(aniso <= 2f64.sqrt() * iso * (1.0 + 1e-14));
    }

    #[test]
    fn mean_plus_tv_bounded_by_bv_norm(a in control(64), norm in norm_choice()) {
        let g = grid();
        let u = ControlField::from_vec(a);
        let tv = eval_tv(&g, &u, norm);
        let lhs = g.mean(&u).abs() + tv;
        let c = 1f64.max(1.0 / g.omega_area());
        prop_assert!(lhs <= c * (g.l1_norm(&u) + tv) * (1.0 + 1e-14));
    }

    #[test]
    fn huber_dual_is_an_approximate_subgradient(
        ubar in control(64), u in control(64), norm in norm_choice(), delta in 1e-3f64..1.0
    ) {
        let g = grid();
        let (ubar, u) = (ControlField::from_vec(ubar), ControlField::from_vec(u));
        let s = eval_tv_smoothed(&g, &ubar, norm, delta).unwrap();
        let diff = u.add_scaled(-1.0, &ubar);
        let lin = eval_tv(&g, &ubar, norm) + g.dot_omega(&s.gradient, &diff);
        let slack = 2.0 * delta * g.omega_area();
        prop_assert!(eval_tv(&g, &u, norm) >= lin - slack - 1e-9 * lin.abs());
        // the directional derivative dominates the linear form except on
        // active cells the Huber dual has not saturated yet
        let theta = 1e-12;
        let d = tv_directional_derivative(&g, &ubar, &diff, norm, theta);
        let gb = g.gradient(&ubar);
        let gd = g.gradient(&diff);
        let mut unsaturated = 0.0;
        for c in 0..g.omega_len() {
            let [bx, by] = gb.at(c);
            let [dx, dy] = gd.at(c);
            match norm {
                NormChoice::L2 => if bx.hypot(by) < delta { unsaturated += dx.hypot(dy) },
                NormChoice::LInf => {
                    if bx.abs() < delta { unsaturated += dx.abs() }
                    if by.abs() < delta { unsaturated += dy.abs() }
                }
            }
        }
        let lhs = g.dot_omega(&s.gradient, &diff) - g.cell_weight() * unsaturated;
        prop_assert!(d >= lhs - 1e-9 * d.abs().max(1.0));
    }

    #[test]
    fn measure_norm_is_convex_and_homogeneous((mu, nu) in norm_and_pair(), t in 0.0f64..4.0) {
        let sum = measures::tv_norm(&mu.add_scaled(1.0, &nu));
        prop_assert!(sum <= (measures::tv_norm(&mu) + measures::tv_norm(&nu)) * (1.0 + 1e-14));
        prop_assert!((measures::tv_norm(&mu.scaled(t)) - t * measures::tv_norm(&mu)).abs() <= 1e-12);
        match mu.norm_choice() {
            NormChoice::LInf => {
                let [a, b] = mu.component_norms();
                prop_assert!((measures::tv_norm(&mu) - (a + b)).abs() <= 1e-12);
            }
            NormChoice::L2 => prop_assert!(measures::tv_norm(&mu) >= measures::component_aggregate(&mu) * (1.0 - 1e-14)),
        }
    }

    #[test]
    fn directional_derivative_bounds((mu, nu) in norm_and_pair()) {
        let d = measures::directional_derivative(&mu, &nu).unwrap();
        let n = measures::tv_norm(&nu);
        prop_assert!(d <= n * (1.0 + 1e-14) + 1e-14);
        prop_assert!(d >= -n * (1.0 + 1e-14) - 1e-14);
    }

    #[test]
    fn decomposition_is_consistent((mu, nu) in norm_and_pair()) {
        let dec = measures::lebesgue_decompose(&nu, &mu).unwrap();
        let ac = dec.absolutely_continuous(nu.norm_choice());
        let total = measures::tv_norm(&ac) + measures::tv_norm(&dec.singular);
        prop_assert!((total - measures::tv_norm(&nu)).abs() <= 1e-12);
        let rebuilt = ac.add_scaled(1.0, &dec.singular);
        for a in nu.atoms() {
            let w = rebuilt.weight_at(a.at);
            prop_assert!((w[0] - a.weight[0]).abs() <= 1e-12 && (w[1] - a.weight[1]).abs() <= 1e-12);
        }
    }
}
