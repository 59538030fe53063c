use std::f64::consts::PI;

use hypi::design::{gain_bounds, p_matrix_certificate, pi_fn, select_params, PI_ARGMAX};
use hypi::flux::FluxModel;
use hypi::io::{format_value, Table};
use hypi::lyapunov::{eval_s, sandwich_constant, x_norm_sq, ShiftedState};
use hypi::sim::{derivative_fields, LoopConfig};
use hypi::spectral::{find_poles, h_fn, PoleKind};
use proptest::prelude::*;

fn fluxes() -> Vec<FluxModel> {
    vec![
        FluxModel::quadratic(3.0).unwrap().shift(0.4),
        FluxModel::quadratic_shifted(-0.7, 0.5).unwrap(),
        FluxModel::table(vec![-3.0, -1.0, 0.0, 0.5, 2.0, 3.0], vec![4.0, 2.0, 1.5, 1.6, 3.0, 5.0]).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn averaged_derivatives_reconstruct_the_flux(z in -1.5f64..1.5) {
        for f in fluxes() {
            let r = f.eval(0.0);
            let scale = 1.0 + f.eval(z).abs();
            prop_assert!((r + z * f.f1(z) - f.eval(z)).abs() < 1e-12 * scale);
            prop_assert!((f.d1(0.0) + z * f.f2(z) - f.d1(z)).abs() < 1e-10 * (1.0 + f.d1(z).abs()));
            let f3 = f.f3(z).unwrap();
            prop_assert!((1.0 / r - z * f3 - 1.0 / f.eval(z)).abs() < 1e-12);
            prop_assert!((f3 - f.f3_quadrature(z).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn certified_gains_have_positive_definite_weights(
        r in 0.1f64..10.0,
        length in 0.1f64..100.0,
        frac in 0.001f64..0.999,
    ) {
        let ki = frac * gain_bounds(r, length).unwrap().lyapunov_conservative;
        let p = select_params(ki, r, length, None).unwrap();
        let c = p_matrix_certificate(&p, r, length);
        prop_assert!(c.det >= c.det_lower_bound);
        prop_assert!(c.lambda_min > 0.0 && c.holds);
        prop_assert!(p.margin(r, length) > 0.0);
    }

    #[test]
    fn pi_never_exceeds_its_value_at_the_argmax(z in 0.0f64..=2.0) {
        prop_assert!(pi_fn(z).unwrap() <= pi_fn(PI_ARGMAX).unwrap() + 1e-15);
    }

    #[test]
    fn conservative_bound_is_below_the_sharp_bound(r in 0.01f64..100.0, length in 0.01f64..100.0) {
        let b = gain_bounds(r, length).unwrap();
        prop_assert!(b.lyapunov_conservative < b.linear_sharp);
        prop_assert!((b.linear_sharp - r * PI / (2.0 * length)).abs() <= 1e-14 * b.linear_sharp);
    }

    #[test]
    fn poles_come_in_conjugate_pairs(alpha in 0.01f64..5.0) {
        let report = find_poles(alpha, 6).unwrap();
        for p in report.poles.iter().filter(|p| matches!(p.kind, PoleKind::Complex { .. })) {
            let partner = report.poles.iter().any(|q| (q.mu - p.mu.conj()).norm() < 1e-9 * (1.0 + p.mu.norm()));
            prop_assert!(partner);
        }
        for p in &report.poles {
            prop_assert!(p.residual <= 1e-10 * (1.0 + p.mu.norm()));
        }
    }

    #[test]
    fn stability_matches_the_sharp_gain(alpha in 0.05f64..3.0) {
        prop_assume!((alpha - PI / 2.0).abs() > 1e-3);
        let report = find_poles(alpha, 6).unwrap();
        prop_assert_eq!(report.rightmost_real < 0.0, alpha < PI / 2.0);
    }

    #[test]
    fn h_is_increasing_on_its_branches(a in 1e-3f64..(PI - 1e-3), d in 1e-6f64..1e-2, k in 0usize..3) {
        let lo = 2.0 * PI * k as f64 + a;
        let hi = lo + d;
        prop_assume!(hi < (2 * k + 1) as f64 * PI - 1e-3);
        prop_assert!(h_fn(hi).unwrap() >= h_fn(lo).unwrap());
    }

    #[test]
    fn csv_cells_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 1..20)) {
        let mut t = Table::new(&["v"]);
        for v in &values {
            t.push(vec![*v]);
        }
        let back = Table::parse(&t.to_csv()).unwrap();
        prop_assert_eq!(back.to_csv(), t.to_csv());
        for (a, b) in back.column(0).iter().zip(&values) {
            prop_assert_eq!(format_value(*a), format_value(*b));
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn s_is_sandwiched_by_the_x_norm(
        modes in proptest::collection::vec(-1.0f64..1.0, 4),
        xi in -1.0f64..1.0,
        offset in -0.5f64..0.5,
        frac in 0.05f64..0.95,
    ) {
        let mut cfg = LoopConfig::benchmark();
        let r_eff = 3.16;
        cfg.ki = frac * gain_bounds(r_eff, cfg.length).unwrap().lyapunov_conservative;
        let params = select_params(cfg.ki, r_eff, cfg.length, None).unwrap();
        let dx = cfg.dx();
        let phi: Vec<f64> = cfg
            .grid()
            .iter()
            .map(|x| {
                offset + modes.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x / cfg.length).sin()).sum::<f64>()
            })
            .collect();
        let (s, p) = derivative_fields(&phi, dx);
        let state = ShiftedState { t: 0.0, phi, s, p, xi };
        let x2 = x_norm_sq(&state, dx);
        prop_assume!(x2 > 1e-12);
        let ratio = eval_s(&state, &params, dx).s / x2;
        let k = sandwich_constant(&params, r_eff, cfg.length);
        prop_assert!(ratio >= (1.0 - 1e-12) / k && ratio <= k * (1.0 + 1e-12), "ratio {ratio}, K {k}");
    }
}
