use proptest::prelude::*;

use vshp_core::grid::{average_frequency, low_pass, two_area_step, TwoAreaParams, TwoAreaState};
use vshp_core::integrator::{rk4_step_with_wave, StepConfig};
use vshp_core::plant::{
    equilibrium, inlet_angle, optimal_speed, plant_derivatives, turbine_power, wave_update, NX,
};
use vshp_core::PlantParameters;

fn params() -> PlantParameters {
    PlantParameters::shipped_default()
}

fn quiet_grid() -> TwoAreaParams {
    TwoAreaParams { h_1: 6.5, h_2: 6.175, d_1: 0.0, d_2: 0.0, k_t: 0.294, omega_b: 100.0 * std::f64::consts::PI }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equilibria_are_fixed_points(p_g in 0.4f64..0.95) {
        let p = params();
        let eq = equilibrium(p_g, &p).unwrap();
        let d = plant_derivatives(&eq.state.to_array(), &eq.inputs.to_array(), &p).unwrap();
        let worst = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(worst < 1e-10, "p_g {p_g}: {d:?}");
    }

    #[test]
    fn optimal_speed_is_monotone_and_continuous(a in 0.0f64..1.2, step in 0.0f64..1e-3) {
        let (lo, hi) = (optimal_speed(a), optimal_speed(a + step));
        prop_assert!(hi >= lo);
        // Steepest slope is 0.6.
        prop_assert!(hi - lo <= 0.6 * step + 1e-15);
    }

    #[test]
    fn wave_keeps_its_magnitude_under_constant_flow(h0 in -0.1f64..0.1, q in 0.2f64..1.2, n in 1usize..50) {
        let mut h = h0;
        for _ in 0..n {
            h = wave_update(h, q, q, params().hydraulic.z_0);
            prop_assert_eq!(h.abs(), h0.abs());
        }
    }

    #[test]
    fn power_is_quadratic_in_flow(g in 0.2f64..1.1, omega in 0.8f64..1.3, h in 0.7f64..1.2) {
        let mut tp = params().turbine;
        tp.psi = 0.0;
        let pm = |q: f64| turbine_power(q, g, omega, h, &tp).unwrap();
        let (q0, q1, q2) = (0.3, 0.6, 0.9);
        let (y0, y1, y2) = (pm(q0), pm(q1), pm(q2));
        // Lagrange quadratic through three samples, evaluated at a fourth.
        let q = 1.1;
        let l0 = (q - q1) * (q - q2) / ((q0 - q1) * (q0 - q2));
        let l1 = (q - q0) * (q - q2) / ((q1 - q0) * (q1 - q2));
        let l2 = (q - q0) * (q - q1) / ((q2 - q0) * (q2 - q1));
        let fit = y0 * l0 + y1 * l1 + y2 * l2;
        prop_assert!((fit - pm(q)).abs() < 1e-12 * pm(q).abs().max(1.0));
    }

    #[test]
    fn inlet_angle_increases_with_opening(g in 0.01f64..1.19, dg in 1e-6f64..1e-2) {
        let tp = params().turbine;
        let g1 = (g + dg).min(tp.g_max);
        prop_assume!(g1 > g);
        prop_assert!(inlet_angle(g1, &tp).unwrap() > inlet_angle(g, &tp).unwrap());
    }

    #[test]
    fn low_pass_settles_to_its_input_and_stays_bounded(x in -5.0f64..5.0, corner in 0.1f64..20.0, dt in 0.01f64..0.5) {
        let mut y = 0.0;
        for _ in 0..2000 {
            y = low_pass(y, x, corner, dt);
            prop_assert!(y.abs() <= x.abs() + 1e-15);
        }
        prop_assert!((y - x).abs() < 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn average_frequency_ignores_inertia_scale(
        hs in prop::collection::vec(0.5f64..10.0, 1..6),
        k in 0.01f64..100.0,
        seed in 0u64..1000,
    ) {
        let ws: Vec<f64> = hs.iter().enumerate().map(|(i, _)| 1.0 + 0.01 * ((seed + i as u64) % 7) as f64).collect();
        let scaled: Vec<f64> = hs.iter().map(|h| h * k).collect();
        let a = average_frequency(&hs, &ws).unwrap();
        let b = average_frequency(&scaled, &ws).unwrap();
        prop_assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn undamped_two_area_conserves_inertial_momentum(df1 in -0.01f64..0.01, df2 in -0.01f64..0.01, delta in -0.5f64..0.5) {
        let gp = quiet_grid();
        let momentum = |s: &TwoAreaState| 2.0 * gp.h_1 * s.df_1 + 2.0 * gp.h_2 * s.df_2;
        let mut st = TwoAreaState { df_1: df1, df_2: df2, delta };
        let m0 = momentum(&st);
        for _ in 0..200 {
            st = two_area_step(&st, &gp, [0.0, 0.0], 0.05);
        }
        prop_assert!((momentum(&st) - m0).abs() < 1e-14);
    }

    #[test]
    fn plant_steps_are_deterministic(dg in -0.05f64..0.05, dp in -0.1f64..0.1) {
        let p = params();
        let eq = equilibrium(0.8, &p).unwrap();
        let x = eq.state.to_array();
        let mut u = eq.inputs.to_array();
        u[1] += dg;
        u[2] += dp;
        let cfg = StepConfig::for_plant(&p);
        let a: [f64; NX] = rk4_step_with_wave(&x, &u, &p, &cfg).unwrap();
        let b: [f64; NX] = rk4_step_with_wave(&x, &u, &p, &cfg).unwrap();
        prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }
}
