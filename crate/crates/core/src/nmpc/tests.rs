use super::*;
use crate::config::ControllerConfig;
use crate::nlp::check_derivatives;
use crate::plant::{equilibrium, Equilibrium};

fn setup(p_g: f64) -> (PlantParameters, MpcConfig, Equilibrium) {
    let params = PlantParameters::shipped_default();
    let cfg = ControllerConfig::shipped_default().mpc;
    let eq = equilibrium(p_g, &params).unwrap();
    (params, cfg, eq)
}

fn signals(eq: &Equilibrium) -> MpcSignals {
    MpcSignals { p_pb: eq.inputs.p_pb, f_bar: 1.0, p_g_measured: eq.p_g }
}

fn solve_once(ocp: &Ocp, cfg: &MpcConfig) -> NlpSolution {
    let sc = SolverConfig { max_iter: cfg.max_iter, ..SolverConfig::default() };
    nlp::solve(ocp, &sc).unwrap()
}

#[test]
fn shipped_weights_and_bounds() {
    let cfg = ControllerConfig::shipped_default().mpc;
    let w = cfg.weights;
    assert_eq!((w.omega, w.omega_terminal, w.p_g_star, w.f), (1000.0, 10000.0, 1000.0, 1e7));
    assert_eq!((w.dg_star, w.dg_star_5, w.dh_p, w.efficiency_factor), (1000.0, 1000.0, 1e10, 10.0));
    assert_eq!(cfg.bounds.g_star, [0.1, 1.2]);
    assert_eq!(cfg.bounds.p_g, [0.0, 1.0]);
    assert_eq!((cfg.slack.q.lo, cfg.slack.q.hi, cfg.slack.q.s), (Some(0.3), Some(1.3), 1.0));
    assert_eq!((cfg.slack.h_st.lo, cfg.slack.h_st.s), (Some(0.5), 1e5));
    assert_eq!((cfg.slack.h.hi, cfg.slack.h.s), (Some(1.1), 1e5));
    assert_eq!((cfg.slack.omega.lo, cfg.slack.omega.hi, cfg.slack.omega.s), (Some(0.7), Some(2.0), 1e4));
    assert_eq!(cfg.p_g_star_ref, 0.8);
    assert!(cfg.slack.specs().iter().all(|s| s.rho == 0.0));
}

#[test]
fn config_validation() {
    let (_, cfg, _) = setup(0.8);
    let mut c = cfg.clone();
    c.horizon = 4;
    assert!(c.validate().is_err());
    let mut c = cfg.clone();
    c.bounds.g_star = [1.2, 0.1];
    assert!(c.validate().is_err());
    let mut c = cfg.clone();
    c.weights.f = -1.0;
    assert!(c.validate().is_err());
    let mut c = cfg;
    c.slack.omega.lo = Some(3.0);
    assert!(c.validate().is_err());
}

#[test]
fn underfilled_history_is_rejected() {
    let (params, cfg, eq) = setup(0.8);
    let err = build_ocp(&eq.state.to_array(), &[eq.state.g; 3], &signals(&eq), &cfg, &params, None);
    assert!(matches!(err, Err(MpcError::HistoryUnderfilled { have: 3, need: 5 })));
}

#[test]
fn inverted_bounds_are_rejected() {
    let (params, mut cfg, eq) = setup(0.8);
    cfg.bounds.p_g = [1.0, 0.0];
    let err = build_ocp(&eq.state.to_array(), &[eq.state.g; 5], &signals(&eq), &cfg, &params, None);
    assert!(matches!(err, Err(MpcError::Config(_))));
}

#[test]
fn reference_assembly() {
    let (params, mut cfg, _) = setup(0.8);
    let r = reference_assembler(0.85, 0.998, &cfg, &params);
    assert!(r.omega.iter().all(|w| (*w - 1.0).abs() < 1e-12));
    assert!(r.f.iter().all(|f| *f == params.vsg.f_star));
    assert!(r.p_g_star.iter().all(|p| *p == 0.8));
    assert_eq!(r.omega.len(), cfg.horizon);
    cfg.pod_enabled = true;
    let r = reference_assembler(0.85, 0.998, &cfg, &params);
    assert!(r.f.iter().all(|f| *f == 0.998));
}

#[test]
fn layout_indices() {
    let (params, cfg, eq) = setup(0.8);
    let ocp = build_ocp(&eq.state.to_array(), &[eq.state.g; 5], &signals(&eq), &cfg, &params, None).unwrap();
    let n = cfg.horizon;
    assert_eq!(ocp.layout().len(), 2 * n + NX * n + NSLACK * n);
    assert_eq!(ocp.ix(1), 2 * n);
    assert_eq!(ocp.ie(n) + NSLACK, ocp.layout().len());
    assert_eq!(ocp.n_eq(), NX * n);
    let dep = ocp.dependents().unwrap();
    assert_eq!(dep.len(), NX * n);
    assert_eq!(dep[0], ocp.ix(1));
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let (params, cfg, eq) = setup(0.8);
    let ocp = build_ocp(&eq.state.to_array(), &[eq.state.g; 5], &signals(&eq), &cfg, &params, None).unwrap();
    let sol = solve_once(&ocp, &cfg);
    assert_eq!(sol.status, SolveStatus::Converged);
    let (p, g) = ocp.first_input(&sol.x);
    assert!((p - eq.inputs.p_g_star).abs() < 1e-4, "P* {p} vs {}", eq.inputs.p_g_star);
    assert!((g - eq.inputs.g_star).abs() < 1e-4, "g* {g} vs {}", eq.inputs.g_star);
    for st in ocp.slacks(&sol.x) {
        assert!(st.iter().all(|e| e.abs() < 1e-8), "{st:?}");
    }
}

#[test]
fn analytic_derivatives_match_differences() {
    let (params, mut cfg, eq) = setup(0.7);
    cfg.efficiency_cost = true;
    // Smaller weights keep the objective, and so the difference noise, small.
    cfg.weights = cfg.weights.scaled(1e-5);
    cfg.weights.efficiency_factor = 10.0;
    cfg.delta_x_high = Some([0.1; NX]);
    let mut x0 = eq.state.to_array();
    x0[DF] = 0.003;
    x0[HP] = 0.01;
    x0[OMEGA] += 0.02;
    let sig = MpcSignals { p_pb: -0.75, f_bar: 1.001, p_g_measured: 0.72 };
    let hist = [eq.state.g, eq.state.g + 0.01, eq.state.g - 0.02, eq.state.g, eq.state.g + 0.03];
    let ocp = build_ocp(&x0, &hist, &sig, &cfg, &params, None).unwrap();
    let mut v = ocp.initial_guess();
    for (k, vk) in v.iter_mut().enumerate() {
        *vk += 1e-3 * ((k as f64) * 0.7).sin();
    }
    let rep = check_derivatives(&ocp, &v).unwrap();
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
}

#[test]
fn head_slack_accounts_for_objective() {
    let (params, mut cfg, eq) = setup(0.8);
    // A raised storage level pushes the turbine head above its limit.
    cfg.slack.h.rho = 3.0;
    let mut x0 = eq.state.to_array();
    x0[HST] += 0.35;
    let ocp = build_ocp(&x0, &[eq.state.g; 5], &signals(&eq), &cfg, &params, None).unwrap();
    let sol = solve_once(&ocp, &cfg);
    assert_eq!(sol.status, SolveStatus::Converged);
    let slacks = ocp.slacks(&sol.x);
    assert!(slacks.iter().any(|s| s[2] > 1e-4), "h slack never active: {:?}", slacks[0]);
    let expected: f64 = slacks
        .iter()
        .flat_map(|s| s.iter().zip(cfg.slack.specs()))
        .map(|(e, sp)| 0.5 * sp.s * e * e + sp.rho * e)
        .sum();
    let without = ocp.objective_without_slack_cost(&sol.x).unwrap();
    assert!(((sol.objective - without) - expected).abs() <= 1e-9 * sol.objective.abs().max(1.0));
    // No slack exceeds the violation it covers.
    for t in 1..=cfg.horizon {
        let x = ocp.state(&sol.x, t);
        let h = ocp.head(&x);
        assert!(slacks[t - 1][2] <= (h - 1.1).max(0.0) + 1e-8);
    }
}

#[test]
fn single_step_matches_grid_search() {
    let (params, mut cfg, eq) = setup(0.8);
    cfg.horizon = 1;
    let mut x0 = eq.state.to_array();
    x0[OMEGA] -= 0.03;
    x0[DF] = -0.002;
    let sig = MpcSignals { p_pb: -0.78, f_bar: 1.0, p_g_measured: 0.8 };
    let hist = [eq.state.g; 5];
    let ocp = build_ocp(&x0, &hist, &sig, &cfg, &params, None).unwrap();
    let sol = solve_once(&ocp, &cfg);
    assert_eq!(sol.status, SolveStatus::Converged, "{:?} after {} iterations", sol.kkt, sol.iterations);

    // Brute force: the stage state is determined by (P*, g*); the slacks
    // take their smallest feasible values.
    let cost = |p: f64, g: f64| -> Option<f64> {
        let mut v = ocp.initial_guess();
        v[0] = p;
        v[1] = g;
        let x1 = ocp.stage_step(&x0, p, g, 0).ok()?;
        v[ocp.ix(1)..ocp.ix(1) + NX].copy_from_slice(&x1);
        for k in 0..NSLACK {
            v[ocp.ie(1) + k] = 0.0;
        }
        let mut viol = [0.0f64; NSLACK];
        for row in &ocp.rows {
            if let Row::StateLo { slack, .. } | Row::StateHi { slack, .. } | Row::HeadHi { slack, .. } = row {
                viol[*slack] = viol[*slack].max(ocp.row_value(&v, row));
            }
        }
        for k in 0..NSLACK {
            v[ocp.ie(1) + k] = viol[k].max(0.0);
        }
        if ocp.rows.iter().any(|r| matches!(r, Row::PgLo { .. } | Row::PgHi { .. }) && ocp.row_value(&v, r) > 0.0) {
            return None;
        }
        Some(ocp.values(&v).ok()?.f)
    };
    // 200×200 grid, zoomed onto the bounding box of its lowest cells. The
    // valley of this cost is narrow and oblique, so a fixed window around
    // the best cell can lose the minimum.
    let m = 200;
    let (mut p_lo, mut p_hi) = (0.6, 1.0);
    let (mut g_lo, mut g_hi) = (eq.state.g - 0.2, eq.state.g + 0.2);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let (mut dp, mut dg) = (0.0, 0.0);
    for _level in 0..5 {
        dp = (p_hi - p_lo) / (m - 1) as f64;
        dg = (g_hi - g_lo) / (m - 1) as f64;
        let mut pts = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let p = p_lo + dp * i as f64;
                let g = g_lo + dg * j as f64;
                if let Some(c) = cost(p, g) {
                    pts.push((c, p, g));
                }
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts[0].0 < best.0 {
            best = pts[0];
        }
        let low = &pts[..100];
        p_lo = low.iter().map(|t| t.1).fold(f64::INFINITY, f64::min) - dp;
        p_hi = low.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max) + dp;
        g_lo = low.iter().map(|t| t.2).fold(f64::INFINITY, f64::min) - dg;
        g_hi = low.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max) + dg;
    }
    // The last levels go below what the KKT tolerance pins down along the
    // valley, so position agreement is floored at 1e-7.
    let (dp, dg) = (dp.max(1e-7), dg.max(1e-7));
    let (p, g) = ocp.first_input(&sol.x);
    assert!(
        (p - best.1).abs() <= dp && (g - best.2).abs() <= dg,
        "solver ({p}, {g}) vs grid ({}, {}) at resolution ({dp:.2e}, {dg:.2e})",
        best.1,
        best.2
    );
    assert!(sol.objective <= best.0 + 1e-6 * best.0);
}

#[test]
fn low_speed_reduces_power_reference() {
    let (params, cfg, eq) = setup(0.8);
    // Gate fully open, flow high and the runner below its speed floor.
    let mut x0 = eq.state.to_array();
    x0[OMEGA] = 0.69;
    x0[G] = cfg.bounds.g_star[1];
    x0[Q] = crate::plant::steady_flow(x0[G], 0.69, &params);
    x0[QHR] = x0[Q];
    let sig = MpcSignals { p_pb: -0.8, f_bar: 1.0, p_g_measured: 0.8 };
    let ocp = build_ocp(&x0, &[cfg.bounds.g_star[1]; 5], &sig, &cfg, &params, None).unwrap();
    let sol = solve_once(&ocp, &cfg);
    assert_eq!(sol.status, SolveStatus::Converged);
    let (p, _) = ocp.first_input(&sol.x);
    assert!(p < 0.8 - 1e-3, "P* = {p}");
}

#[test]
fn uniform_weight_scaling_keeps_the_argmin() {
    let (params, cfg, eq) = setup(0.8);
    let mut x0 = eq.state.to_array();
    x0[OMEGA] -= 0.02;
    x0[DF] = 0.001;
    let sig = MpcSignals { p_pb: -0.82, f_bar: 1.0, p_g_measured: 0.8 };
    let run = |k: f64| {
        let mut c = cfg.clone();
        c.weights = c.weights.scaled(k);
        for s in [&mut c.slack.q, &mut c.slack.h_st, &mut c.slack.h, &mut c.slack.omega] {
            s.s *= k;
            s.rho *= k;
        }
        let ocp = build_ocp(&x0, &[eq.state.g; 5], &sig, &c, &params, None).unwrap();
        let sol = solve_once(&ocp, &c);
        assert_eq!(sol.status, SolveStatus::Converged);
        ocp.first_input(&sol.x)
    };
    let (p1, g1) = run(1.0);
    let (p2, g2) = run(7.5);
    assert!((p1 - p2).abs() < 1e-5 && (g1 - g2).abs() < 1e-5, "({p1}, {g1}) vs ({p2}, {g2})");
}

#[test]
fn pod_frequency_reference_moves_the_first_input() {
    let (params, mut cfg, eq) = setup(0.8);
    cfg.pod_enabled = true;
    let x0 = eq.state.to_array();
    let solve_with = |c: &MpcConfig, f_bar: f64| {
        let sig = MpcSignals { p_pb: eq.inputs.p_pb, f_bar, p_g_measured: eq.p_g };
        let ocp = build_ocp(&x0, &[eq.state.g; 5], &sig, c, &params, None).unwrap();
        let sol = solve_once(&ocp, c);
        assert_eq!(sol.status, SolveStatus::Converged);
        ocp.first_input(&sol.x)
    };
    let base = solve_with(&cfg, 1.0);
    let moved = solve_with(&cfg, 1.0 - 2e-4);
    assert!((base.0 - moved.0).abs() > 1e-4, "{base:?} vs {moved:?}");
    cfg.weights.f = 0.0;
    let base = solve_with(&cfg, 1.0);
    let moved = solve_with(&cfg, 1.0 - 2e-4);
    assert!((base.0 - moved.0).abs() < 1e-9 && (base.1 - moved.1).abs() < 1e-9);
}

#[test]
fn predicted_first_state_matches_the_simulator() {
    let (params, cfg, eq) = setup(0.8);
    let mut x0 = eq.state.to_array();
    x0[DF] = -0.002;
    let sig = MpcSignals { p_pb: -0.85, f_bar: 1.0, p_g_measured: 0.8 };
    let mut mpc = Mpc::new(cfg.clone(), params, [eq.inputs.p_g_star, eq.inputs.g_star]);
    let out = mpc.solve(&x0, &[eq.state.g; 5], &sig).unwrap();
    assert_eq!(out.status, MpcStatus::Optimal);
    let u = [out.p_g_star, out.g_star, sig.p_pb];
    let x1 = rk4_step_with_wave(&x0, &u, &params, &StepConfig::for_plant(&params)).unwrap();
    let pred = out.diagnostics.predicted[0];
    for i in 0..NX {
        assert!((x1[i] - pred[i]).abs() < 1e-8, "state {i}: {} vs {}", x1[i], pred[i]);
    }
}

#[test]
fn fallback_holds_and_clamps() {
    let (params, mut cfg, eq) = setup(0.8);
    cfg.max_iter = 0;
    let mut x0 = eq.state.to_array();
    x0[DF] = -0.004;
    let mut mpc = Mpc::new(cfg, params, [0.77, 1.5]);
    let out = mpc.solve(&x0, &[eq.state.g; 5], &signals(&eq)).unwrap();
    assert_eq!(out.status, MpcStatus::Fallback);
    assert_eq!(out.p_g_star, 0.77);
    assert_eq!(out.g_star, 1.2);
}

#[test]
fn early_stopped_feasible_iterate_is_applied() {
    let (params, mut cfg, eq) = setup(0.8);
    cfg.max_iter = 1;
    cfg.acceptable_stationarity = 1e9;
    let mut x0 = eq.state.to_array();
    x0[DF] = -0.004;
    let mut mpc = Mpc::new(cfg.clone(), params, [eq.inputs.p_g_star, eq.inputs.g_star]);
    let out = mpc.solve(&x0, &[eq.state.g; 5], &signals(&eq)).unwrap();
    assert_eq!(out.status, MpcStatus::Acceptable);
    assert_eq!(mpc.last_applied(), [out.p_g_star, out.g_star]);
    let [lo, hi] = cfg.bounds.g_star;
    assert!(out.g_star >= lo && out.g_star <= hi);
}
