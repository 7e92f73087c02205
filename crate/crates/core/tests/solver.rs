use alpha_patch::barrier::{phi_value, phi_x, Barrier};
use alpha_patch::biot_savart::RegKernel;
use alpha_patch::model::*;
use alpha_patch::quadrature::QuadratureSpec;
use alpha_patch::transport::*;
use alpha_patch::verification::*;

fn setup(n: usize) -> (ModelParams, Barrier, OddProfile) {
    let params = ModelParams::barrier_mode(0.5, 0.5).unwrap();
    let b = Barrier::new(0.5, 1.748, 0.25).unwrap();
    let prof = build_initial_data(InitialDataKind::BarrierMultiple, &params, &b, graded_nodes(n, 50.0, 3.0)).unwrap();
    (params, b, prof)
}

fn rel_sup_difference(a: &OddProfile, b: &OddProfile, xs: &[f64]) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for w in xs.windows(2) {
        for x in [w[0], 0.5 * (w[0] + w[1])] {
            num = num.max((a.eval(x) - b.eval(x)).abs());
            den = den.max(b.eval(x).abs());
        }
    }
    num / den
}

#[test]
fn trajectory_rate_matches_closed_form() {
    let (params, _, prof) = setup(128);
    let spec = QuadratureSpec::default();
    let state = ParticleState::from_profile(&prof);
    let u = particle_velocities(&state, &state.positions, params.gamma, &VelocityLaw::Exact, &spec).unwrap();
    let dt = 1e-7;
    let next = advect_step(&state, dt, params.gamma, &VelocityLaw::Exact, &spec).unwrap();
    let p = params.p;
    for i in 1..state.len() {
        let (x0, x1, w) = (state.positions[i], next.positions[i], state.carried_values[i]);
        let fd = ((1.0 + x1).powf(-p) * w - (1.0 + x0).powf(-p) * w) / dt;
        let exact = -p * (1.0 + x0).powf(-p - 1.0) * u[i] * w;
        assert!(exact >= 0.0);
        assert!((fd - exact).abs() <= 1e-4 * exact.abs() + 1e-9, "i = {i}: {fd} vs {exact}");
    }
}

#[test]
fn short_run_respects_tail_gap_and_slope_comparison() {
    let (params, b, prof) = setup(128);
    let spec = QuadratureSpec::default();
    let mut s = RunSettings::new(params.gamma, params.p, 50.0, 0.03);
    s.barrier = Some(b);
    s.snapshot_every = 1;
    s.dt_max = 2e-3;
    let res = run(&prof, &s).unwrap();
    assert_eq!(res.stop_reason, StopReason::TimeEnd);

    let dom = verify_barrier_dominance(&res.snapshots, &b, &params).unwrap();
    assert!(dom.passed());
    let bound = dom.measured["tail_gap_bound"];
    assert!(bound > 0.0);
    assert!(dom.measured["tail_margin_min"] >= bound);

    let ode = verify_origin_slope_ode(&res.diagnostics, 0.02, Some((&b, params.gamma, &spec))).unwrap();
    assert!(ode.measured["min_comparison_gap"] >= 0.0);
    assert!(ode.passed(), "{ode:?}");

    let k = apriori_monitor(&res.snapshots, &params).unwrap();
    assert!(k.measured["k_hat"].is_finite() && k.measured["k_hat"] > 0.0);
    assert!(k.measured["min_signed_rate"] >= 0.0);
}

#[test]
fn picard_default_data_short_horizon() {
    let (params, _, prof) = setup(128);
    let spec = QuadratureSpec::default();
    let kernel = RegKernel::new(0.05, params.gamma).unwrap();
    let t_final = 0.01;
    let pic = picard_flow_map(&prof, &kernel, t_final, 16, 60, 1e-8, &spec).unwrap();
    assert!(pic.residuals.windows(2).all(|w| w[1] < w[0]), "{:?}", pic.residuals);

    let mut s = RunSettings::new(params.gamma, params.p, 50.0, t_final);
    s.law = VelocityLaw::Regularized(kernel);
    s.cfl = 0.05;
    s.dt_max = 2.5e-4;
    let lag = run(&prof, &s).unwrap();
    let lp = lag.final_state.profile().unwrap();
    let d = rel_sup_difference(&pic.profile, &lp, &lag.final_state.positions);
    assert!(d < 1e-3, "{d}");
}

#[test]
fn picard_rejects_bad_settings() {
    let (params, _, prof) = setup(64);
    let spec = QuadratureSpec::default();
    let kernel = RegKernel::new(0.05, params.gamma).unwrap();
    assert!(picard_flow_map(&prof, &kernel, 0.0, 16, 10, 1e-8, &spec).is_err());
    assert!(picard_flow_map(&prof, &kernel, 0.01, 1, 10, 1e-8, &spec).is_err());
}

#[test]
fn barrier_profile_scaled_copy_stays_above_barrier() {
    // φ(a, x) > φ(a', x) for a < a', so data above φ(0, ·) stays above
    // φ(t, ·) while X(t) ≤ X₀ and ω is carried.
    let p = 0.25;
    for x in [0.01, 0.3, 2.0, 40.0] {
        assert!(phi_value(0.2, p, x) > phi_value(0.5, p, x));
        assert!(phi_x(0.2, p, x) > phi_x(0.5, p, x));
    }
}
