//! Closed-loop properties of the simulator on the bundled scenarios.

use geopid::scenario::{bundled, run_scenario, Scenario};
use geopid::systems::quadrotor::AttitudeLoop;

fn short(name: &str, t_final: f64) -> Scenario {
    bundled(name).unwrap().with_overrides(&[format!("sim.t_final_s={t_final}")]).unwrap()
}

#[test]
fn runs_are_deterministic() {
    for name in ["quad_attitude", "hoop_sinusoid", "sphere_circle"] {
        let sc = short(name, 2.0);
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a.trace.header, b.trace.header);
        let same = a
            .trace
            .rows
            .iter()
            .zip(&b.trace.rows)
            .all(|(p, q)| p.iter().zip(q).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(same && a.trace.rows.len() == b.trace.rows.len(), "{name}");
    }
}

#[test]
fn control_is_held_between_ticks() {
    let sc = short("quad_attitude", 1.0);
    let ratio = sc.sim.control_ratio();
    assert!(ratio > 1);
    let out = run_scenario(&sc).unwrap();
    for c in ["tau_1", "tau_2", "tau_3"] {
        let col = out.trace.column(c).unwrap();
        for (k, w) in col.windows(2).enumerate() {
            if (k + 1) % ratio != 0 {
                assert_eq!(w[0].to_bits(), w[1].to_bits(), "{c} changed inside the hold at row {k}");
            }
        }
    }
}

#[test]
fn integrator_is_frozen_while_saturated() {
    let out = run_scenario(&short("quad_attitude", 3.0)).unwrap();
    let frozen = out.trace.column("frozen").unwrap();
    assert!(frozen.iter().any(|f| *f != 0.0), "saturation never engaged");
    let mut checked = 0;
    for c in ["omega_i_1", "omega_i_2", "omega_i_3"] {
        let col = out.trace.column(c).unwrap();
        for k in 0..col.len() - 1 {
            if frozen[k] != 0.0 {
                assert_eq!(col[k].to_bits(), col[k + 1].to_bits(), "{c} moved at row {k}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn constant_disturbance_is_rejected() {
    let sc = bundled("rigid_body_verified").unwrap();
    let out = run_scenario(&sc).unwrap();
    assert!(out.report.passed, "{:#?}", out.report.monitors);
    assert!(out.report.terminal_error < 1e-8);
    let lp = AttitudeLoop::rigid_body(sc.rigid_body.as_ref().unwrap(), sc.gains).unwrap();
    let want = lp.integrator_equilibrium();
    assert!(want.norm() > 1e-3);
    let got = &out.final_state[12..15];
    for k in 0..3 {
        assert!((got[k] - want[k]).abs() < 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn removing_the_integrator_leaves_a_steady_offset() {
    let sc = bundled("rigid_body_verified").unwrap().with_overrides(&["gains.ki=0"]).unwrap();
    let out = run_scenario(&sc).unwrap();
    assert!(out.report.terminal_error > 1e-6, "{}", out.report.terminal_error);
}
