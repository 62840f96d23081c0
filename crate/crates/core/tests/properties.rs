//! Property tests for the algebraic, geometric and closed-loop invariants.

use geopid::geometry::{
    connection_invariant, connection_signs, constraint_force, koszul_numeric_so3, nabla_constant_projector,
    richardson_derivative, so3_connection_term, ConstraintDistribution, InertiaMetric, Invariance,
};
use geopid::lie::{
    ad_bracket, adjoint_ad, exp_so3, hat, orthonormality_drift, vee, AlgebraElement, AlgebraValue, Chirality,
    GroupElement, Mat3, Rotation, Vec3,
};
use geopid::pid::{build_error, morse_grad_so3, pid_full_step, so3_pid, ControllerState, GainSet, MorseWeighting};
use geopid::sim::{rk4_step, Rhs};
use geopid::systems::hoop::{hoop_dynamics, HoopParams, HoopState};
use geopid::systems::ipc::{ipc_dynamics, IpcParams};
use geopid::systems::pendulum::{pendulum_dynamics, PendulumParams};
use geopid::systems::quadrotor::quad_dynamics;
use geopid::systems::sphere::{sphere_dynamics, sphere_energy, SphereParams, SphereState};
use nalgebra::DVector;
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    [-r..r, -r..r, -r..r].prop_map(|[a, b, c]| Vec3::new(a, b, c))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    vec3(3.0).prop_map(|v| exp_so3(&v))
}

/// Symmetric positive definite matrix with eigenvalues in `[0.5, 3.5]`.
fn spd() -> impl Strategy<Value = Mat3> {
    (rotation(), [0.5..3.5f64, 0.5..3.5, 0.5..3.5])
        .prop_map(|(q, d)| q.matrix() * Mat3::from_diagonal(&Vec3::from(d)) * q.matrix().transpose())
}

fn so3(v: Vec3, c: Chirality) -> AlgebraElement {
    AlgebraElement::so3(v, c)
}

fn value(a: &AlgebraElement) -> Vec3 {
    match a.value() {
        AlgebraValue::So3(v) => *v,
        other => panic!("expected so(3), got {other:?}"),
    }
}

fn rn(v: &Vec3) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn rn3(a: &AlgebraValue) -> Vec3 {
    match a {
        AlgebraValue::Rn(v) => Vec3::new(v[0], v[1], v[2]),
        other => panic!("expected R^3, got {other:?}"),
    }
}

mod lie {
    use super::*;

    proptest! {
        #[test]
        fn hat_vee_are_inverse(v in vec3(100.0)) {
            prop_assert_eq!(vee(&hat(&v)).unwrap(), v);
            let m = hat(&v);
            prop_assert!((hat(&vee(&m).unwrap()) - m).norm() == 0.0);
        }

        #[test]
        fn exp_lands_on_so3(v in vec3(10.0).prop_filter("norm <= 10", |v| v.norm() <= 10.0)) {
            let r = exp_so3(&v);
            prop_assert!(orthonormality_drift(r.matrix()) < 1e-12);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            prop_assert!(Rotation::new(*r.matrix()).is_ok());
        }

        #[test]
        fn bracket_is_antisymmetric_and_satisfies_jacobi(a in vec3(5.0), b in vec3(5.0), c in vec3(5.0)) {
            let (x, y, z) = (so3(a, Chirality::Left), so3(b, Chirality::Left), so3(c, Chirality::Left));
            let xy = value(&ad_bracket(&x, &y).unwrap());
            let yx = value(&ad_bracket(&y, &x).unwrap());
            prop_assert!((xy + yx).norm() < 1e-12);
            let br = |p: &AlgebraElement, q: &AlgebraElement| ad_bracket(p, q).unwrap();
            let j = value(&br(&x, &br(&y, &z))) + value(&br(&y, &br(&z, &x))) + value(&br(&z, &br(&x, &y)));
            prop_assert!(j.norm() < 1e-10);
        }

        #[test]
        fn adjoint_is_an_algebra_morphism(r in rotation(), a in vec3(5.0), b in vec3(5.0)) {
            let g = GroupElement::SO3(r);
            let (x, y) = (so3(a, Chirality::Left), so3(b, Chirality::Left));
            let lhs = adjoint_ad(&g, &ad_bracket(&x, &y).unwrap()).unwrap();
            let rhs = ad_bracket(&adjoint_ad(&g, &x).unwrap(), &adjoint_ad(&g, &y).unwrap()).unwrap();
            prop_assert!((value(&lhs) - value(&rhs)).norm() < 1e-10);
        }
    }
}

mod geometry {
    use super::*;

    /// The four metric classes paired with the frame in which their
    /// components are constant, and the frame of the opposite trivialisation.
    fn classes() -> [(Invariance, Chirality); 6] {
        [
            (Invariance::Left, Chirality::Left),
            (Invariance::Left, Chirality::Right),
            (Invariance::Right, Chirality::Right),
            (Invariance::Right, Chirality::Left),
            (Invariance::Bi, Chirality::Left),
            (Invariance::Bi, Chirality::Right),
        ]
    }

    /// Components of the metric in the chirality's frame at `r`.
    fn components(i: &Mat3, inv: Invariance, chir: Chirality, r: &Rotation) -> Mat3 {
        let q = r.matrix();
        match (inv, chir) {
            (Invariance::Left, Chirality::Right) => q * i * q.transpose(),
            (Invariance::Right, Chirality::Left) => q.transpose() * i * q,
            _ => *i,
        }
    }

    /// Flow of a field with constant components in the chirality's frame.
    fn flow(chir: Chirality, r: &Rotation, z: &Vec3, s: f64) -> Rotation {
        match chir {
            Chirality::Left => r.compose(&exp_so3(&(s * z))),
            Chirality::Right => exp_so3(&(s * z)).compose(r),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn metricity_along_flows(
            i in spd(), c in 0.5..3.0f64, r in rotation(), x in vec3(2.0), y in vec3(2.0), z in vec3(2.0),
        ) {
            for (inv, chir) in classes() {
                let i = if inv == Invariance::Bi { c * Mat3::identity() } else { i };
                let pair = |rr: &Rotation| x.dot(&(components(&i, inv, chir, rr) * y));
                let fd = richardson_derivative(|s| pair(&flow(chir, &r, &z, s)), 1e-3);
                let m = components(&i, inv, chir, &r);
                let metric = InertiaMetric::constant(m, inv).unwrap();
                let zero = so3(Vec3::zeros(), chir);
                let nx = value(&connection_invariant(&metric, &so3(z, chir), &so3(x, chir), &zero).unwrap());
                let ny = value(&connection_invariant(&metric, &so3(z, chir), &so3(y, chir), &zero).unwrap());
                let rhs = (m * nx).dot(&y) + (m * ny).dot(&x);
                prop_assert!((fd - rhs).abs() < 1e-6, "{:?}/{:?}: {} vs {}", inv, chir, fd, rhs);
            }
        }

        #[test]
        fn torsion_free(i in spd(), c in 0.5..3.0f64, x in vec3(3.0), y in vec3(3.0)) {
            for (inv, chir) in classes() {
                let i = if inv == Invariance::Bi { c * Mat3::identity() } else { i };
                let signs = connection_signs(inv, chir).unwrap();
                let lhs = so3_connection_term(&i, signs, &x, &y) - so3_connection_term(&i, signs, &y, &x);
                // vector-field bracket of fields with constant components
                let bracket = match chir {
                    Chirality::Left => x.cross(&y),
                    Chirality::Right => -x.cross(&y),
                };
                prop_assert!((lhs - i * bracket).norm() < 1e-9);
            }
        }

        #[test]
        fn connection_matches_koszul_oracle(
            i in spd(), r in rotation(), a in vec3(1.5), b in vec3(1.5), c in vec3(1.5), k in vec3(1.0),
        ) {
            // y varies with the configuration so the derivative term is exercised
            let y = move |q: &Rotation| b + hat(&k) * (q.matrix() * Vec3::new(0.3, -0.2, 0.5));
            let x = move |_: &Rotation| a;
            let z = move |_: &Rotation| c;
            let metric = |_: &Rotation| i;
            let oracle = koszul_numeric_so3(&metric, &x, &y, &z, &r, 1e-3).unwrap();
            let dy = Vec3::from_fn(|n, _| richardson_derivative(|s| y(&r.compose(&exp_so3(&(s * a))))[n], 1e-4));
            let m = InertiaMetric::left(i).unwrap();
            let l = Chirality::Left;
            let nab = value(&connection_invariant(&m, &so3(a, l), &so3(y(&r), l), &so3(dy, l)).unwrap());
            prop_assert!((oracle - (i * nab).dot(&c)).abs() < 1e-6, "{} vs {}", oracle, (i * nab).dot(&c));
        }

        #[test]
        fn projector_algebra(q in rotation(), rank in 1usize..3) {
            let mut d = Vec3::zeros();
            for k in 0..rank {
                d[k] = 1.0;
            }
            let p = q.matrix() * Mat3::from_diagonal(&d) * q.matrix().transpose();
            let pc = Mat3::identity() - p;
            // rounding in the random basis stays below the constructor's tolerance
            let dist = ConstraintDistribution::new(p, pc, rank).unwrap();
            prop_assert!((dist.p_dstar() * dist.p_dstar() - dist.p_dstar()).norm() < 1e-12);
            prop_assert!((dist.p_dstar_c() * dist.p_dstar_c() - dist.p_dstar_c()).norm() < 1e-12);
            prop_assert!((dist.p_dstar() * dist.p_dstar_c()).norm() < 1e-12);
        }

        #[test]
        fn constraint_force_lies_in_the_annihilator(
            d in [0.5..3.0f64, 0.5..3.0, 0.5..3.0], w in vec3(3.0), gamma in vec3(5.0),
        ) {
            let i = Mat3::from_diagonal(&Vec3::from(d));
            let w = Vec3::new(w[0], w[1], 0.0);
            let dist = ConstraintDistribution::spherical_pendulum();
            let metric = InertiaMetric::left(i).unwrap();
            let nab = nabla_constant_projector(dist.p_dstar_c(), &i, (1.0, -1.0), &w, &w).unwrap();
            let f = constraint_force(&dist, &metric, &w, &gamma, &nab).unwrap();
            prop_assert!((dist.p_dstar() * f).norm() < 1e-9);
        }
    }

    #[test]
    fn spherical_pendulum_projectors() {
        for dist in [ConstraintDistribution::spherical_pendulum(), ConstraintDistribution::full()] {
            let (p, pc) = (dist.p_dstar(), dist.p_dstar_c());
            assert!((p * p - p).norm() < 1e-12);
            assert!((pc * pc - pc).norm() < 1e-12);
            assert!((p * pc).norm() < 1e-12);
        }
    }
}

mod pid {
    use super::*;

    /// Closed loop of `pid_full_step` on R^3 with a constant metric.
    fn geometric_rn(m: &Mat3, g: &GainSet, x0: Vec3, v0: Vec3, xr: Vec3, t_end: f64, h: f64) -> Vec<[Vec3; 3]> {
        let metric = InertiaMetric::left(*m).unwrap();
        let inv = m.try_inverse().unwrap();
        let chir = Chirality::Left;
        let mut f = |_: f64, s: &[f64], ds: &mut [f64]| {
            let x = Vec3::new(s[0], s[1], s[2]);
            let v = Vec3::new(s[3], s[4], s[5]);
            let zi = Vec3::new(s[6], s[7], s[8]);
            let err = build_error(
                &GroupElement::Rn(rn(&x)),
                &GroupElement::Rn(rn(&xr)),
                &AlgebraElement::new(AlgebraValue::Rn(rn(&v)), chir),
                &AlgebraElement::new(AlgebraValue::Rn(rn(&Vec3::zeros())), chir),
                chir,
            )?;
            let e = match &err.e {
                GroupElement::Rn(e) => AlgebraElement::new(AlgebraValue::Rn(e.clone()), chir),
                _ => unreachable!(),
            };
            let ctrl =
                ControllerState { zeta_i: AlgebraElement::new(AlgebraValue::Rn(rn(&zi)), chir), windup_frozen: false };
            let (u, dzi) = pid_full_step(&err, &e, &ctrl, g, &metric, &AlgebraValue::Rn(rn(&Vec3::zeros())))?;
            let a = inv * rn3(&u);
            let dz = rn3(dzi.value());
            ds[..3].copy_from_slice(v.as_slice());
            ds[3..6].copy_from_slice(a.as_slice());
            ds[6..9].copy_from_slice(dz.as_slice());
            Ok(())
        };
        integrate(&mut f, x0, v0, t_end, h)
    }

    /// Textbook PID on three decoupled double integrators `m_k x'' = u_k`.
    fn textbook(m: &Mat3, g: &GainSet, x0: Vec3, v0: Vec3, xr: Vec3, t_end: f64, h: f64) -> Vec<[Vec3; 3]> {
        let mut f = |_: f64, s: &[f64], ds: &mut [f64]| {
            for k in 0..3 {
                let e = s[k] - xr[k];
                let u = -m[(k, k)] * (g.kp * e + g.kd * s[3 + k] + g.ki * s[6 + k]);
                ds[k] = s[3 + k];
                ds[3 + k] = u / m[(k, k)];
                ds[6 + k] = e;
            }
            Ok(())
        };
        integrate(&mut f, x0, v0, t_end, h)
    }

    fn integrate(f: &mut Rhs, x0: Vec3, v0: Vec3, t_end: f64, h: f64) -> Vec<[Vec3; 3]> {
        let mut s: Vec<f64> = x0.iter().chain(v0.iter()).copied().chain([0.0; 3]).collect();
        let n = (t_end / h).round() as usize;
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..=n {
            out.push([Vec3::new(s[0], s[1], s[2]), Vec3::new(s[3], s[4], s[5]), Vec3::new(s[6], s[7], s[8])]);
            if k < n {
                s = rk4_step(f, k as f64 * h, &s, h).unwrap();
            }
        }
        out
    }

    fn plain_v(e: &Rotation) -> f64 {
        3.0 - e.matrix().trace()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn rn_reduction_matches_textbook_pid(
            d in [0.5..3.0f64, 0.5..3.0, 0.5..3.0],
            kp in 1.0..20.0f64, kd in 1.0..10.0f64, ki in 0.1..5.0f64,
            x0 in vec3(2.0), v0 in vec3(1.0), xr in vec3(2.0),
        ) {
            let m = Mat3::from_diagonal(&Vec3::from(d));
            let g = GainSet::new(kp, kd, ki);
            let a = geometric_rn(&m, &g, x0, v0, xr, 10.0, 1e-3);
            let b = textbook(&m, &g, x0, v0, xr, 10.0, 1e-3);
            let worst = a.iter().zip(&b).map(|(p, q)| (0..3).map(|j| (p[j] - q[j]).norm()).fold(0.0, f64::max)).fold(0.0, f64::max);
            prop_assert!(worst < 1e-9, "{}", worst);
        }
    }

    proptest! {
        #[test]
        fn morse_gradient_matches_finite_differences(e in rotation(), xi in vec3(1.0), i in spd()) {
            let fd = richardson_derivative(|s| plain_v(&e.compose(&exp_so3(&(s * xi)))), 1e-3);
            let (plain, v) = morse_grad_so3(&e, MorseWeighting::Plain, &i);
            prop_assert!((v - plain_v(&e)).abs() < 1e-12);
            prop_assert!((fd - plain.dot(&xi)).abs() < 1e-6);
            // the weighted gradient is the metric gradient: <<eta_w, xi>> = dV(xi)
            let (weighted, _) = morse_grad_so3(&e, MorseWeighting::InertiaWeighted, &i);
            prop_assert!((fd - (i * weighted).dot(&xi)).abs() < 1e-6);
        }

        #[test]
        fn frozen_integrator_has_zero_rate(i in spd(), eta in vec3(2.0), ze in vec3(2.0), zi in vec3(2.0)) {
            let g = GainSet::new(3.0, 2.0, 1.0);
            let (_, d) = so3_pid(&i, (1.0, -1.0), &g, &eta, &ze, &zi, &Vec3::zeros(), true).unwrap();
            prop_assert_eq!(d, Vec3::zeros());
        }
    }

    /// Rigid body with a bi-invariant metric under left or right PID.
    fn chirality_run(chir: Chirality, c: f64, r0: Rotation, w0: Vec3, rr: Rotation, g: &GainSet) -> Vec<f64> {
        let i = c * Mat3::identity();
        let metric = InertiaMetric::constant(i, Invariance::Bi).unwrap();
        let h = 1e-3;
        let mut f = |_: f64, s: &[f64], ds: &mut [f64]| {
            let r = Rotation::from_matrix_unchecked(geopid::sim::get_mat3(s, 0));
            let w = geopid::sim::get_vec3(s, 9);
            let zi = geopid::sim::get_vec3(s, 12);
            let (vel, eta) = match chir {
                Chirality::Left => (w, None),
                Chirality::Right => (r.act(&w), Some(())),
            };
            let err = build_error(
                &GroupElement::SO3(r),
                &GroupElement::SO3(rr),
                &so3(vel, chir),
                &so3(Vec3::zeros(), chir),
                chir,
            )?;
            let e = match &err.e {
                GroupElement::SO3(e) => *e,
                _ => unreachable!(),
            };
            let grad = morse_grad_so3(&e, MorseWeighting::Plain, &i).0;
            let ctrl = ControllerState { zeta_i: so3(zi, chir), windup_frozen: false };
            let (u, dzi) = pid_full_step(&err, &so3(grad, chir), &ctrl, g, &metric, &AlgebraValue::So3(Vec3::zeros()))?;
            let u = match u {
                AlgebraValue::So3(u) => u,
                _ => unreachable!(),
            };
            // body moment; the spatial law is pulled back
            let tau = if eta.is_some() { r.inverse().act(&u) } else { u };
            geopid::sim::set_mat3(ds, 0, &(r.matrix() * hat(&w)));
            geopid::sim::set_vec3(ds, 9, &(tau / c));
            geopid::sim::set_vec3(ds, 12, &value(&dzi));
            Ok(())
        };
        let mut s = vec![0.0; 15];
        geopid::sim::set_mat3(&mut s, 0, r0.matrix());
        geopid::sim::set_vec3(&mut s, 9, &w0);
        let mut vs = Vec::new();
        for k in 0..5000 {
            let r = Rotation::from_matrix_unchecked(geopid::sim::get_mat3(&s, 0));
            vs.push(3.0 - (rr.matrix().transpose() * r.matrix()).trace());
            s = rk4_step(&mut f, k as f64 * h, &s, h).unwrap();
        }
        vs
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn left_and_right_pid_agree_for_bi_invariant_metric(
            c in 0.5..2.0f64, r0 in rotation(), w0 in vec3(1.0), rr in rotation(),
        ) {
            let g = GainSet::new(6.0, 4.0, 1.0);
            let l = chirality_run(Chirality::Left, c, r0, w0, rr, &g);
            // the right error R R_r^T has the same trace as the left one R_r^T R
            let r = chirality_run(Chirality::Right, c, r0, w0, rr, &g);
            let worst = l.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(worst < 1e-8, "{}", worst);
        }
    }
}

mod systems {
    use super::*;
    use std::f64::consts::PI;

    fn hoop_params() -> impl Strategy<Value = HoopParams> {
        (0.5..2.0f64, 0.01..0.05f64, 0.1..0.3f64, 1.0..4.0f64, 0.01..0.05f64, 0.05..0.9f64).prop_map(
            // I_a + m_a l (l - r) > 0 keeps the reduced mass matrix regular
            |(m_h, i_h, r, m_a, i_a, lf)| HoopParams {
                m_h_kg: m_h,
                i_h_kgm2: i_h,
                r_m: r,
                m_a_kg: m_a,
                i_a_kgm2: i_a + m_a * lf * r * r * (1.0 - lf),
                l_m: lf * r,
                beta_deg: 0.0,
                g_m_s2: 9.81,
            },
        )
    }

    fn sphere_params() -> impl Strategy<Value = SphereParams> {
        (0.5..2.0f64, 0.01..0.05f64, 0.1..0.3f64, 1.0..4.0f64, 0.02..0.05f64, 0.1..0.8f64).prop_map(
            |(m_b, i_b, r, m_i, i_i, lf)| SphereParams {
                m_b_kg: m_b,
                i_b_kgm2: [i_b, 1.1 * i_b, 0.9 * i_b],
                r_m: r,
                m_i_kg: m_i,
                i_i_kgm2: [i_i, 1.05 * i_i, 0.95 * i_i],
                l_m: lf * r,
                g_m_s2: 9.81,
            },
        )
    }

    fn ipc_params() -> impl Strategy<Value = IpcParams> {
        (2.0..10.0f64, 0.2..1.0f64, 0.1..0.5f64, 0.0..40.0f64).prop_map(|(mc, mp, l, beta)| IpcParams {
            cart_mass_kg: mc,
            pend_mass_kg: mp,
            length_m: l,
            // inertia about the pivot at least m L^2
            inertia_kgm2: 1.3 * mp * l * l,
            beta_deg: beta,
            g_m_s2: 9.81,
        })
    }

    fn pendulum_params() -> impl Strategy<Value = PendulumParams> {
        (0.5..2.0f64, 0.5..2.0f64, [0.5..2.0f64, 0.5..2.0, 0.5..2.0]).prop_map(|(m, l, i)| PendulumParams {
            mass_kg: m,
            length_m: l,
            g_m_s2: 9.81,
            inertia_kgm2: i,
        })
    }

    /// RK4 on `f` for 10 s at 1 ms; returns the largest relative energy change.
    fn energy_drift(
        x0: Vec<f64>,
        f: &mut dyn FnMut(&[f64], &mut [f64]),
        energy: &dyn Fn(&[f64]) -> (f64, f64),
        rot: &[usize],
    ) -> f64 {
        let mut x = x0;
        let (e0, scale) = energy(&x);
        let mut worst: f64 = 0.0;
        let mut g = |_: f64, x: &[f64], dx: &mut [f64]| {
            f(x, dx);
            Ok(())
        };
        for k in 0..10_000 {
            x = rk4_step(&mut g, k as f64 * 1e-3, &x, 1e-3).unwrap();
            geopid::sim::renormalize(&mut x, rot, 1e-9);
            worst = worst.max((energy(&x).0 - e0).abs() / scale);
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn quadrotor_rest_is_an_equilibrium(r in rotation(), i in spd()) {
            let (_, dw) = quad_dynamics(&r, &Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros(), &i).unwrap();
            prop_assert!(dw.norm() < 1e-10);
        }

        #[test]
        fn ipc_upright_is_an_equilibrium(p in ipc_params(), x in -5.0..5.0f64) {
            let (a, b, c, d) = ipc_dynamics(-p.beta(), 0.0, x, 0.0, 0.0, &p).unwrap();
            prop_assert!(a.abs().max(b.abs()).max(c.abs()).max(d.abs()) < 1e-10);
        }

        #[test]
        fn hoop_trim_is_an_equilibrium(p in hoop_params(), frac in 0.0..0.8f64, theta in -3.0..3.0f64) {
            let p = HoopParams { beta_deg: frac * p.beta_max().to_degrees(), ..p };
            // the input holding the hoop fixes the actuator angle: bisect on the residual
            let resid = |ta: f64| p.tau_g_omega_a(ta) - p.b(ta).unwrap() * p.tau_g_omega(ta);
            let grid: Vec<f64> = (0..=600).map(|k| -1.5 + 3.0 * k as f64 / 600.0).collect();
            let w = grid.windows(2).find(|w| resid(w[0]).signum() != resid(w[1]).signum());
            prop_assume!(w.is_some());
            let (mut lo, mut hi) = (w.unwrap()[0], w.unwrap()[1]);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if resid(mid).signum() == resid(lo).signum() { lo = mid } else { hi = mid }
            }
            let s = HoopState { theta, o: -p.r_m * theta, omega: 0.0, theta_a: lo, omega_a: 0.0 };
            let d = hoop_dynamics(&s, -p.tau_g_omega(lo), &p).unwrap();
            prop_assert!(d.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10, "{:?}", d);
        }

        #[test]
        fn sphere_hanging_cart_is_an_equilibrium(p in sphere_params(), r in rotation(), xy in [-3.0..3.0f64, -3.0..3.0]) {
            let s = SphereState { r, o: Vec3::new(xy[0], xy[1], p.r_m), omega: Vec3::zeros(), r_i: Rotation::identity(), omega_i: Vec3::zeros() };
            let d = sphere_dynamics(&s, &Vec3::zeros(), &p, 0.0).unwrap();
            prop_assert!(d.d_omega.norm() < 1e-10 && d.d_omega_i.norm() < 1e-10 && d.d_o.norm() < 1e-10);
        }

        #[test]
        fn pendulum_vertical_states_are_equilibria(p in pendulum_params(), yaw in -3.0..3.0f64) {
            for tilt in [0.0, PI] {
                let r = exp_so3(&Vec3::new(0.0, 0.0, yaw)).compose(&exp_so3(&Vec3::new(tilt, 0.0, 0.0)));
                let (_, dw) = pendulum_dynamics(&r, &Vec3::zeros(), &Vec3::zeros(), &p).unwrap();
                prop_assert!(dw.norm() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn free_rigid_body_conserves_energy(i in spd(), w in vec3(2.0)) {
            let mut f = |x: &[f64], dx: &mut [f64]| {
                let r = Rotation::from_matrix_unchecked(geopid::sim::get_mat3(x, 0));
                let (dr, dw) = quad_dynamics(&r, &geopid::sim::get_vec3(x, 9), &Vec3::zeros(), &Vec3::zeros(), &i).unwrap();
                geopid::sim::set_mat3(dx, 0, &dr);
                geopid::sim::set_vec3(dx, 9, &dw);
            };
            let en = |x: &[f64]| {
                let w = geopid::sim::get_vec3(x, 9);
                let e = 0.5 * w.dot(&(i * w));
                (e, e.max(1e-6))
            };
            let mut x0 = vec![0.0; 12];
            geopid::sim::set_mat3(&mut x0, 0, &Mat3::identity());
            geopid::sim::set_vec3(&mut x0, 9, &w);
            prop_assert!(energy_drift(x0, &mut f, &en, &[0]) < 1e-5);
        }

        #[test]
        fn ipc_conserves_energy_on_flat_ground(p in ipc_params(), th in -1.2..1.2f64, w in -1.0..1.0f64, v in -1.0..1.0f64) {
            let p = IpcParams { beta_deg: 0.0, ..p };
            let mut f = |x: &[f64], dx: &mut [f64]| {
                let (a, b, c, d) = ipc_dynamics(x[0], x[1], x[2], x[3], 0.0, &p).unwrap();
                dx.copy_from_slice(&[a, b, c, d]);
            };
            let scale = p.pend_mass_kg * p.g_m_s2 * p.length_m;
            let en = |x: &[f64]| (p.energy(x[0], x[1], x[3]), scale);
            prop_assume!(th.cos() > 0.4);
            prop_assert!(energy_drift(vec![th, w, 0.0, v], &mut f, &en, &[]) < 1e-5);
        }

        #[test]
        fn hoop_conserves_energy_on_flat_ground(p in hoop_params(), w in -1.0..1.0f64, ta in -1.0..1.0f64, wa in -1.0..1.0f64) {
            let mut f = |x: &[f64], dx: &mut [f64]| {
                let s = HoopState { theta: x[0], o: x[1], omega: x[2], theta_a: x[3], omega_a: x[4] };
                dx.copy_from_slice(&hoop_dynamics(&s, 0.0, &p).unwrap());
            };
            let scale = p.m_a_kg * p.g_m_s2 * p.l_m;
            let en = |x: &[f64]| (p.energy(x[0], x[2], x[3], x[4]), scale);
            prop_assert!(energy_drift(vec![0.0, 0.0, w, ta, wa], &mut f, &en, &[]) < 1e-5);
        }

        #[test]
        fn sphere_conserves_energy_on_flat_ground(p in sphere_params(), w in vec3(0.5), wi in vec3(0.5)) {
            let unpack = |x: &[f64]| SphereState {
                r: Rotation::from_matrix_unchecked(geopid::sim::get_mat3(x, 0)),
                o: geopid::sim::get_vec3(x, 9),
                omega: geopid::sim::get_vec3(x, 12),
                r_i: Rotation::from_matrix_unchecked(geopid::sim::get_mat3(x, 15)),
                omega_i: geopid::sim::get_vec3(x, 24),
            };
            let mut f = |x: &[f64], dx: &mut [f64]| {
                let d = sphere_dynamics(&unpack(x), &Vec3::zeros(), &p, 0.0).unwrap();
                geopid::sim::set_mat3(dx, 0, &d.d_r);
                geopid::sim::set_vec3(dx, 9, &d.d_o);
                geopid::sim::set_vec3(dx, 12, &d.d_omega);
                geopid::sim::set_mat3(dx, 15, &d.d_r_i);
                geopid::sim::set_vec3(dx, 24, &d.d_omega_i);
            };
            let scale = p.m_i_kg * p.g_m_s2 * p.l_m;
            let en = |x: &[f64]| (sphere_energy(&unpack(x), &p, 0.0).unwrap(), scale);
            let mut x0 = vec![0.0; 27];
            geopid::sim::set_mat3(&mut x0, 0, &Mat3::identity());
            geopid::sim::set_vec3(&mut x0, 9, &Vec3::new(0.0, 0.0, p.r_m));
            geopid::sim::set_vec3(&mut x0, 12, &w);
            geopid::sim::set_mat3(&mut x0, 15, &Mat3::identity());
            geopid::sim::set_vec3(&mut x0, 24, &wi);
            prop_assert!(energy_drift(x0, &mut f, &en, &[0, 15]) < 1e-5);
        }

        #[test]
        fn pendulum_conserves_energy(p in pendulum_params(), tilt in 0.2..2.9f64, w in [-1.0..1.0f64, -1.0..1.0]) {
            let i = p.inertia();
            let mut f = |x: &[f64], dx: &mut [f64]| {
                let r = Rotation::from_matrix_unchecked(geopid::sim::get_mat3(x, 0));
                let (dr, dw) = pendulum_dynamics(&r, &geopid::sim::get_vec3(x, 9), &Vec3::zeros(), &p).unwrap();
                geopid::sim::set_mat3(dx, 0, &dr);
                geopid::sim::set_vec3(dx, 9, &dw);
            };
            let scale = p.mass_kg * p.g_m_s2 * p.length_m;
            let en = |x: &[f64]| {
                let r = Rotation::from_matrix_unchecked(geopid::sim::get_mat3(x, 0));
                (p.energy(&r, &geopid::sim::get_vec3(x, 9)), scale)
            };
            let _ = i;
            let mut x0 = vec![0.0; 12];
            geopid::sim::set_mat3(&mut x0, 0, exp_so3(&Vec3::new(tilt, 0.0, 0.0)).matrix());
            geopid::sim::set_vec3(&mut x0, 9, &Vec3::new(w[0], w[1], 0.0));
            prop_assert!(energy_drift(x0, &mut f, &en, &[0]) < 1e-5);
        }
    }
}
