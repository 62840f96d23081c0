//! Geometric PID laws.
//!
//! Three families share one pattern: a proportional term built from the
//! gradient `eta` of a polar Morse function, derivative action on the velocity
//! error and an integrator state defined by a covariant ODE
//! `I nabla_{zeta} zeta_I = I eta`. The integrator is exposed as a time
//! derivative so the simulator advances it together with the plant.

use crate::error::{Error, Result};
use crate::geometry::{
    connection_invariant, connection_signs, nabla_constant_projector, so3_connection_term, ConstraintDistribution,
    InertiaMetric,
};
use crate::lie::{
    adjoint_ad, hat, vee_skew_part, AlgebraElement, AlgebraValue, Chirality, GroupElement, Mat3, Rotation, Vec3,
};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Configuration and velocity error with the transported reference velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub e: GroupElement,
    pub zeta_e: AlgebraElement,
    pub eta_r: AlgebraElement,
    pub chirality: Chirality,
}

/// Left: `E = g_r^-1 g`, `zeta_E = zeta - Ad_{E^-1} zeta_r`.
/// Right: `E = g g_r^-1`, `zeta_E = zeta - Ad_E zeta_r`.
pub fn build_error(
    g: &GroupElement,
    g_r: &GroupElement,
    zeta: &AlgebraElement,
    zeta_r: &AlgebraElement,
    chirality: Chirality,
) -> Result<ErrorState> {
    if zeta.chirality() != chirality {
        return Err(Error::Chirality(zeta.chirality(), chirality));
    }
    zeta.same_chirality(zeta_r)?;
    let (e, transport) = match chirality {
        Chirality::Left => {
            let e = g_r.inverse().compose(g)?;
            let t = e.inverse();
            (e, t)
        }
        Chirality::Right => {
            let e = g.compose(&g_r.inverse())?;
            (e.clone(), e)
        }
    };
    let eta_r = adjoint_ad(&transport, zeta_r)?;
    let zeta_e = zeta.sub(&eta_r)?;
    Ok(ErrorState { e, zeta_e, eta_r, chirality })
}

/// Applies the inertia to an algebra element, giving a covector.
pub fn lower(metric: &InertiaMetric, v: &AlgebraElement) -> Result<AlgebraValue> {
    let m = metric.matrix()?;
    Ok(match v.value() {
        AlgebraValue::So3(x) => AlgebraValue::So3(m * x),
        AlgebraValue::Rn(x) if x.len() == 3 => {
            let y = m * Vec3::new(x[0], x[1], x[2]);
            AlgebraValue::Rn(nalgebra::DVector::from_column_slice(y.as_slice()))
        }
        _ => return Err(Error::Dimension("lower: expects a 3-dimensional algebra")),
    })
}

/// `f_r = I nabla_{zeta_E} eta_r + I nabla_{eta_r} zeta_E + I nabla_{eta_r} eta_r`.
///
/// `d_eta_r` is the time derivative of `eta_r` along the error trajectory; it
/// is assigned to the first term, the other two carry no derivative part.
pub fn feedforward_fr(err: &ErrorState, metric: &InertiaMetric, d_eta_r: &AlgebraElement) -> Result<AlgebraValue> {
    let zero = err.eta_r.scale(0.0);
    let t1 = connection_invariant(metric, &err.zeta_e, &err.eta_r, d_eta_r)?;
    let t2 = connection_invariant(metric, &err.eta_r, &err.zeta_e, &zero)?;
    let t3 = connection_invariant(metric, &err.eta_r, &err.eta_r, &zero)?;
    let sum = t1.add(&t2)?.add(&t3)?;
    lower(metric, &sum)
}

/// Feedforward on SO(3) in body variables, the form used by the simulator.
/// Returns `(f_r, d eta_r / dt)` for `eta_r = E^T zeta_r`.
pub fn so3_feedforward(
    i: &Mat3,
    signs: (f64, f64),
    e: &Rotation,
    zeta_e: &Vec3,
    zeta_r: &Vec3,
    dzeta_r: &Vec3,
) -> (Vec3, Vec3, Vec3) {
    let et = e.matrix().transpose();
    let eta_r = et * zeta_r;
    // d/dt (E^T) = -hat(zeta_E) E^T
    let d_eta_r = -zeta_e.cross(&eta_r) + et * dzeta_r;
    let f = i * d_eta_r
        + so3_connection_term(i, signs, zeta_e, &eta_r)
        + so3_connection_term(i, signs, &eta_r, zeta_e)
        + so3_connection_term(i, signs, &eta_r, &eta_r);
    (f, eta_r, d_eta_r)
}

/// Gradient choice for `V(E) = trace(I - E)` on SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MorseWeighting {
    /// `hat(eta) = E - E^T`
    Plain,
    /// `hat(eta) = I (E - E^T) I / det(I)`, equal to `I^-1 vee(E - E^T)`.
    InertiaWeighted,
}

/// Returns `(eta, V)` for `V(E) = trace(I - E)`.
pub fn morse_grad_so3(e: &Rotation, weighting: MorseWeighting, inertia: &Mat3) -> (Vec3, f64) {
    let m = e.matrix();
    let v = 3.0 - m.trace();
    let skew = m - m.transpose();
    let eta = match weighting {
        MorseWeighting::Plain => vee_skew_part(&skew),
        MorseWeighting::InertiaWeighted => vee_skew_part(&(inertia * skew * inertia)) / inertia.determinant(),
    };
    (eta, v)
}

/// `trace(I - E)` and its differential `vee(E - E^T)` in the error body frame.
pub fn morse_value_and_differential(e: &Rotation) -> (f64, Vec3) {
    let m = e.matrix();
    (3.0 - m.trace(), vee_skew_part(&(m - m.transpose())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSet {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    /// Cross damping on the actuation subsystem (underactuated laws).
    #[serde(default)]
    pub kc: f64,
    /// Damping on the actuation velocity (cart laws).
    #[serde(default)]
    pub kcd: f64,
    /// Listed with some gain sets but used by no law; parsed and ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kcp: Option<f64>,
}

impl GainSet {
    pub fn new(kp: f64, kd: f64, ki: f64) -> Self {
        GainSet { kp, kd, ki, kc: 0.0, kcd: 0.0, kcp: None }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("kp", self.kp), ("kd", self.kd), ("ki", self.ki), ("kc", self.kc), ("kcd", self.kcd)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Gains(format!("{n} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Constants entering the gain conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorseConstants {
    /// Bound on the covariant Hessian of `V`.
    pub mu: f64,
    /// `sup <<eta, eta>> / (2 V)`.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainBounds {
    pub delta: f64,
    pub ki_max: f64,
    pub k1: f64,
    pub k2: f64,
    pub kp_min: f64,
}

/// `kI < kd^3 (1 - delta^2) / mu` and `kp > max{k1, k2, 2 kappa kd^2}`,
/// with `kp_min` evaluated at the candidate `ki`.
///
/// `kappa` must lie in `[1/mu, 2/mu)`; the closed lower end admits the
/// `delta = 0` configuration.
pub fn gain_bounds(mu: f64, lambda: f64, kappa: f64, kd: f64, ki: f64) -> Result<GainBounds> {
    for (n, v) in [("mu", mu), ("lambda", lambda), ("kappa", kappa), ("kd", kd), ("ki", ki)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Gains(format!("{n} = {v} must be positive")));
        }
    }
    if kappa * mu < 1.0 - 1e-12 || kappa * mu >= 2.0 {
        return Err(Error::Gains(format!("kappa = {kappa} outside [1/mu, 2/mu) = [{}, {})", 1.0 / mu, 2.0 / mu)));
    }
    let delta = (kappa * mu - 1.0).abs();
    let ki_max = kd.powi(3) * (1.0 - delta * delta) / mu;
    let k1 = ki / (2.0 * kd) * ((1.0 + 16.0 * lambda * kappa * kappa * kd * kd / ki).sqrt() - 1.0);
    let kd3 = kd.powi(3);
    let inner = 4.0 * kd3 * (ki * ki + 4.0 * kappa * kd3 * (1.0 + kappa * kd3)) / (lambda * ki.powi(3));
    let k2 = lambda * ki * ki / (2.0 * kd.powi(4)) * (1.0 + (1.0 + inner).sqrt());
    let kp_min = k1.max(k2).max(2.0 * kappa * kd * kd);
    Ok(GainBounds { delta, ki_max, k1, k2, kp_min })
}

/// Verdict of the gain conditions for a concrete gain set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainVerdict {
    pub bounds: GainBounds,
    pub ki_ok: bool,
    pub kp_ok: bool,
}

pub fn verify_gains(gains: &GainSet, mc: &MorseConstants, kappa: f64) -> Result<GainVerdict> {
    let bounds = gain_bounds(mc.mu, mc.lambda, kappa, gains.kd, gains.ki)?;
    Ok(GainVerdict { bounds, ki_ok: gains.ki < bounds.ki_max, kp_ok: gains.kp > bounds.kp_min })
}

/// `kappa` in the middle of `[1/mu, 2/mu)`, the default when none is given.
pub fn default_kappa(mu: f64) -> f64 {
    1.5 / mu
}

/// Integrator and anti-windup flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub zeta_i: AlgebraElement,
    pub windup_frozen: bool,
}

impl ControllerState {
    pub fn zero_so3(chirality: Chirality) -> Self {
        ControllerState { zeta_i: AlgebraElement::so3(Vec3::zeros(), chirality), windup_frozen: false }
    }
}

/// Fully actuated PID on so(3) (or R^3 with `signs = (0, 0)`):
/// `f_u = -I(kp eta + kd zeta_E + kI zeta_I) + f_r` and
/// `d zeta_I = eta - I^-1 (connection part of I nabla_{zeta_E} zeta_I)`.
#[allow(clippy::too_many_arguments)]
pub fn so3_pid(
    i: &Mat3,
    signs: (f64, f64),
    gains: &GainSet,
    eta: &Vec3,
    zeta_e: &Vec3,
    zeta_i: &Vec3,
    f_r: &Vec3,
    frozen: bool,
) -> Result<(Vec3, Vec3)> {
    let control = -(i * (gains.kp * eta + gains.kd * zeta_e + gains.ki * zeta_i)) + f_r;
    if frozen {
        return Ok((control, Vec3::zeros()));
    }
    let inv = i.try_inverse().ok_or(Error::Singular { what: "inertia", value: i.determinant() })?;
    let d = eta - inv * so3_connection_term(i, signs, zeta_e, zeta_i);
    Ok((control, d))
}

/// [`so3_pid`] on tagged algebra elements.
pub fn pid_full_step(
    err: &ErrorState,
    eta_e: &AlgebraElement,
    ctrl: &ControllerState,
    gains: &GainSet,
    metric: &InertiaMetric,
    f_r: &AlgebraValue,
) -> Result<(AlgebraValue, AlgebraElement)> {
    err.zeta_e.same_chirality(eta_e)?;
    err.zeta_e.same_chirality(&ctrl.zeta_i)?;
    let (m, invariance) = match metric {
        InertiaMetric::Constant { m, invariance } => (m, *invariance),
        _ => return Err(Error::MetricKind("expected a constant matrix")),
    };
    let chir = err.chirality;
    let v3 = |a: &AlgebraValue| -> Result<(Vec3, bool)> {
        match a {
            AlgebraValue::So3(v) => Ok((*v, false)),
            AlgebraValue::Rn(v) if v.len() == 3 => Ok((Vec3::new(v[0], v[1], v[2]), true)),
            _ => Err(Error::Dimension("pid_full_step expects so(3) or R^3")),
        }
    };
    let (eta, abelian) = v3(eta_e.value())?;
    let (ze, _) = v3(err.zeta_e.value())?;
    let (zi, _) = v3(ctrl.zeta_i.value())?;
    let (fr, _) = v3(f_r)?;
    let signs = if abelian { (0.0, 0.0) } else { connection_signs(invariance, chir)? };
    let (u, d) = so3_pid(m, signs, gains, &eta, &ze, &zi, &fr, ctrl.windup_frozen)?;
    let wrap = |v: Vec3| {
        if abelian {
            AlgebraValue::Rn(nalgebra::DVector::from_column_slice(v.as_slice()))
        } else {
            AlgebraValue::So3(v)
        }
    };
    Ok((wrap(u), AlgebraElement::new(wrap(d), chir)))
}

/// One-dimensional underactuated PID (IPC and hoop):
/// `tau_u = -I_s(kp eta + kd v_s + kI v_I) - kc B^-1 I_a v_a` with integrator
/// `d v_I = eta - Gamma * dir * v_I`, where `dir` is the velocity along which
/// the output metric is differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarUnderactuated {
    pub eta_e: f64,
    pub v_s: f64,
    pub v_i: f64,
    pub v_a: f64,
    pub i_s: f64,
    pub i_a: f64,
    pub b_inv: f64,
    pub christoffel: f64,
    pub dir: f64,
}

pub fn pid_underactuated_scalar(x: &ScalarUnderactuated, gains: &GainSet, frozen: bool) -> (f64, f64) {
    let tau = -x.i_s * (gains.kp * x.eta_e + gains.kd * x.v_s + gains.ki * x.v_i) - gains.kc * x.b_inv * x.i_a * x.v_a;
    let d = if frozen { 0.0 } else { x.eta_e - x.christoffel * x.dir * x.v_i };
    (tau, d)
}

/// Underactuated PID for so(3)-valued subsystems with constant metrics.
#[allow(clippy::too_many_arguments)]
pub fn pid_underactuated_step(
    v_s: &Vec3,
    v_a: &Vec3,
    eta_e: &Vec3,
    v_i: &Vec3,
    gains: &GainSet,
    i_s: &Mat3,
    signs_s: (f64, f64),
    b_inv: &Mat3,
    i_a: &Mat3,
    frozen: bool,
) -> Result<(Vec3, Vec3)> {
    let tau = -(i_s * (gains.kp * eta_e + gains.kd * v_s + gains.ki * v_i)) - gains.kc * (b_inv * (i_a * v_a));
    if frozen {
        return Ok((tau, Vec3::zeros()));
    }
    let inv = i_s.try_inverse().ok_or(Error::Singular { what: "inertia", value: i_s.determinant() })?;
    Ok((tau, eta_e - inv * so3_connection_term(i_s, signs_s, v_s, v_i)))
}

/// Constrained PID on a left-invariant so(3) metric with a constant projector:
/// `P_D(gamma) = -kp P_D dV - kd P_D(I g') - kI P_D(I v_I)` and
/// `I nabla_{g'} v_I = -(nabla_{g'} P_Dc)(I v_I) + P_D dV`.
///
/// The law carries unit gain on `dV`; `kp` is exposed and the
/// scenario default is 1.
#[allow(clippy::too_many_arguments)]
pub fn pid_constrained_step(
    gdot: &Vec3,
    v_i: &Vec3,
    kp: f64,
    gains: &GainSet,
    metric: &InertiaMetric,
    dist: &ConstraintDistribution,
    dv: &Vec3,
    frozen: bool,
) -> Result<(Vec3, Vec3)> {
    let (i, invariance) = match metric {
        InertiaMetric::Constant { m, invariance } => (m, *invariance),
        _ => return Err(Error::MetricKind("expected a constant matrix")),
    };
    let viol = dist.violation(i, gdot);
    if viol > crate::geometry::CONSTRAINT_TOL {
        return Err(Error::Constraint(viol));
    }
    let p = dist.p_dstar();
    let control = -(p * (kp * dv + gains.kd * (i * gdot) + gains.ki * (i * v_i)));
    if frozen {
        return Ok((control, Vec3::zeros()));
    }
    let signs = connection_signs(invariance, Chirality::Left)?;
    let nab = nabla_constant_projector(dist.p_dstar_c(), i, signs, gdot, v_i)?;
    let rhs = -nab + p * dv - so3_connection_term(i, signs, gdot, v_i);
    let inv = i.try_inverse().ok_or(Error::Singular { what: "inertia", value: i.determinant() })?;
    Ok((control, inv * rhs))
}

/// Inner products feeding the Lyapunov function, all in the output metric.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovInputs {
    pub v: f64,
    pub vs_vs: f64,
    pub vi_vi: f64,
    pub eta_vs: f64,
    pub vi_vs: f64,
    pub vi_eta: f64,
    pub eta_eta: f64,
    /// Actuation subsystem potential and kinetic energy.
    pub v_a: f64,
    pub va_va: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub w: f64,
    pub q_min_eig: f64,
    /// `Q` positive definite, so the quadratic decrease bound is active.
    pub zdot_w_bound_ok: bool,
    /// `(|v_I|, |eta_e|, |v_s|, |v_a|)`
    pub z_norms: [f64; 4],
}

/// The matrix `Q` of the decrease bound, `z = (|v_I|, |eta|, |v_s|)`.
pub fn lyapunov_q(gains: &GainSet, mu: f64, kappa: f64) -> Matrix3<f64> {
    let (kp, kd, ki) = (gains.kp, gains.kd, gains.ki);
    let delta = (kappa * mu - 1.0).abs();
    Matrix3::new(
        ki * ki / kd,
        0.0,
        -delta * ki,
        0.0,
        ki / (kd * kd) * (kp - 2.0 * kappa * kd * kd),
        0.0,
        -delta * ki,
        0.0,
        kd - mu * ki / (kd * kd),
    )
}

/// `W = kp V + 1/2 <<v_s,v_s>> + gamma/2 <<v_I,v_I>> + alpha <<eta,v_s>>
///  + beta <<v_I,v_s>> + sigma <<v_I,eta>> + V_a + 1/2 <<v_a,v_a>>`.
pub fn lyapunov_w(x: &LyapunovInputs, gains: &GainSet, mu: f64, kappa: f64) -> LyapunovSample {
    let (kp, kd, ki) = (gains.kp, gains.kd, gains.ki);
    let alpha = ki / (kd * kd);
    let beta = ki / kd;
    let sigma = 2.0 * kappa * ki;
    let gamma = ki * (ki + kp * kd) / (kd * kd);
    let w = kp * x.v
        + 0.5 * x.vs_vs
        + 0.5 * gamma * x.vi_vi
        + alpha * x.eta_vs
        + beta * x.vi_vs
        + sigma * x.vi_eta
        + x.v_a
        + 0.5 * x.va_va;
    let q_min_eig = lyapunov_q(gains, mu, kappa).symmetric_eigenvalues().min();
    LyapunovSample {
        w,
        q_min_eig,
        zdot_w_bound_ok: q_min_eig > 0.0,
        z_norms: [x.vi_vi.max(0.0).sqrt(), x.eta_eta.max(0.0).sqrt(), x.vs_vs.max(0.0).sqrt(), x.va_va.max(0.0).sqrt()],
    }
}

/// Deterministic quasi-uniform axes on the unit sphere (Fibonacci lattice).
pub fn sphere_axes(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Numerical `mu` and `lambda` for a gradient field on SO(3).
///
/// `eta(R)` is the gradient in body components, `v(R)` the Morse function and
/// `i` the (left-invariant) metric. `mu` is the largest metric operator norm
/// of `xi -> nabla_xi eta` over an axis-angle grid; `lambda` is the supremum
/// of `<<eta, eta>> / (2 V)` over the same grid.
pub fn morse_constants_so3(
    eta: &dyn Fn(&Rotation) -> Vec3,
    v: &dyn Fn(&Rotation) -> f64,
    i: &Mat3,
    n_axes: usize,
    n_angles: usize,
) -> MorseConstants {
    let signs = (1.0, -1.0);
    let sqrt_i = i.symmetric_eigen();
    let half =
        sqrt_i.eigenvectors * Mat3::from_diagonal(&sqrt_i.eigenvalues.map(f64::sqrt)) * sqrt_i.eigenvectors.transpose();
    let half_inv = half.try_inverse().expect("definite metric");
    let mut mu: f64 = 0.0;
    let mut lambda: f64 = 0.0;
    let mut visit = |r: &Rotation| {
        let e = eta(r);
        let val = v(r);
        if val > 1e-8 {
            lambda = lambda.max(e.dot(&(i * e)) / (2.0 * val));
        }
        let mut h = Mat3::zeros();
        for j in 0..3 {
            let mut xi = Vec3::zeros();
            xi[j] = 1.0;
            let d =
                crate::geometry::richardson_derivative(|s| eta(&r.compose(&crate::lie::exp_so3(&(s * xi))))[0], 1e-4);
            let d1 =
                crate::geometry::richardson_derivative(|s| eta(&r.compose(&crate::lie::exp_so3(&(s * xi))))[1], 1e-4);
            let d2 =
                crate::geometry::richardson_derivative(|s| eta(&r.compose(&crate::lie::exp_so3(&(s * xi))))[2], 1e-4);
            let inv = i.try_inverse().expect("definite metric");
            let col = Vec3::new(d, d1, d2) + inv * so3_connection_term(i, signs, &xi, &e);
            h.set_column(j, &col);
        }
        let op = half * h * half_inv;
        mu = mu.max(op.singular_values().max());
    };
    visit(&Rotation::identity());
    for axis in sphere_axes(n_axes) {
        for k in 1..=n_angles {
            let ang = std::f64::consts::PI * k as f64 / n_angles as f64;
            visit(&crate::lie::exp_so3(&(ang * axis)));
        }
    }
    MorseConstants { mu, lambda }
}

/// `mu` and `lambda` for a scalar output metric on a compact interval.
pub fn morse_constants_scalar(
    eta: &dyn Fn(f64) -> f64,
    v: &dyn Fn(f64) -> f64,
    metric: &dyn Fn(f64) -> f64,
    christoffel: &dyn Fn(f64) -> f64,
    range: (f64, f64),
    n: usize,
) -> MorseConstants {
    let mut mu: f64 = 0.0;
    let mut lambda: f64 = 0.0;
    for k in 0..=n {
        let x = range.0 + (range.1 - range.0) * k as f64 / n as f64;
        let e = eta(x);
        let d = crate::geometry::richardson_derivative(|s| eta(x + s), 1e-4);
        mu = mu.max((d + christoffel(x) * e).abs());
        let val = v(x);
        if val > 1e-8 {
            lambda = lambda.max(metric(x) * e * e / (2.0 * val));
        }
    }
    MorseConstants { mu, lambda }
}

/// `hat(eta) = R R_r^T - R_r R^T`, the reference-frame form of the plain gradient.
pub fn morse_grad_spatial(r: &Rotation, r_ref: &Rotation) -> Vec3 {
    let a = r.matrix() * r_ref.matrix().transpose();
    vee_skew_part(&(a - a.transpose()))
}

/// Convenience: `hat` re-exported for controller code.
pub fn skew(v: &Vec3) -> Mat3 {
    hat(v)
}
