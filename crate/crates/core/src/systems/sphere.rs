//! Sphere rolling without slip on an incline, driven by an internal cart.
//!
//! All velocities are spatial. The shell metric is left-invariant
//! (`I_b^R = R I_b R^T`), the rolling metric `I_s` right-invariant and singular,
//! and the cart metrics `I_V`, `I_V~` left-invariant on the cart frame.

use super::{diag, factor, one_and_half, one_half, positive, unity, SystemId, GRAVITY};
use crate::error::{Error, Result};
use crate::geometry::so3_connection_term;
use crate::lie::{e3, hat, Mat3, Rotation, Vec3};
use crate::pid::{morse_constants_scalar, GainSet, MorseConstants};
use crate::sim::{get_mat3, get_vec3, set_mat3, set_vec3, ClosedLoop, Hold, Invariant, Observation};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

/// Tolerance on the no-slip and contact identities.
pub const ROLLING_TOL: f64 = 1e-8;

const LEFT_SPATIAL: (f64, f64) = (-1.0, -1.0);
const RIGHT_SPATIAL: (f64, f64) = (-1.0, 1.0);

fn default_g() -> f64 {
    GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereParams {
    pub m_b_kg: f64,
    /// Shell inertia diagonal in the shell frame.
    pub i_b_kgm2: [f64; 3],
    pub r_m: f64,
    pub m_i_kg: f64,
    /// Cart inertia diagonal about its centre of mass.
    pub i_i_kgm2: [f64; 3],
    /// Sphere centre to cart centre of mass.
    pub l_m: f64,
    #[serde(default = "default_g")]
    pub g_m_s2: f64,
}

impl SphereParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("m_b_kg", self.m_b_kg),
            ("r_m", self.r_m),
            ("m_i_kg", self.m_i_kg),
            ("l_m", self.l_m),
            ("g_m_s2", self.g_m_s2),
        ] {
            positive(n, v)?;
        }
        for k in 0..3 {
            positive(&format!("i_b_kgm2[{k}]"), self.i_b_kgm2[k])?;
            positive(&format!("i_i_kgm2[{k}]"), self.i_i_kgm2[k])?;
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.m_b_kg + self.m_i_kg
    }

    fn mrl(&self) -> f64 {
        self.m_i_kg * self.r_m * self.l_m
    }

    /// Steepest incline with a cart equilibrium, `arcsin(m_i l / ((m_b + m_i) r))`.
    pub fn beta_max(&self) -> f64 {
        (self.m_i_kg * self.l_m / (self.total() * self.r_m)).min(1.0).asin()
    }

    /// `I_V = I_i - m_i l^2 e3^2` in the cart frame.
    pub fn i_v(&self) -> Mat3 {
        let h = hat(&e3());
        diag(self.i_i_kgm2) - self.m_i_kg * self.l_m * self.l_m * h * h
    }

    /// `I_V~ = -r^2 m_i^2 l^2 e3^ I_V^-1 e3^` in the cart frame.
    pub fn i_v_tilde(&self) -> Mat3 {
        let h = hat(&e3());
        let inv = self.i_v().try_inverse().expect("positive definite");
        -self.mrl().powi(2) * h * inv * h
    }

    /// `I_s = -(m_b + m_i) r^2 e3^2`.
    pub fn i_s(&self) -> Mat3 {
        let h = hat(&e3());
        -self.total() * self.r_m * self.r_m * h * h
    }
}

/// Unit vector opposite to gravity for an incline of `beta` about `e1`.
pub fn gravity_direction(beta: f64) -> Vec3 {
    Vec3::new(0.0, beta.sin(), beta.cos())
}

/// Configuration-dependent operators at `(R, R_i)`.
#[derive(Debug, Clone)]
pub struct SphereOperators {
    pub i_b_r: Mat3,
    pub i_s: Mat3,
    pub i_v_r: Mat3,
    pub i_v_r_inv: Mat3,
    pub i_vt_r: Mat3,
    /// `m_i r l (R_i e3)^ e3^`, the shell to cart coupling.
    pub c: Mat3,
    pub b: Mat3,
    /// `I_b^R + I_s + e3^ I_V~^{R_i} e3^`.
    pub m_shell: Mat3,
}

impl SphereOperators {
    pub fn new(p: &SphereParams, r: &Mat3, ri: &Mat3) -> Result<Self> {
        let h = hat(&e3());
        let i_b_r = r * diag(p.i_b_kgm2) * r.transpose();
        let i_v = p.i_v();
        let i_v_inv = i_v.try_inverse().ok_or(Error::Singular { what: "I_V", value: i_v.determinant() })?;
        let i_v_r = ri * i_v * ri.transpose();
        let i_v_r_inv = ri * i_v_inv * ri.transpose();
        let i_vt_r = ri * p.i_v_tilde() * ri.transpose();
        let b = p.mrl() * h * ri * h * i_v_inv * ri.transpose() + Mat3::identity();
        let c = p.mrl() * hat(&(ri * e3())) * h;
        let i_s = p.i_s();
        let m_shell = i_b_r + i_s + h * i_vt_r * h;
        Ok(SphereOperators { i_b_r, i_s, i_v_r, i_v_r_inv, i_vt_r, c, b, m_shell })
    }
}

/// `tau_v`, the velocity terms of the shell equation.
pub fn tau_v(p: &SphereParams, ops: &SphereOperators, ri: &Mat3, omega_i: &Vec3) -> Vec3 {
    let h = hat(&e3());
    let wi = hat(omega_i);
    let inv = p.i_v().try_inverse().expect("positive definite");
    p.mrl() * h * ri * h * inv * ri.transpose() * wi * ops.i_v_r * omega_i + p.mrl() * h * wi * wi * ri * e3()
}

/// `tau_g = -r (m_b + m_i) g e3 x e_g + (g / r) e3 x I_V~^{R_i} e_g`.
pub fn tau_g(p: &SphereParams, ops: &SphereOperators, e_g: &Vec3) -> Vec3 {
    -p.r_m * p.total() * p.g_m_s2 * e3().cross(e_g) + p.g_m_s2 / p.r_m * e3().cross(&(ops.i_vt_r * e_g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereState {
    pub r: Rotation,
    pub o: Vec3,
    pub omega: Vec3,
    pub r_i: Rotation,
    pub omega_i: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereRates {
    pub d_r: Mat3,
    pub d_o: Vec3,
    pub d_omega: Vec3,
    pub d_r_i: Mat3,
    pub d_omega_i: Vec3,
}

/// Shell and cart equations solved jointly for `(d omega, d omega_i)`.
pub fn sphere_dynamics(s: &SphereState, tau_u: &Vec3, p: &SphereParams, beta: f64) -> Result<SphereRates> {
    let (r, ri) = (s.r.matrix(), s.r_i.matrix());
    let ops = SphereOperators::new(p, r, ri)?;
    let e_g = gravity_direction(beta);
    let (w, wi) = (&s.omega, &s.omega_i);
    let shell = (ops.i_b_r * w).cross(w) + ops.b * tau_u + tau_v(p, &ops, ri, wi) + tau_g(p, &ops, &e_g);
    let cart = (ops.i_v_r * wi).cross(wi) + p.m_i_kg * p.g_m_s2 * p.l_m * (ri * e3()).cross(&e_g) - tau_u;
    let mut a = SMatrix::<f64, 6, 6>::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&ops.m_shell);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&ops.c);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&ops.i_v_r);
    let mut rhs = SVector::<f64, 6>::zeros();
    rhs.fixed_rows_mut::<3>(0).copy_from(&shell);
    rhs.fixed_rows_mut::<3>(3).copy_from(&cart);
    let sol = a.lu().solve(&rhs).ok_or(Error::Singular { what: "sphere mass operator", value: 0.0 })?;
    Ok(SphereRates {
        d_r: hat(w) * r,
        d_o: p.r_m * w.cross(&e3()),
        d_omega: sol.fixed_rows::<3>(0).into(),
        d_r_i: hat(wi) * ri,
        d_omega_i: sol.fixed_rows::<3>(3).into(),
    })
}

/// Kinetic plus potential energy of shell and cart.
pub fn sphere_energy(s: &SphereState, p: &SphereParams, beta: f64) -> Result<f64> {
    let ops = SphereOperators::new(p, s.r.matrix(), s.r_i.matrix())?;
    let (w, wi) = (&s.omega, &s.omega_i);
    let e_g = gravity_direction(beta);
    let ke = 0.5 * w.dot(&((ops.i_b_r + ops.i_s) * w)) + wi.dot(&(ops.c * w)) + 0.5 * wi.dot(&(ops.i_v_r * wi));
    let pe = p.total() * p.g_m_s2 * e_g.dot(&s.o) - p.m_i_kg * p.g_m_s2 * p.l_m * e_g.dot(&(s.r_i.matrix() * e3()));
    Ok(ke + pe)
}

/// Planar reference `(o_ref, do_ref, ddo_ref)`; the third component of `o_ref` is `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SphereReference {
    Fixed {
        point_m: [f64; 2],
    },
    /// `start + (v t, amplitude sin(w t))`.
    Sinusoid {
        start_m: [f64; 2],
        v_m_s: f64,
        amplitude_m: f64,
        w_rad_s: f64,
    },
    /// `centre + radius (cos(w t + phase), sin(w t + phase))`.
    Circle {
        centre_m: [f64; 2],
        radius_m: f64,
        w_rad_s: f64,
        #[serde(default)]
        phase_deg: f64,
    },
}

impl SphereReference {
    pub fn eval(&self, t: f64, r: f64) -> (Vec3, Vec3, Vec3) {
        match *self {
            SphereReference::Fixed { point_m } => (Vec3::new(point_m[0], point_m[1], r), Vec3::zeros(), Vec3::zeros()),
            SphereReference::Sinusoid { start_m, v_m_s, amplitude_m, w_rad_s } => {
                let (s, c) = (w_rad_s * t).sin_cos();
                (
                    Vec3::new(start_m[0] + v_m_s * t, start_m[1] + amplitude_m * s, r),
                    Vec3::new(v_m_s, amplitude_m * w_rad_s * c, 0.0),
                    Vec3::new(0.0, -amplitude_m * w_rad_s * w_rad_s * s, 0.0),
                )
            }
            SphereReference::Circle { centre_m, radius_m, w_rad_s, phase_deg } => {
                let (s, c) = (w_rad_s * t + phase_deg.to_radians()).sin_cos();
                let w2 = w_rad_s * w_rad_s;
                (
                    Vec3::new(centre_m[0] + radius_m * c, centre_m[1] + radius_m * s, r),
                    Vec3::new(-radius_m * w_rad_s * s, radius_m * w_rad_s * c, 0.0),
                    Vec3::new(-radius_m * w2 * c, -radius_m * w2 * s, 0.0),
                )
            }
        }
    }
}

/// `omega` with `e3 . omega = 0` and `do = r omega x e3`.
pub fn rolling_velocity(d_o: &Vec3, r: f64) -> Vec3 {
    Vec3::new(-d_o[1] / r, d_o[0] / r, 0.0)
}

/// Reference data seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereTarget {
    pub o: Vec3,
    pub omega: Vec3,
    pub d_omega: Vec3,
}

impl SphereTarget {
    pub fn from_reference(reference: &SphereReference, t: f64, r: f64) -> Self {
        let (o, d_o, dd_o) = reference.eval(t, r);
        SphereTarget { o, omega: rolling_velocity(&d_o, r), d_omega: rolling_velocity(&dd_o, r) }
    }
}

/// Intrinsic integrator and control law on nominal parameters; returns `(tau_u, d o_I)`.
///
/// Gradients: `I_a^R eta_a = I_s eta_s = e3^ o_e` and `I_V~^{R_i} eta_V~ = o_e`.
pub fn sphere_controller(
    s: &SphereState,
    target: &SphereTarget,
    o_i: &Vec3,
    gains: &GainSet,
    p: &SphereParams,
) -> Result<(Vec3, Vec3)> {
    let (r, ri) = (s.r.matrix(), s.r_i.matrix());
    let ops = SphereOperators::new(p, r, ri)?;
    let h = hat(&e3());
    let o_e = s.o - target.o;
    let w_e = s.omega - target.omega;
    let wi = &s.omega_i;
    let (kp, kd, ki) = (gains.kp, gains.kd, gains.ki);

    let d_v = h * o_e;
    let d_vt = o_e;
    let stiffness = d_v + d_v + h * d_vt;

    let conn = so3_connection_term(&ops.i_s, RIGHT_SPATIAL, &w_e, o_i)
        + so3_connection_term(&ops.i_b_r, LEFT_SPATIAL, &w_e, o_i)
        + h * so3_connection_term(&ops.i_vt_r, LEFT_SPATIAL, wi, &(h * o_i));
    let m_inv = ops
        .m_shell
        .try_inverse()
        .ok_or(Error::Singular { what: "shell mass operator", value: ops.m_shell.determinant() })?;
    let d_oi = m_inv * (stiffness - conn);

    let he = h * w_e;
    let t_vt = -0.5 * h * (ops.i_vt_r * wi.cross(&he) + (ops.i_vt_r * wi).cross(&he) + (ops.i_vt_r * he).cross(wi));
    let ib = &ops.i_b_r;
    let (wr, dwr) = (&target.omega, &target.d_omega);
    let t_ref = ops.m_shell * dwr - (ib * wr).cross(&w_e) - (ib * w_e).cross(wr) - (ib * wr).cross(wr);
    let shaping = p.g_m_s2 / p.r_m * e3().cross(&(ops.i_vt_r * e3()));
    let pid = kp * stiffness + ops.m_shell * (kd * w_e + ki * o_i);
    let inner = tau_v(p, &ops, ri, wi) + t_vt + (ops.i_s * w_e).cross(&w_e) - t_ref + shaping + pid;
    let b_inv = ops.b.try_inverse().ok_or(Error::Singular { what: "B", value: ops.b.determinant() })?;
    let tau = -(b_inv * inner) + ops.i_v_r * (gains.kcd * wi);
    Ok((tau, d_oi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereMismatch {
    #[serde(default = "one_and_half")]
    pub m_b: f64,
    #[serde(default = "one_and_half")]
    pub i_b: f64,
    #[serde(default = "unity")]
    pub r: f64,
    #[serde(default = "one_half")]
    pub m_i: f64,
    #[serde(default = "one_and_half")]
    pub i_i: f64,
    #[serde(default = "one_and_half")]
    pub l: f64,
}

impl Default for SphereMismatch {
    fn default() -> Self {
        SphereMismatch { m_b: 1.5, i_b: 1.5, r: 1.0, m_i: 0.5, i_i: 1.5, l: 1.5 }
    }
}

impl SphereMismatch {
    pub fn apply(&self, p: &SphereParams) -> Result<SphereParams> {
        let (ib, ii) = (factor("i_b", self.i_b)?, factor("i_i", self.i_i)?);
        Ok(SphereParams {
            m_b_kg: p.m_b_kg * factor("m_b", self.m_b)?,
            i_b_kgm2: p.i_b_kgm2.map(|v| v * ib),
            r_m: p.r_m * factor("r", self.r)?,
            m_i_kg: p.m_i_kg * factor("m_i", self.m_i)?,
            i_i_kgm2: p.i_i_kgm2.map(|v| v * ii),
            l_m: p.l_m * factor("l", self.l)?,
            g_m_s2: p.g_m_s2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereInitial {
    /// Planar position; the normal component is `r`.
    pub o_m: [f64; 2],
    #[serde(default)]
    pub omega_rad_s: [f64; 3],
    #[serde(default)]
    pub omega_i_rad_s: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub nominal: SphereParams,
    #[serde(default)]
    pub mismatch: SphereMismatch,
    pub beta_true_deg: f64,
    /// Parsed for completeness; the control law has no incline term.
    pub beta_nominal_deg: Option<f64>,
    pub reference: SphereReference,
    pub initial: SphereInitial,
}

/// State: `R` 0..9, `o` 9..12, `omega` 12..15, `R_i` 15..24, `omega_i` 24..27, `o_I` 27..30.
#[derive(Debug, Clone)]
pub struct SphereLoop {
    gains: GainSet,
    nominal: SphereParams,
    plant: SphereParams,
    beta: f64,
    reference: SphereReference,
    x0: Vec<f64>,
}

fn unpack(x: &[f64]) -> SphereState {
    SphereState {
        r: Rotation::from_matrix_unchecked(get_mat3(x, 0)),
        o: get_vec3(x, 9),
        omega: get_vec3(x, 12),
        r_i: Rotation::from_matrix_unchecked(get_mat3(x, 15)),
        omega_i: get_vec3(x, 24),
    }
}

impl SphereLoop {
    pub fn new(cfg: &SphereConfig, gains: GainSet) -> Result<Self> {
        cfg.nominal.validate()?;
        gains.validate()?;
        let plant = cfg.mismatch.apply(&cfg.nominal)?;
        plant.validate()?;
        let beta = cfg.beta_true_deg.to_radians();
        if beta.sin().abs() > plant.m_i_kg * plant.l_m / (plant.total() * plant.r_m) {
            return Err(Error::Param(format!(
                "no cart equilibrium: beta = {} deg exceeds beta_max = {:.2} deg",
                cfg.beta_true_deg,
                plant.beta_max().to_degrees()
            )));
        }
        let mut x0 = vec![0.0; 30];
        set_mat3(&mut x0, 0, &Mat3::identity());
        set_vec3(&mut x0, 9, &Vec3::new(cfg.initial.o_m[0], cfg.initial.o_m[1], plant.r_m));
        set_vec3(&mut x0, 12, &Vec3::from(cfg.initial.omega_rad_s));
        set_mat3(&mut x0, 15, &Mat3::identity());
        set_vec3(&mut x0, 24, &Vec3::from(cfg.initial.omega_i_rad_s));
        Ok(SphereLoop { gains, nominal: cfg.nominal.clone(), plant, beta, reference: cfg.reference, x0 })
    }

    pub fn plant(&self) -> &SphereParams {
        &self.plant
    }

    fn target(&self, t: f64) -> SphereTarget {
        SphereTarget::from_reference(&self.reference, t, self.nominal.r_m)
    }

    fn law(&self, t: f64, x: &[f64]) -> Result<(Vec3, Vec3)> {
        sphere_controller(&unpack(x), &self.target(t), &get_vec3(x, 27), &self.gains, &self.nominal)
    }
}

impl ClosedLoop for SphereLoop {
    fn system(&self) -> &'static str {
        SystemId::Sphere.as_str()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn rotation_offsets(&self) -> Vec<usize> {
        vec![0, 15]
    }

    fn control(&self, t: f64, x: &[f64]) -> Result<Hold> {
        let (tau, _) = self.law(t, x)?;
        Ok(Hold { u: tau.as_slice().to_vec(), frozen: false, saturated: false })
    }

    fn derivative(&self, t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()> {
        let d = sphere_dynamics(&unpack(x), &get_vec3(&hold.u, 0), &self.plant, self.beta)?;
        let (_, doi) = self.law(t, x)?;
        set_mat3(dx, 0, &d.d_r);
        set_vec3(dx, 9, &d.d_o);
        set_vec3(dx, 12, &d.d_omega);
        set_mat3(dx, 15, &d.d_r_i);
        set_vec3(dx, 24, &d.d_omega_i);
        set_vec3(dx, 27, &doi);
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = ["o_1", "o_2", "o_ref_1", "o_ref_2"].map(String::from).to_vec();
        for p in ["omega_e", "omega_i", "o_i", "tau"] {
            c.extend((1..=3).map(|k| format!("{p}_{k}")));
        }
        c
    }

    fn observe(&self, t: f64, x: &[f64], hold: &Hold) -> Result<Observation> {
        let s = unpack(x);
        let tg = self.target(t);
        let o_e = s.o - tg.o;
        let w_e = s.omega - tg.omega;
        let d = sphere_dynamics(&s, &Vec3::zeros(), &self.plant, self.beta)?;
        let r = self.plant.r_m;
        let no_slip = (d.d_o + r * e3().cross(&s.omega)).norm();
        let tau = if hold.u.len() >= 3 { get_vec3(&hold.u, 0) } else { Vec3::zeros() };
        let mut values = vec![s.o[0], s.o[1], tg.o[0], tg.o[1]];
        for v in [w_e, s.omega_i, get_vec3(x, 27), tau] {
            values.extend_from_slice(v.as_slice());
        }
        Ok(Observation {
            values,
            error: o_e.xy().norm(),
            invariants: vec![
                Invariant { name: "no_slip", value: no_slip, tol: ROLLING_TOL },
                Invariant { name: "normal_velocity", value: d.d_o[2].abs(), tol: ROLLING_TOL },
                Invariant { name: "contact", value: (s.o[2] - r).abs(), tol: ROLLING_TOL },
            ],
            channels: vec![("omega_i", s.omega_i.norm())],
            lyapunov: None,
        })
    }

    /// Quadratic `V = |o_e|^2 / (2 r)` on the plane.
    fn morse_constants(&self) -> MorseConstants {
        let r = self.nominal.r_m;
        morse_constants_scalar(&|o| o / r, &|o| 0.5 * o * o / r, &|_| 1.0, &|_| 0.0, (-5.0, 5.0), 200)
    }

    fn gains(&self) -> &GainSet {
        &self.gains
    }
}
