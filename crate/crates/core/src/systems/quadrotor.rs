//! Attitude dynamics of a quadrotor (and of a plain fully actuated rigid
//! body), rotor allocation with saturation, and the SO(3) PID loop.

use super::{diag, positive, SystemId, GRAVITY};
use crate::error::{Error, Result};
use crate::geometry::so3_connection_term;
use crate::lie::{e3, exp_so3, hat, Mat3, Rotation, Vec3};
use crate::pid::{
    morse_constants_so3, morse_grad_so3, so3_feedforward, GainSet, LyapunovInputs, MorseConstants, MorseWeighting,
};
use crate::sim::{get_mat3, get_vec3, set_mat3, set_vec3, ClosedLoop, Hold, Observation};
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const RPM_TO_RAD_S: f64 = 2.0 * PI / 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass_kg: f64,
    pub inertia_kgm2: [f64; 3],
    pub l_arm_m: f64,
    /// Lift coefficient, N/(rad/s)^2.
    pub c_l: f64,
    /// Drag moment coefficient, N m/(rad/s)^2.
    pub c_d: f64,
    pub motor_min_rpm: f64,
    pub motor_max_rpm: f64,
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        positive("mass_kg", self.mass_kg)?;
        for v in self.inertia_kgm2 {
            positive("inertia_kgm2", v)?;
        }
        positive("l_arm_m", self.l_arm_m)?;
        positive("c_l", self.c_l)?;
        positive("c_d", self.c_d)?;
        positive("motor_min_rpm", self.motor_min_rpm)?;
        if !(self.motor_min_rpm < self.motor_max_rpm) {
            return Err(Error::Param("motor_min_rpm must be below motor_max_rpm".into()));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Mat3 {
        diag(self.inertia_kgm2)
    }
}

/// `dR = R hat(Omega)`, `dOmega = I^-1 (I Omega x Omega) + Delta_T + I^-1 tau_u`.
pub fn quad_dynamics(r: &Rotation, omega: &Vec3, tau_u: &Vec3, delta_t: &Vec3, inertia: &Mat3) -> Result<(Mat3, Vec3)> {
    let inv = inertia.try_inverse().ok_or(Error::Singular { what: "inertia", value: inertia.determinant() })?;
    let dr = r.matrix() * hat(omega);
    let dw = inv * (inertia * omega).cross(omega) + delta_t + inv * tau_u;
    Ok((dr, dw))
}

/// Maps squared rotor speeds to `(f_u, tau_u)`.
pub fn allocation_matrix(c_l: f64, c_d: f64, l: f64) -> Matrix4<f64> {
    Matrix4::new(
        c_l,
        c_l,
        c_l,
        c_l, //
        0.0,
        l * c_l,
        -l * c_l,
        0.0, //
        -l * c_l,
        0.0,
        l * c_l,
        0.0, //
        -c_d,
        c_d,
        -c_d,
        c_d,
    )
}

/// Forward rotor map with per-motor coefficients.
pub fn rotor_wrench(omega_sq: &[f64; 4], c_l: &[f64; 4], c_d: &[f64; 4], l: f64) -> (f64, Vec3) {
    let f: [f64; 4] = std::array::from_fn(|k| c_l[k] * omega_sq[k]);
    let d: [f64; 4] = std::array::from_fn(|k| c_d[k] * omega_sq[k]);
    let tau = Vec3::new(l * (f[1] - f[2]), l * (f[2] - f[0]), -d[0] + d[1] - d[2] + d[3]);
    (f.iter().sum(), tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Demanded squared speeds before clipping, (rad/s)^2.
    pub demand_sq: [f64; 4],
    /// Squared speeds after clipping, (rad/s)^2.
    pub omega_sq: [f64; 4],
    pub speeds_rpm: [f64; 4],
    pub saturated: bool,
}

/// `omega^2 = A^-1 (f_u, tau_u)` clipped to the motor range.
pub fn quad_allocation(f_u: f64, tau_u: &Vec3, p: &QuadrotorParams) -> Result<Allocation> {
    let a = allocation_matrix(p.c_l, p.c_d, p.l_arm_m);
    let inv = a.try_inverse().ok_or(Error::Singular { what: "allocation matrix", value: a.determinant() })?;
    let w2 = inv * Vector4::new(f_u, tau_u.x, tau_u.y, tau_u.z);
    let lo = (p.motor_min_rpm * RPM_TO_RAD_S).powi(2);
    let hi = (p.motor_max_rpm * RPM_TO_RAD_S).powi(2);
    let mut saturated = false;
    let omega_sq: [f64; 4] = std::array::from_fn(|k| {
        let v = w2[k];
        if v < lo {
            saturated = true;
            lo
        } else if v > hi {
            saturated = true;
            hi
        } else {
            v
        }
    });
    Ok(Allocation {
        demand_sq: std::array::from_fn(|k| w2[k]),
        omega_sq,
        speeds_rpm: omega_sq.map(|w| w.sqrt() / RPM_TO_RAD_S),
        saturated,
    })
}

/// Velocity along which the integrator is transported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorVelocity {
    /// `zeta_E`, the velocity error.
    #[default]
    Error,
    /// `Omega`, the body velocity, the variant used for the quadrotor.
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeControl {
    pub tau: Vec3,
    pub d_omega_i: Vec3,
    pub v: f64,
    pub eta: Vec3,
    pub zeta_e: Vec3,
}

/// SO(3) PID with left error `E = R_r^T R`:
/// `tau = -I(kp eta + kd Omega_e + kI Omega_I) + f_r` and
/// `I dOmega_I = I eta - (connection part of I nabla_v Omega_I)`.
#[allow(clippy::too_many_arguments)]
pub fn quad_controller(
    r: &Rotation,
    omega: &Vec3,
    r_ref: &Rotation,
    zeta_r: &Vec3,
    dzeta_r: &Vec3,
    omega_i: &Vec3,
    gains: &GainSet,
    inertia: &Mat3,
    weighting: MorseWeighting,
    along: IntegratorVelocity,
    frozen: bool,
) -> Result<AttitudeControl> {
    let signs = (1.0, -1.0);
    let e = r_ref.inverse().compose(r);
    let zeta_e = omega - e.matrix().transpose() * zeta_r;
    let (eta, v) = morse_grad_so3(&e, weighting, inertia);
    let (f_r, _, _) = so3_feedforward(inertia, signs, &e, &zeta_e, zeta_r, dzeta_r);
    let tau = -(inertia * (gains.kp * eta + gains.kd * zeta_e + gains.ki * omega_i)) + f_r;
    let d_omega_i = if frozen {
        Vec3::zeros()
    } else {
        let inv = inertia.try_inverse().ok_or(Error::Singular { what: "inertia", value: inertia.determinant() })?;
        let dir = match along {
            IntegratorVelocity::Error => zeta_e,
            IntegratorVelocity::Body => *omega,
        };
        eta - inv * so3_connection_term(inertia, signs, &dir, omega_i)
    };
    Ok(AttitudeControl { tau, d_omega_i, v, eta, zeta_e })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttitudeReference {
    Constant {
        #[serde(default)]
        rotvec_deg: [f64; 3],
    },
    /// `R_r(t) = exp(t hat(a))`.
    ExpCurve { rate_rad_s: [f64; 3] },
}

impl AttitudeReference {
    /// `(R_r, zeta_r, d zeta_r)` with body velocities.
    pub fn eval(&self, t: f64) -> (Rotation, Vec3, Vec3) {
        match self {
            AttitudeReference::Constant { rotvec_deg } => {
                (exp_so3(&Vec3::from(*rotvec_deg).map(f64::to_radians)), Vec3::zeros(), Vec3::zeros())
            }
            AttitudeReference::ExpCurve { rate_rad_s } => {
                let a = Vec3::from(*rate_rad_s);
                (exp_so3(&(t * a)), a, Vec3::zeros())
            }
        }
    }
}

fn default_g() -> f64 {
    GRAVITY
}

/// Constant body moment added to the plant only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Disturbance {
    #[default]
    None,
    ConstantMoment {
        moment_nm: [f64; 3],
    },
    /// `Delta_d = -g (X x e3)` for a centre-of-mass offset `X` in kg m.
    ComOffset {
        com_offset_kgm: [f64; 3],
        #[serde(default = "default_g")]
        g_m_s2: f64,
    },
}

impl Disturbance {
    pub fn moment(&self) -> Vec3 {
        match self {
            Disturbance::None => Vec3::zeros(),
            Disturbance::ConstantMoment { moment_nm } => Vec3::from(*moment_nm),
            Disturbance::ComOffset { com_offset_kgm, g_m_s2 } => -*g_m_s2 * Vec3::from(*com_offset_kgm).cross(&e3()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialAttitude {
    /// Rotation matrix given row by row.
    pub rotation_rows: Option<[[f64; 3]; 3]>,
    pub rotvec_deg: Option<[f64; 3]>,
    #[serde(default)]
    pub omega_rad_s: [f64; 3],
}

impl InitialAttitude {
    pub fn rotation(&self) -> Result<Rotation> {
        match (&self.rotation_rows, &self.rotvec_deg) {
            (Some(rows), None) => Rotation::new(Mat3::from_fn(|i, j| rows[i][j])),
            (None, Some(v)) => Ok(exp_so3(&Vec3::from(*v).map(f64::to_radians))),
            (None, None) => Ok(Rotation::identity()),
            _ => Err(Error::Scenario("initial: give rotation_rows or rotvec_deg, not both".into())),
        }
    }
}

fn default_weighting() -> MorseWeighting {
    MorseWeighting::InertiaWeighted
}

fn ones4() -> [f64; 4] {
    [1.0; 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadActual {
    pub mass_kg: f64,
    pub inertia_kgm2: [f64; 3],
    /// Per-motor factors on the nominal lift coefficient.
    #[serde(default = "ones4")]
    pub c_l_factors: [f64; 4],
    #[serde(default = "ones4")]
    pub c_d_factors: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorConfig {
    pub nominal: QuadrotorParams,
    pub actual: QuadActual,
    pub thrust_n: f64,
    pub reference: AttitudeReference,
    #[serde(default)]
    pub disturbance: Disturbance,
    pub initial: InitialAttitude,
    #[serde(default = "default_weighting")]
    pub weighting: MorseWeighting,
    #[serde(default)]
    pub integrator_velocity: IntegratorVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBodyConfig {
    pub inertia_kgm2: [f64; 3],
    /// True inertia; the nominal one when absent.
    pub actual_inertia_kgm2: Option<[f64; 3]>,
    pub reference: AttitudeReference,
    #[serde(default)]
    pub disturbance: Disturbance,
    pub initial: InitialAttitude,
    #[serde(default = "default_weighting")]
    pub weighting: MorseWeighting,
    #[serde(default)]
    pub integrator_velocity: IntegratorVelocity,
}

#[derive(Debug, Clone)]
struct Motors {
    nominal: QuadrotorParams,
    c_l: [f64; 4],
    c_d: [f64; 4],
    thrust_n: f64,
}

/// Closed loop shared by the quadrotor and the rigid body.
///
/// State: `R` (0..9), `Omega` (9..12), `Omega_I` (12..15).
/// Hold: applied moment (0..3), commanded moment (3..6), rotor rpm (6..10).
#[derive(Debug, Clone)]
pub struct AttitudeLoop {
    system: SystemId,
    gains: GainSet,
    i_nom: Mat3,
    i_true: Mat3,
    motors: Option<Motors>,
    reference: AttitudeReference,
    moment: Vec3,
    r0: Rotation,
    omega0: Vec3,
    weighting: MorseWeighting,
    along: IntegratorVelocity,
}

impl AttitudeLoop {
    pub fn quadrotor(cfg: &QuadrotorConfig, gains: GainSet) -> Result<Self> {
        cfg.nominal.validate()?;
        positive("actual.mass_kg", cfg.actual.mass_kg)?;
        for v in cfg.actual.inertia_kgm2.iter().chain(&cfg.actual.c_l_factors).chain(&cfg.actual.c_d_factors) {
            positive("actual", *v)?;
        }
        positive("thrust_n", cfg.thrust_n)?;
        gains.validate()?;
        let n = &cfg.nominal;
        Ok(AttitudeLoop {
            system: SystemId::Quadrotor,
            gains,
            i_nom: n.inertia(),
            i_true: diag(cfg.actual.inertia_kgm2),
            motors: Some(Motors {
                nominal: n.clone(),
                c_l: cfg.actual.c_l_factors.map(|f| f * n.c_l),
                c_d: cfg.actual.c_d_factors.map(|f| f * n.c_d),
                thrust_n: cfg.thrust_n,
            }),
            reference: cfg.reference.clone(),
            moment: cfg.disturbance.moment(),
            r0: cfg.initial.rotation()?,
            omega0: Vec3::from(cfg.initial.omega_rad_s),
            weighting: cfg.weighting,
            along: cfg.integrator_velocity,
        })
    }

    pub fn rigid_body(cfg: &RigidBodyConfig, gains: GainSet) -> Result<Self> {
        for v in cfg.inertia_kgm2.iter().chain(cfg.actual_inertia_kgm2.iter().flatten()) {
            positive("inertia_kgm2", *v)?;
        }
        gains.validate()?;
        Ok(AttitudeLoop {
            system: SystemId::RigidBody,
            gains,
            i_nom: diag(cfg.inertia_kgm2),
            i_true: diag(cfg.actual_inertia_kgm2.unwrap_or(cfg.inertia_kgm2)),
            motors: None,
            reference: cfg.reference.clone(),
            moment: cfg.disturbance.moment(),
            r0: cfg.initial.rotation()?,
            omega0: Vec3::from(cfg.initial.omega_rad_s),
            weighting: cfg.weighting,
            along: cfg.integrator_velocity,
        })
    }

    pub fn nominal_inertia(&self) -> &Mat3 {
        &self.i_nom
    }

    /// Integrator equilibrium `I^-1 Delta_d / kI` for a disturbance known to the monitor.
    pub fn integrator_equilibrium(&self) -> Vec3 {
        if self.gains.ki > 0.0 {
            self.i_nom.try_inverse().map(|m| m * self.moment / self.gains.ki).unwrap_or_else(Vec3::zeros)
        } else {
            Vec3::zeros()
        }
    }

    fn law(&self, t: f64, x: &[f64], frozen: bool) -> Result<AttitudeControl> {
        let r = Rotation::from_matrix_unchecked(get_mat3(x, 0));
        let (rr, zr, dzr) = self.reference.eval(t);
        quad_controller(
            &r,
            &get_vec3(x, 9),
            &rr,
            &zr,
            &dzr,
            &get_vec3(x, 12),
            &self.gains,
            &self.i_nom,
            self.weighting,
            self.along,
            frozen,
        )
    }
}

impl ClosedLoop for AttitudeLoop {
    fn system(&self) -> &'static str {
        self.system.as_str()
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; 15];
        set_mat3(&mut x, 0, self.r0.matrix());
        set_vec3(&mut x, 9, &self.omega0);
        x
    }

    fn rotation_offsets(&self) -> Vec<usize> {
        vec![0]
    }

    fn control(&self, t: f64, x: &[f64]) -> Result<Hold> {
        let c = self.law(t, x, false)?;
        let mut u = vec![0.0; 10];
        let mut saturated = false;
        let applied = match &self.motors {
            Some(m) => {
                let a = quad_allocation(m.thrust_n, &c.tau, &m.nominal)?;
                saturated = a.saturated;
                u[6..10].copy_from_slice(&a.speeds_rpm);
                rotor_wrench(&a.omega_sq, &m.c_l, &m.c_d, m.nominal.l_arm_m).1
            }
            None => c.tau,
        };
        u[0..3].copy_from_slice(applied.as_slice());
        u[3..6].copy_from_slice(c.tau.as_slice());
        Ok(Hold { u, frozen: saturated, saturated })
    }

    fn derivative(&self, t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()> {
        let r = Rotation::from_matrix_unchecked(get_mat3(x, 0));
        let inv = self.i_true.try_inverse().ok_or(Error::Singular { what: "inertia", value: 0.0 })?;
        let tau = get_vec3(&hold.u, 0);
        let (dr, dw) = quad_dynamics(&r, &get_vec3(x, 9), &tau, &(inv * self.moment), &self.i_true)?;
        let c = self.law(t, x, hold.frozen)?;
        set_mat3(dx, 0, &dr);
        set_vec3(dx, 9, &dw);
        set_vec3(dx, 12, &c.d_omega_i);
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = ["v_e"].iter().map(|s| s.to_string()).collect();
        for p in ["omega", "omega_e", "omega_i", "tau"] {
            c.extend((1..=3).map(|k| format!("{p}_{k}")));
        }
        if self.motors.is_some() {
            c.extend((1..=4).map(|k| format!("motor_{k}_rpm")));
        }
        c
    }

    fn observe(&self, t: f64, x: &[f64], hold: &Hold) -> Result<Observation> {
        let c = self.law(t, x, hold.frozen)?;
        let omega = get_vec3(x, 9);
        let oi = get_vec3(x, 12);
        let tau = if hold.u.len() >= 3 { get_vec3(&hold.u, 0) } else { Vec3::zeros() };
        let mut values = vec![c.v];
        for v in [omega, c.zeta_e, oi, tau] {
            values.extend_from_slice(v.as_slice());
        }
        if self.motors.is_some() {
            values.extend(hold.u.get(6..10).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; 4]));
        }
        let i = &self.i_nom;
        let vi = oi - self.integrator_equilibrium();
        let vs = c.zeta_e;
        let eta = c.eta;
        let ip = |a: &Vec3, b: &Vec3| a.dot(&(i * b));
        let lyapunov = Some(LyapunovInputs {
            v: c.v,
            vs_vs: ip(&vs, &vs),
            vi_vi: ip(&vi, &vi),
            eta_vs: ip(&eta, &vs),
            vi_vs: ip(&vi, &vs),
            vi_eta: ip(&vi, &eta),
            eta_eta: ip(&eta, &eta),
            v_a: 0.0,
            va_va: 0.0,
        });
        let shift = (oi - self.integrator_equilibrium()).norm();
        Ok(Observation {
            values,
            error: c.v,
            invariants: vec![],
            channels: vec![("omega_e_norm", c.zeta_e.norm()), ("integrator_offset", shift)],
            lyapunov,
        })
    }

    fn morse_constants(&self) -> MorseConstants {
        let i = self.i_nom;
        let w = self.weighting;
        morse_constants_so3(&|r| morse_grad_so3(r, w, &i).0, &|r| 3.0 - r.matrix().trace(), &i, 60, 12)
    }

    fn gains(&self) -> &GainSet {
        &self.gains
    }
}
