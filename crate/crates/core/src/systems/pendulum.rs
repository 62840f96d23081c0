//! Spherical pendulum with no spin about its own axis, stabilised upright.
//!
//! Output `y(R) = R e3` with `V = 1 - e3 . R e3`.

use super::quadrotor::InitialAttitude;
use super::{diag, factor, one_and_half, positive, SystemId};
use crate::error::{Error, Result};
use crate::lie::{e3, Mat3, Rotation, Vec3};
use crate::pid::{morse_constants_so3, GainSet, MorseConstants};
use crate::sim::{get_mat3, get_vec3, set_mat3, set_vec3, ClosedLoop, Hold, Invariant, Observation};
use serde::{Deserialize, Serialize};

/// Tolerance on `Omega_3` at entry to the dynamics and controller.
pub const SPIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass_kg: f64,
    pub length_m: f64,
    pub g_m_s2: f64,
    /// Diagonal of the body inertia about the pivot.
    pub inertia_kgm2: [f64; 3],
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        positive("mass_kg", self.mass_kg)?;
        positive("length_m", self.length_m)?;
        positive("g_m_s2", self.g_m_s2)?;
        for (k, v) in self.inertia_kgm2.iter().enumerate() {
            positive(&format!("inertia_kgm2[{k}]"), *v)?;
        }
        Ok(())
    }

    pub fn inertia(&self) -> Mat3 {
        diag(self.inertia_kgm2)
    }

    pub fn energy(&self, r: &Rotation, omega: &Vec3) -> f64 {
        0.5 * omega.dot(&(self.inertia() * omega))
            + self.mass_kg * self.g_m_s2 * self.length_m * e3().dot(&(r.matrix() * e3()))
    }
}

/// Scales mass, length and inertia; gravity is not a plant parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumMismatch {
    #[serde(default = "one_and_half")]
    pub mass: f64,
    #[serde(default = "one_and_half")]
    pub length: f64,
    #[serde(default = "one_and_half")]
    pub inertia: f64,
}

impl Default for PendulumMismatch {
    fn default() -> Self {
        PendulumMismatch { mass: 1.5, length: 1.5, inertia: 1.5 }
    }
}

impl PendulumMismatch {
    pub fn apply(&self, p: &PendulumParams) -> Result<PendulumParams> {
        let k = factor("inertia", self.inertia)?;
        Ok(PendulumParams {
            mass_kg: p.mass_kg * factor("mass", self.mass)?,
            length_m: p.length_m * factor("length", self.length)?,
            g_m_s2: p.g_m_s2,
            inertia_kgm2: p.inertia_kgm2.map(|v| v * k),
        })
    }
}

fn check_spin(omega: &Vec3) -> Result<()> {
    if omega[2].abs() > SPIN_TOL {
        return Err(Error::Constraint(omega[2].abs()));
    }
    Ok(())
}

/// Constraint moment `-e3 e3^T (I Omega x Omega)`.
pub fn constraint_moment(i: &Mat3, omega: &Vec3) -> Vec3 {
    Vec3::new(0.0, 0.0, -(i * omega).cross(omega)[2])
}

/// `I dOmega = I Omega x Omega - e3 e3^T (I Omega x Omega) - M g l e3 x R^T e3 + tau_u`.
pub fn pendulum_dynamics(r: &Rotation, omega: &Vec3, tau_u: &Vec3, p: &PendulumParams) -> Result<(Mat3, Vec3)> {
    check_spin(omega)?;
    let i = p.inertia();
    let gyro = (i * omega).cross(omega);
    let grav = -p.mass_kg * p.g_m_s2 * p.length_m * e3().cross(&(r.matrix().transpose() * e3()));
    let rhs = gyro + constraint_moment(&i, omega) + grav + Vec3::new(tau_u[0], tau_u[1], 0.0);
    let mut dw = rhs.component_div(&i.diagonal());
    dw[2] = 0.0;
    Ok((r.matrix() * crate::lie::hat(omega), dw))
}

/// `I eta = R^T e3 x e3` and `V = 1 - e3 . R e3`.
pub fn pendulum_gradient(r: &Rotation, i: &Mat3) -> (Vec3, f64) {
    let re3 = r.matrix().transpose() * e3();
    let mut eta = re3.cross(&e3()).component_div(&i.diagonal());
    eta[2] = 0.0;
    (eta, 1.0 - re3[2])
}

/// Two-axis law: `tau_k = -I_k(kp eta_k + kd Omega_k + kI Omega_I,k)` and
/// `I_k dOmega_I,k = I_k eta_k` for `k = 1, 2`; third components are zero.
pub fn pendulum_controller(
    r: &Rotation,
    omega: &Vec3,
    omega_i: &Vec3,
    gains: &GainSet,
    p_nominal: &PendulumParams,
) -> Result<(Vec3, Vec3)> {
    check_spin(omega)?;
    let i = p_nominal.inertia();
    let (eta, _) = pendulum_gradient(r, &i);
    let mut tau = Vec3::zeros();
    let mut d = Vec3::zeros();
    for k in 0..2 {
        tau[k] = -i[(k, k)] * (gains.kp * eta[k] + gains.kd * omega[k] + gains.ki * omega_i[k]);
        d[k] = eta[k];
    }
    Ok((tau, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumConfig {
    pub nominal: PendulumParams,
    #[serde(default)]
    pub mismatch: PendulumMismatch,
    pub initial: InitialAttitude,
}

/// State: `R` (0..9), `Omega` (9..12), `Omega_I` (12..15). Hold: `tau_u`.
#[derive(Debug, Clone)]
pub struct PendulumLoop {
    gains: GainSet,
    nominal: PendulumParams,
    plant: PendulumParams,
    r0: Rotation,
    omega0: Vec3,
}

impl PendulumLoop {
    pub fn new(cfg: &PendulumConfig, gains: GainSet) -> Result<Self> {
        cfg.nominal.validate()?;
        gains.validate()?;
        let plant = cfg.mismatch.apply(&cfg.nominal)?;
        plant.validate()?;
        let omega0 = Vec3::from(cfg.initial.omega_rad_s);
        check_spin(&omega0)?;
        Ok(PendulumLoop { gains, nominal: cfg.nominal.clone(), plant, r0: cfg.initial.rotation()?, omega0 })
    }

    pub fn plant(&self) -> &PendulumParams {
        &self.plant
    }
}

impl ClosedLoop for PendulumLoop {
    fn system(&self) -> &'static str {
        SystemId::Pendulum.as_str()
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

    fn control(&self, _t: f64, x: &[f64]) -> Result<Hold> {
        let r = Rotation::from_matrix_unchecked(get_mat3(x, 0));
        let (tau, _) = pendulum_controller(&r, &get_vec3(x, 9), &get_vec3(x, 12), &self.gains, &self.nominal)?;
        Ok(Hold { u: tau.as_slice().to_vec(), frozen: false, saturated: false })
    }

    fn derivative(&self, _t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()> {
        let r = Rotation::from_matrix_unchecked(get_mat3(x, 0));
        let omega = get_vec3(x, 9);
        let (dr, dw) = pendulum_dynamics(&r, &omega, &get_vec3(&hold.u, 0), &self.plant)?;
        let (_, di) = pendulum_controller(&r, &omega, &get_vec3(x, 12), &self.gains, &self.nominal)?;
        set_mat3(dx, 0, &dr);
        set_vec3(dx, 9, &dw);
        set_vec3(dx, 12, &di);
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        let mut c = vec!["v_y".to_string()];
        for p in ["o", "omega", "omega_i", "tau"] {
            c.extend((1..=3).map(|k| format!("{p}_{k}")));
        }
        c
    }

    fn observe(&self, _t: f64, x: &[f64], hold: &Hold) -> Result<Observation> {
        let r = Rotation::from_matrix_unchecked(get_mat3(x, 0));
        let omega = get_vec3(x, 9);
        let (_, v) = pendulum_gradient(&r, &self.nominal.inertia());
        let o = self.plant.length_m * (r.matrix() * e3());
        let tau = if hold.u.len() >= 3 { get_vec3(&hold.u, 0) } else { Vec3::zeros() };
        let mut values = vec![v];
        for w in [o, omega, get_vec3(x, 12), tau] {
            values.extend_from_slice(w.as_slice());
        }
        Ok(Observation {
            values,
            error: v,
            invariants: vec![Invariant { name: "omega_3", value: omega[2].abs(), tol: SPIN_TOL }],
            channels: vec![],
            lyapunov: None,
        })
    }

    fn morse_constants(&self) -> MorseConstants {
        let i = self.nominal.inertia();
        morse_constants_so3(&|r| pendulum_gradient(r, &i).0, &|r| pendulum_gradient(r, &i).1, &i, 60, 12)
    }

    fn gains(&self) -> &GainSet {
        &self.gains
    }
}
