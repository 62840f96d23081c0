//! Inverted pendulum on a cart moving along an incline.
//!
//! Output `y = theta + beta`, metric `I(theta) = I_p - m^2 L^2 cos^2(theta) / (M + m)`.

use super::{factor, one_and_half, positive, SystemId, GRAVITY};
use crate::error::{Error, Result};
use crate::pid::{morse_constants_scalar, GainSet, MorseConstants};
use crate::sim::{ClosedLoop, Hold, Observation};
use serde::{Deserialize, Serialize};

fn default_g() -> f64 {
    GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcParams {
    pub cart_mass_kg: f64,
    pub pend_mass_kg: f64,
    /// Pivot to pendulum centre of mass.
    pub length_m: f64,
    /// Pendulum inertia about the pivot.
    pub inertia_kgm2: f64,
    pub beta_deg: f64,
    #[serde(default = "default_g")]
    pub g_m_s2: f64,
}

impl IpcParams {
    pub fn validate(&self) -> Result<()> {
        positive("cart_mass_kg", self.cart_mass_kg)?;
        positive("pend_mass_kg", self.pend_mass_kg)?;
        positive("length_m", self.length_m)?;
        positive("inertia_kgm2", self.inertia_kgm2)?;
        positive("g_m_s2", self.g_m_s2)?;
        // I(theta) is smallest at cos^2 = 1
        let min = self.metric(0.0);
        if !(min > 0.0) {
            return Err(Error::Param(format!("I(theta) = {min:.3e} is not positive at theta = 0")));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta_deg.to_radians()
    }

    fn total(&self) -> f64 {
        self.cart_mass_kg + self.pend_mass_kg
    }

    fn ml(&self) -> f64 {
        self.pend_mass_kg * self.length_m
    }

    pub fn metric(&self, theta: f64) -> f64 {
        self.inertia_kgm2 - self.ml().powi(2) * theta.cos().powi(2) / self.total()
    }

    /// `Gamma(theta) = m^2 L^2 sin(2 theta) / (2 I(theta) (M + m))`.
    pub fn christoffel(&self, theta: f64) -> f64 {
        self.ml().powi(2) * (2.0 * theta).sin() / (2.0 * self.metric(theta) * self.total())
    }

    /// `B(theta) = (M + m) I_p / (m L cos(theta) I(theta))`.
    pub fn b(&self, theta: f64) -> Result<f64> {
        let c = theta.cos();
        if c.abs() < 1e-12 {
            return Err(Error::Singular { what: "B(theta)", value: c });
        }
        Ok(self.total() * self.inertia_kgm2 / (self.ml() * c * self.metric(theta)))
    }

    /// `KE + PE` with `PE = m g L cos(theta + beta)`.
    pub fn energy(&self, theta: f64, omega: f64, v: f64) -> f64 {
        0.5 * (self.total() * v * v - 2.0 * self.ml() * theta.cos() * omega * v + self.inertia_kgm2 * omega * omega)
            + self.ml() * self.g_m_s2 * (theta + self.beta()).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcMismatch {
    #[serde(default = "one_and_half")]
    pub cart_mass: f64,
    #[serde(default = "one_and_half")]
    pub pend_mass: f64,
    #[serde(default = "one_and_half")]
    pub length: f64,
    #[serde(default = "one_and_half")]
    pub inertia: f64,
}

impl Default for IpcMismatch {
    fn default() -> Self {
        IpcMismatch { cart_mass: 1.5, pend_mass: 1.5, length: 1.5, inertia: 1.5 }
    }
}

impl IpcMismatch {
    pub fn apply(&self, p: &IpcParams) -> Result<IpcParams> {
        Ok(IpcParams {
            cart_mass_kg: p.cart_mass_kg * factor("cart_mass", self.cart_mass)?,
            pend_mass_kg: p.pend_mass_kg * factor("pend_mass", self.pend_mass)?,
            length_m: p.length_m * factor("length", self.length)?,
            inertia_kgm2: p.inertia_kgm2 * factor("inertia", self.inertia)?,
            ..p.clone()
        })
    }
}

/// Returns `(dtheta, domega, dx, dv)`.
pub fn ipc_dynamics(theta: f64, omega: f64, _x: f64, v: f64, f: f64, p: &IpcParams) -> Result<(f64, f64, f64, f64)> {
    let i = p.metric(theta);
    if !(i > 0.0) {
        return Err(Error::Singular { what: "I(theta)", value: i });
    }
    let (s, c) = theta.sin_cos();
    let mt = p.total();
    let ml = p.ml();
    let y = theta + p.beta();
    let domega = (ml * p.g_m_s2 * y.sin() + ml * c / mt * f - ml * ml / mt * omega * omega * s * c) / i;
    let dv =
        (-ml * p.inertia_kgm2 / i * omega * omega * s + ml * ml * p.g_m_s2 / i * y.sin() * c + p.inertia_kgm2 / i * f)
            / mt;
    Ok((omega, domega, v, dv))
}

/// How the pendulum torque `u` is turned into the cart force `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceMap {
    /// `u = -I(theta)(kp eta + kd omega + kI o_I)` and `f = (M + m) u / (m L cos(theta))`.
    #[default]
    InputU,
    /// `f = -(I(theta) / cos(theta))(kp eta + kd omega + kI o_I)`, the torque law applied as a force.
    Direct,
}

/// `f = ... - (I(theta) / I_p) kcd v` and `do_I = -Gamma(theta) omega o_I + eta_e`
/// with `I(theta) eta_e = sin(theta + beta)`.
pub fn ipc_controller(
    theta: f64,
    omega: f64,
    v: f64,
    o_i: f64,
    gains: &GainSet,
    p: &IpcParams,
    map: ForceMap,
) -> Result<(f64, f64)> {
    let c = theta.cos();
    if c.abs() < 1e-9 {
        return Err(Error::Singular { what: "cos(theta) in the IPC controller", value: c });
    }
    let i = p.metric(theta);
    let eta = (theta + p.beta()).sin() / i;
    let pid = gains.kp * eta + gains.kd * omega + gains.ki * o_i;
    let scale = match map {
        ForceMap::InputU => p.total() / p.ml(),
        ForceMap::Direct => 1.0,
    };
    let f = -scale * i / c * pid - i / p.inertia_kgm2 * gains.kcd * v;
    let d = -p.christoffel(theta) * omega * o_i + eta;
    Ok((f, d))
}

fn default_theta() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcInitial {
    #[serde(default = "default_theta")]
    pub theta_deg: f64,
    #[serde(default)]
    pub omega_rad_s: f64,
    #[serde(default)]
    pub x_m: f64,
    #[serde(default)]
    pub v_m_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcConfig {
    pub nominal: IpcParams,
    #[serde(default)]
    pub mismatch: IpcMismatch,
    /// True incline; the nominal one when absent.
    pub beta_true_deg: Option<f64>,
    pub initial: IpcInitial,
    #[serde(default)]
    pub force_map: ForceMap,
}

/// State: `(theta, omega, x, v, o_I)`. Hold: `f`.
#[derive(Debug, Clone)]
pub struct IpcLoop {
    gains: GainSet,
    nominal: IpcParams,
    plant: IpcParams,
    x0: [f64; 5],
    map: ForceMap,
}

impl IpcLoop {
    pub fn new(cfg: &IpcConfig, gains: GainSet) -> Result<Self> {
        cfg.nominal.validate()?;
        gains.validate()?;
        let mut plant = cfg.mismatch.apply(&cfg.nominal)?;
        if let Some(b) = cfg.beta_true_deg {
            plant.beta_deg = b;
        }
        plant.validate()?;
        let i = &cfg.initial;
        Ok(IpcLoop {
            gains,
            nominal: cfg.nominal.clone(),
            plant,
            x0: [i.theta_deg.to_radians(), i.omega_rad_s, i.x_m, i.v_m_s, 0.0],
            map: cfg.force_map,
        })
    }

    pub fn plant(&self) -> &IpcParams {
        &self.plant
    }
}

impl ClosedLoop for IpcLoop {
    fn system(&self) -> &'static str {
        SystemId::Ipc.as_str()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.to_vec()
    }

    fn rotation_offsets(&self) -> Vec<usize> {
        vec![]
    }

    fn control(&self, _t: f64, x: &[f64]) -> Result<Hold> {
        let (f, _) = ipc_controller(x[0], x[1], x[3], x[4], &self.gains, &self.nominal, self.map)?;
        Ok(Hold { u: vec![f], frozen: false, saturated: false })
    }

    fn derivative(&self, _t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()> {
        let (a, b, c, d) = ipc_dynamics(x[0], x[1], x[2], x[3], hold.u[0], &self.plant)?;
        let (_, doi) = ipc_controller(x[0], x[1], x[3], x[4], &self.gains, &self.nominal, self.map)?;
        dx.copy_from_slice(&[a, b, c, d, doi]);
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        ["theta", "omega", "x", "v", "o_i", "tilt", "f"].map(String::from).to_vec()
    }

    fn observe(&self, _t: f64, x: &[f64], hold: &Hold) -> Result<Observation> {
        let tilt = x[0] + self.plant.beta();
        let f = hold.u.first().copied().unwrap_or(0.0);
        Ok(Observation {
            values: vec![x[0], x[1], x[2], x[3], x[4], tilt, f],
            error: tilt.abs(),
            invariants: vec![],
            channels: vec![("cart_speed", x[3]), ("tilt", tilt)],
            lyapunov: None,
        })
    }

    fn morse_constants(&self) -> MorseConstants {
        let p = self.nominal.clone();
        let b = p.beta();
        let lim = 85f64.to_radians();
        morse_constants_scalar(
            &|th| (th + b).sin() / p.metric(th),
            &|th| 1.0 - (th + b).cos(),
            &|th| p.metric(th),
            &|th| p.christoffel(th),
            (-lim, lim),
            2000,
        )
    }

    fn gains(&self) -> &GainSet {
        &self.gains
    }
}
