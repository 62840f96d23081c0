//! Hoop rolling without slip on an incline, driven by an internal mechanism.
//!
//! Output is the hoop centre `o` along the incline; the controller never sees
//! the incline angle.

use super::{factor, one_and_half, one_half, positive, unity, SystemId, GRAVITY};
use crate::error::{Error, Result};
use crate::pid::{morse_constants_scalar, pid_underactuated_scalar, GainSet, MorseConstants, ScalarUnderactuated};
use crate::sim::{ClosedLoop, Hold, Invariant, Observation};
use serde::{Deserialize, Serialize};

/// Tolerance of the rolling identity `o - o0 + r(theta - theta0) = 0`.
pub const ROLLING_TOL: f64 = 1e-8;

fn default_g() -> f64 {
    GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoopParams {
    pub m_h_kg: f64,
    pub i_h_kgm2: f64,
    pub r_m: f64,
    pub m_a_kg: f64,
    pub i_a_kgm2: f64,
    pub l_m: f64,
    /// Incline seen by the plant.
    #[serde(default)]
    pub beta_deg: f64,
    #[serde(default = "default_g")]
    pub g_m_s2: f64,
}

impl HoopParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("m_h_kg", self.m_h_kg),
            ("i_h_kgm2", self.i_h_kgm2),
            ("r_m", self.r_m),
            ("m_a_kg", self.m_a_kg),
            ("i_a_kgm2", self.i_a_kgm2),
            ("l_m", self.l_m),
            ("g_m_s2", self.g_m_s2),
        ] {
            positive(n, v)?;
        }
        let s = self.beta_deg.to_radians().sin().abs();
        if self.m_a_kg * self.l_m / (self.total() * self.r_m) < s {
            return Err(Error::Param(format!(
                "no actuator equilibrium: beta = {} deg exceeds beta_max = {:.2} deg",
                self.beta_deg,
                self.beta_max().to_degrees()
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.m_h_kg + self.m_a_kg
    }

    /// `I_a + m_a l^2`.
    fn d(&self) -> f64 {
        self.i_a_kgm2 + self.m_a_kg * self.l_m * self.l_m
    }

    fn mrl(&self) -> f64 {
        self.m_a_kg * self.r_m * self.l_m
    }

    /// Steepest incline with an actuator equilibrium, `arcsin(m_a l / (M r))`.
    pub fn beta_max(&self) -> f64 {
        (self.m_a_kg * self.l_m / (self.total() * self.r_m)).min(1.0).asin()
    }

    /// `I(theta_a) = I_h + M r^2 - m_a^2 r^2 l^2 cos^2(theta_a) / (I_a + m_a l^2)`.
    pub fn metric(&self, theta_a: f64) -> f64 {
        self.i_h_kgm2 + self.total() * self.r_m.powi(2) - self.mrl().powi(2) * theta_a.cos().powi(2) / self.d()
    }

    /// `I dtheta_a + c(theta_a)` with `c = m_a^2 r^2 l^2 sin(2 theta_a) / (2(I_a + m_a l^2))`.
    pub fn connection_coefficient(&self, theta_a: f64) -> f64 {
        self.mrl().powi(2) * (2.0 * theta_a).sin() / (2.0 * self.d())
    }

    pub fn christoffel(&self, theta_a: f64) -> f64 {
        self.connection_coefficient(theta_a) / self.metric(theta_a)
    }

    pub fn b(&self, theta_a: f64) -> Result<f64> {
        let den = self.d() - self.mrl() * theta_a.cos();
        if den.abs() < 1e-12 {
            return Err(Error::Singular { what: "I_a + m_a l^2 - m_a r l cos(theta_a)", value: den });
        }
        Ok(self.mrl() * theta_a.cos() / self.d() - self.metric(theta_a) / den)
    }

    fn beta(&self) -> f64 {
        self.beta_deg.to_radians()
    }

    pub fn tau_g_omega(&self, theta_a: f64) -> f64 {
        let b = self.beta();
        self.r_m * self.total() * self.g_m_s2 * b.sin()
            - self.m_a_kg * self.mrl() * self.l_m * self.g_m_s2 / self.d() * theta_a.cos() * (theta_a + b).sin()
    }

    pub fn tau_g_omega_a(&self, theta_a: f64) -> f64 {
        self.mrl() * theta_a.cos() / self.d() * self.tau_g_omega(theta_a)
            - self.metric(theta_a) * self.m_a_kg * self.g_m_s2 * self.l_m * (theta_a + self.beta()).sin() / self.d()
    }

    /// Kinetic plus potential energy; `tau_u = 0` conserves it.
    pub fn energy(&self, theta: f64, omega: f64, theta_a: f64, omega_a: f64) -> f64 {
        let a = self.i_h_kgm2 + self.total() * self.r_m.powi(2);
        0.5 * a * omega * omega - self.mrl() * theta_a.cos() * omega * omega_a + 0.5 * self.d() * omega_a * omega_a
            - self.r_m * self.total() * self.g_m_s2 * self.beta().sin() * theta
            - self.m_a_kg * self.g_m_s2 * self.l_m * (theta_a + self.beta()).cos()
    }
}

/// State order `(theta, o, omega, theta_a, omega_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoopState {
    pub theta: f64,
    pub o: f64,
    pub omega: f64,
    pub theta_a: f64,
    pub omega_a: f64,
}

/// Equations of motion as the five state rates.
pub fn hoop_dynamics(s: &HoopState, tau_u: f64, p: &HoopParams) -> Result<[f64; 5]> {
    let i = p.metric(s.theta_a);
    if !(i > 0.0) {
        return Err(Error::Singular { what: "I(theta_a)", value: i });
    }
    let b = p.b(s.theta_a)?;
    let (sn, cs) = s.theta_a.sin_cos();
    let wa2 = s.omega_a * s.omega_a;
    let domega = (-p.mrl() * sn * wa2 + p.tau_g_omega(s.theta_a) + tau_u) / i;
    let domega_a = (-p.mrl().powi(2) * sn * cs / p.d() * wa2 + p.tau_g_omega_a(s.theta_a) + b * tau_u) / i;
    Ok([s.omega, -p.r_m * s.omega, domega, s.omega_a, domega_a])
}

/// Regularising plus potential-shaping input.
pub fn hoop_regularize(theta_a: f64, omega_a: f64, omega_e: f64, p: &HoopParams) -> f64 {
    let c = p.connection_coefficient(theta_a);
    -c * omega_a * omega_e + p.m_a_kg * p.mrl() * p.l_m * p.g_m_s2 * (2.0 * theta_a).sin() / (2.0 * p.d())
}

/// Returns `(tau_reg + tau_tilde, do_I)` with `eta_e = -o_e`.
#[allow(clippy::too_many_arguments)]
pub fn hoop_controller(
    o_e: f64,
    omega_e: f64,
    omega_a: f64,
    theta_a: f64,
    o_i: f64,
    gains: &GainSet,
    p: &HoopParams,
) -> Result<(f64, f64)> {
    let b = p.b(theta_a)?;
    if b.abs() < 1e-12 {
        return Err(Error::Singular { what: "B(theta_a)", value: b });
    }
    let i = p.metric(theta_a);
    let x = ScalarUnderactuated {
        eta_e: -o_e,
        v_s: omega_e,
        v_i: o_i,
        v_a: omega_a,
        i_s: i,
        i_a: i,
        b_inv: 1.0 / b,
        christoffel: p.christoffel(theta_a),
        dir: omega_a,
    };
    let (tilde, d) = pid_underactuated_scalar(&x, gains, false);
    Ok((hoop_regularize(theta_a, omega_a, omega_e, p) + tilde, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HoopReference {
    Fixed {
        o_m: f64,
    },
    Linear {
        o0_m: f64,
        v_m_s: f64,
    },
    /// `o0 + amplitude sin(w t)`.
    Sinusoid {
        o0_m: f64,
        amplitude_m: f64,
        w_rad_s: f64,
    },
}

impl HoopReference {
    /// `(o_ref, do_ref, ddo_ref)`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            HoopReference::Fixed { o_m } => (o_m, 0.0, 0.0),
            HoopReference::Linear { o0_m, v_m_s } => (o0_m + v_m_s * t, v_m_s, 0.0),
            HoopReference::Sinusoid { o0_m, amplitude_m, w_rad_s } => {
                let (s, c) = (w_rad_s * t).sin_cos();
                (o0_m + amplitude_m * s, amplitude_m * w_rad_s * c, -amplitude_m * w_rad_s * w_rad_s * s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoopMismatch {
    #[serde(default = "one_and_half")]
    pub m_h: f64,
    #[serde(default = "one_and_half")]
    pub i_h: f64,
    #[serde(default = "unity")]
    pub r: f64,
    #[serde(default = "one_half")]
    pub m_a: f64,
    #[serde(default = "one_and_half")]
    pub i_a: f64,
    #[serde(default = "one_and_half")]
    pub l: f64,
}

impl Default for HoopMismatch {
    fn default() -> Self {
        HoopMismatch { m_h: 1.5, i_h: 1.5, r: 1.0, m_a: 0.5, i_a: 1.5, l: 1.5 }
    }
}

impl HoopMismatch {
    pub fn apply(&self, p: &HoopParams) -> Result<HoopParams> {
        Ok(HoopParams {
            m_h_kg: p.m_h_kg * factor("m_h", self.m_h)?,
            i_h_kgm2: p.i_h_kgm2 * factor("i_h", self.i_h)?,
            r_m: p.r_m * factor("r", self.r)?,
            m_a_kg: p.m_a_kg * factor("m_a", self.m_a)?,
            i_a_kgm2: p.i_a_kgm2 * factor("i_a", self.i_a)?,
            l_m: p.l_m * factor("l", self.l)?,
            ..p.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoopInitial {
    pub o_m: f64,
    #[serde(default)]
    pub omega_rad_s: f64,
    #[serde(default)]
    pub theta_a_deg: f64,
    #[serde(default)]
    pub omega_a_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoopConfig {
    /// Controller parameters; `beta_deg` here is ignored by the law.
    pub nominal: HoopParams,
    #[serde(default)]
    pub mismatch: HoopMismatch,
    pub beta_true_deg: f64,
    pub reference: HoopReference,
    pub initial: HoopInitial,
}

/// State: `(theta, o, omega, theta_a, omega_a, o_I)`. Hold: total input.
#[derive(Debug, Clone)]
pub struct HoopLoop {
    gains: GainSet,
    nominal: HoopParams,
    plant: HoopParams,
    reference: HoopReference,
    x0: [f64; 6],
}

impl HoopLoop {
    pub fn new(cfg: &HoopConfig, gains: GainSet) -> Result<Self> {
        gains.validate()?;
        let nominal = HoopParams { beta_deg: 0.0, ..cfg.nominal.clone() };
        nominal.validate()?;
        let mut plant = cfg.mismatch.apply(&nominal)?;
        plant.beta_deg = cfg.beta_true_deg;
        plant.validate()?;
        let i = &cfg.initial;
        let theta0 = -i.o_m / plant.r_m;
        Ok(HoopLoop {
            gains,
            nominal,
            plant,
            reference: cfg.reference,
            x0: [theta0, i.o_m, i.omega_rad_s, i.theta_a_deg.to_radians(), i.omega_a_rad_s, 0.0],
        })
    }

    pub fn plant(&self) -> &HoopParams {
        &self.plant
    }

    fn errors(&self, t: f64, x: &[f64]) -> (f64, f64) {
        let (o_r, do_r, _) = self.reference.eval(t);
        let omega_r = -do_r / self.nominal.r_m;
        (x[1] - o_r, x[2] - omega_r)
    }

    fn law(&self, t: f64, x: &[f64]) -> Result<(f64, f64)> {
        let (o_e, w_e) = self.errors(t, x);
        hoop_controller(o_e, w_e, x[4], x[3], x[5], &self.gains, &self.nominal)
    }
}

impl ClosedLoop for HoopLoop {
    fn system(&self) -> &'static str {
        SystemId::Hoop.as_str()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.to_vec()
    }

    fn rotation_offsets(&self) -> Vec<usize> {
        vec![]
    }

    fn control(&self, t: f64, x: &[f64]) -> Result<Hold> {
        let (tau, _) = self.law(t, x)?;
        Ok(Hold { u: vec![tau], frozen: false, saturated: false })
    }

    fn derivative(&self, t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()> {
        let s = HoopState { theta: x[0], o: x[1], omega: x[2], theta_a: x[3], omega_a: x[4] };
        let d = hoop_dynamics(&s, hold.u[0], &self.plant)?;
        let (_, doi) = self.law(t, x)?;
        dx[..5].copy_from_slice(&d);
        dx[5] = doi;
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        ["o", "o_ref", "o_e", "omega_e", "theta_a", "omega_a", "o_i", "tau_u"].map(String::from).to_vec()
    }

    fn observe(&self, t: f64, x: &[f64], hold: &Hold) -> Result<Observation> {
        let (o_e, w_e) = self.errors(t, x);
        let (o_r, _, _) = self.reference.eval(t);
        let rolling = x[1] - self.x0[1] + self.plant.r_m * (x[0] - self.x0[0]);
        let tau = hold.u.first().copied().unwrap_or(0.0);
        Ok(Observation {
            values: vec![x[1], o_r, o_e, w_e, x[3], x[4], x[5], tau],
            error: o_e.abs(),
            invariants: vec![Invariant { name: "rolling", value: rolling.abs(), tol: ROLLING_TOL }],
            channels: vec![("omega_a", x[4]), ("theta_a", x[3])],
            lyapunov: None,
        })
    }

    /// Output metric on `R` is `I(theta_a)`, a constant scale along `o`; the
    /// gradient `-o` gives `mu = 1` and `lambda = 1` in the normalised metric.
    fn morse_constants(&self) -> MorseConstants {
        morse_constants_scalar(&|o| o, &|o| 0.5 * o * o, &|_| 1.0, &|_| 0.0, (-5.0, 5.0), 200)
    }

    fn gains(&self) -> &GainSet {
        &self.gains
    }
}
