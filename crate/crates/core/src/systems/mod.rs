//! Benchmark plants and their specialised controllers.
//!
//! Every plant exposes a pure derivative evaluator, its controller law and a
//! [`ClosedLoop`](crate::sim::ClosedLoop) wiring used by the simulator. The
//! plant runs on true parameters, the controller on nominal ones.

pub mod hoop;
pub mod ipc;
pub mod pendulum;
pub mod quadrotor;
pub mod sphere;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Standard gravity used wherever a scenario does not override it.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemId {
    Quadrotor,
    Ipc,
    Hoop,
    Sphere,
    Pendulum,
    /// Fully actuated rigid body on SO(3) without a motor model.
    RigidBody,
}

impl SystemId {
    pub const PLANTS: [SystemId; 5] =
        [SystemId::Quadrotor, SystemId::Ipc, SystemId::Hoop, SystemId::Sphere, SystemId::Pendulum];

    pub fn as_str(&self) -> &'static str {
        match self {
            SystemId::Quadrotor => "quadrotor",
            SystemId::Ipc => "ipc",
            SystemId::Hoop => "hoop",
            SystemId::Sphere => "sphere",
            SystemId::Pendulum => "pendulum",
            SystemId::RigidBody => "rigid-body",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            SystemId::Quadrotor => "quadrotor attitude on SO(3) with motor allocation and saturation",
            SystemId::Ipc => "inverted pendulum on a cart on an incline",
            SystemId::Hoop => "hoop rolling on an incline, driven by an internal mechanism",
            SystemId::Sphere => "sphere rolling on an incline, driven by an internal cart",
            SystemId::Pendulum => "spherical pendulum with no spin about its axis",
            SystemId::RigidBody => "fully actuated rigid body on SO(3)",
        }
    }
}

/// Default multiplicative mismatch between nominal and true parameters.
pub(crate) fn one_and_half() -> f64 {
    1.5
}

pub(crate) fn one_half() -> f64 {
    0.5
}

pub(crate) fn unity() -> f64 {
    1.0
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Param(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

pub(crate) fn factor(name: &str, f: f64) -> Result<f64> {
    positive(&format!("mismatch.{name}"), f)?;
    Ok(f)
}

pub(crate) fn diag(v: [f64; 3]) -> crate::lie::Mat3 {
    crate::lie::Mat3::from_diagonal(&crate::lie::Vec3::from(v))
}
