//! TOML scenario files, dotted overrides and the bundled suite.
//!
//! A scenario names a system, its gains, the simulator settings, the
//! acceptance criteria and exactly one system section. Unknown keys are
//! rejected at every level.

use crate::error::{Error, Result};
use crate::pid::GainSet;
use crate::sim::{run, Acceptance, ClosedLoop, LyapunovMonitor, RunOutput, SimConfig};
use crate::systems::hoop::{HoopConfig, HoopLoop};
use crate::systems::ipc::{IpcConfig, IpcLoop};
use crate::systems::pendulum::{PendulumConfig, PendulumLoop};
use crate::systems::quadrotor::{AttitudeLoop, QuadrotorConfig, RigidBodyConfig};
use crate::systems::sphere::{SphereConfig, SphereLoop};
use crate::systems::SystemId;
use serde::{Deserialize, Serialize};
use std::path::Path;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub system: SystemId,
    pub gains: GainSet,
    pub sim: SimConfig,
    #[serde(default)]
    pub acceptance: Acceptance,
    pub lyapunov: Option<LyapunovMonitor>,
    pub quadrotor: Option<QuadrotorConfig>,
    pub rigid_body: Option<RigidBodyConfig>,
    pub ipc: Option<IpcConfig>,
    pub hoop: Option<HoopConfig>,
    pub sphere: Option<SphereConfig>,
    pub pendulum: Option<PendulumConfig>,
}

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Scenario(e.to_string())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(parse_err)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(parse_err)
    }

    fn sections(&self) -> Vec<SystemId> {
        let mut s = Vec::new();
        if self.quadrotor.is_some() {
            s.push(SystemId::Quadrotor);
        }
        if self.rigid_body.is_some() {
            s.push(SystemId::RigidBody);
        }
        if self.ipc.is_some() {
            s.push(SystemId::Ipc);
        }
        if self.hoop.is_some() {
            s.push(SystemId::Hoop);
        }
        if self.sphere.is_some() {
            s.push(SystemId::Sphere);
        }
        if self.pendulum.is_some() {
            s.push(SystemId::Pendulum);
        }
        s
    }

    /// Structural checks plus the system's own parameter checks.
    pub fn validate(&self) -> Result<()> {
        if self.sections() != [self.system] {
            return Err(Error::Scenario(format!(
                "system = \"{}\" needs exactly the [{}] section, found {:?}",
                self.system.as_str(),
                self.system.as_str().replace('-', "_"),
                self.sections().iter().map(|s| s.as_str()).collect::<Vec<_>>()
            )));
        }
        self.sim.validate()?;
        self.gains.validate()?;
        if let Some(l) = &self.lyapunov {
            if !(l.residual_ball >= 0.0) || !(0.0..=1.0).contains(&l.min_fraction) {
                return Err(Error::Scenario("lyapunov: residual_ball >= 0 and min_fraction in [0, 1]".into()));
            }
        }
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Box<dyn ClosedLoop>> {
        let g = self.gains;
        let missing = || Error::Scenario(format!("missing [{}] section", self.system.as_str()));
        Ok(match self.system {
            SystemId::Quadrotor => Box::new(AttitudeLoop::quadrotor(self.quadrotor.as_ref().ok_or_else(missing)?, g)?),
            SystemId::RigidBody => {
                Box::new(AttitudeLoop::rigid_body(self.rigid_body.as_ref().ok_or_else(missing)?, g)?)
            }
            SystemId::Ipc => Box::new(IpcLoop::new(self.ipc.as_ref().ok_or_else(missing)?, g)?),
            SystemId::Hoop => Box::new(HoopLoop::new(self.hoop.as_ref().ok_or_else(missing)?, g)?),
            SystemId::Sphere => Box::new(SphereLoop::new(self.sphere.as_ref().ok_or_else(missing)?, g)?),
            SystemId::Pendulum => Box::new(PendulumLoop::new(self.pendulum.as_ref().ok_or_else(missing)?, g)?),
        })
    }

    /// Parameters that are parsed but have no slot in the control law.
    pub fn ignored(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(kcp) = self.gains.kcp {
            v.push(format!("gain kcp = {kcp} has no slot in the control law"));
        }
        if let Some(b) = self.sphere.as_ref().and_then(|s| s.beta_nominal_deg) {
            v.push(format!("beta_nominal_deg = {b} is not used by the control law"));
        }
        v
    }

    /// Applies `key=value` overrides in order and revalidates.
    ///
    /// The parent of every key must exist; the leaf must be a field of the
    /// schema. Values are parsed as TOML, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = Value::try_from(self).map_err(parse_err)?;
        for o in overrides {
            let (k, v) = parse_override(o.as_ref())?;
            set_path(&mut root, &k, v)?;
        }
        let sc: Scenario = root.try_into().map_err(|e| Error::Scenario(format!("after overrides: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }
}

pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Scenario(format!("override `{s}` is not key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(Error::Scenario(format!("override `{s}` has an empty key")));
    }
    let value = match format!("v = {v}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(v.to_string()),
    };
    Ok((k.to_string(), value))
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let unknown = || Error::Scenario(format!("override `{key}` names no scenario key"));
    let mut cur = root;
    for (n, p) in parts.iter().enumerate() {
        let last = n + 1 == parts.len();
        cur = match cur {
            Value::Table(t) => {
                if last {
                    t.insert(p.to_string(), v);
                    return Ok(());
                }
                t.get_mut(*p).ok_or_else(unknown)?
            }
            Value::Array(a) => {
                let i: usize = p.parse().map_err(|_| unknown())?;
                let slot = a.get_mut(i).ok_or_else(unknown)?;
                if last {
                    *slot = v;
                    return Ok(());
                }
                slot
            }
            _ => return Err(unknown()),
        };
    }
    Err(unknown())
}

/// Runs a validated scenario.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    for w in sc.ignored() {
        log::warn!("{}: {w}", sc.name);
    }
    let lp = sc.build()?;
    run(&sc.name, lp.as_ref(), &sc.sim, &sc.acceptance, sc.lyapunov.as_ref())
}

/// Bundled scenario files, by file stem.
pub const BUNDLED: [(&str, &str); 10] = [
    ("quad_attitude", include_str!("../scenarios/quad_attitude.toml")),
    ("ipc_stabilize", include_str!("../scenarios/ipc_stabilize.toml")),
    ("hoop_fixed", include_str!("../scenarios/hoop_fixed.toml")),
    ("hoop_linear", include_str!("../scenarios/hoop_linear.toml")),
    ("hoop_sinusoid", include_str!("../scenarios/hoop_sinusoid.toml")),
    ("sphere_sinusoid", include_str!("../scenarios/sphere_sinusoid.toml")),
    ("sphere_circle", include_str!("../scenarios/sphere_circle.toml")),
    ("sphere_fixed", include_str!("../scenarios/sphere_fixed.toml")),
    ("pendulum_upright", include_str!("../scenarios/pendulum_upright.toml")),
    ("rigid_body_verified", include_str!("../scenarios/rigid_body_verified.toml")),
];

/// The nine scenarios run by `paper-suite`.
pub const SUITE: [&str; 9] = [
    "quad_attitude",
    "ipc_stabilize",
    "hoop_fixed",
    "hoop_linear",
    "hoop_sinusoid",
    "sphere_sinusoid",
    "sphere_circle",
    "sphere_fixed",
    "pendulum_upright",
];

pub fn bundled(name: &str) -> Result<Scenario> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Scenario(format!("no bundled scenario `{name}`")))?;
    Scenario::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_validates() {
        for (n, _) in BUNDLED {
            let sc = bundled(n).unwrap();
            assert_eq!(sc.name, n);
        }
    }

    #[test]
    fn roundtrip_through_toml() {
        let sc = bundled("hoop_fixed").unwrap();
        assert_eq!(Scenario::from_toml(&sc.to_toml().unwrap()).unwrap(), sc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BUNDLED[2].1.replace("[sim]", "[sim]\nh_plant_ms = 1.0");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn overrides_set_existing_keys() {
        let sc = bundled("ipc_stabilize").unwrap();
        let o = sc.with_overrides(&["gains.ki=7.5", "ipc.initial.theta_deg=45", "sim.t_final_s=3"]).unwrap();
        assert_eq!(o.gains.ki, 7.5);
        assert_eq!(o.ipc.unwrap().initial.theta_deg, 45.0);
        assert_eq!(o.sim.t_final_s, 3.0);
    }

    #[test]
    fn overrides_index_arrays() {
        let sc = bundled("sphere_fixed").unwrap();
        let o = sc.with_overrides(&["sphere.initial.o_m.1=-1.5"]).unwrap();
        assert_eq!(o.sphere.unwrap().initial.o_m, [2.0, -1.5]);
    }

    #[test]
    fn overrides_must_name_schema_keys() {
        let sc = bundled("ipc_stabilize").unwrap();
        assert!(sc.with_overrides(&["gains.kx=1"]).is_err());
        assert!(sc.with_overrides(&["nothing.here=1"]).is_err());
        assert!(sc.with_overrides(&["gains.kp"]).is_err());
        assert!(sc.with_overrides(&["ipc.initial.theta_deg.3=1"]).is_err());
    }

    #[test]
    fn ignored_parameters_are_reported() {
        assert_eq!(bundled("ipc_stabilize").unwrap().ignored().len(), 1);
        assert_eq!(bundled("sphere_circle").unwrap().ignored().len(), 1);
        assert!(bundled("hoop_linear").unwrap().ignored().is_empty());
    }

    #[test]
    fn wrong_section_is_rejected() {
        let text = BUNDLED[1].1.replace("system = \"ipc\"", "system = \"hoop\"");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn override_value_types_are_checked() {
        let sc = bundled("ipc_stabilize").unwrap();
        assert!(sc.with_overrides(&["gains.kp=fast"]).is_err());
        assert!(sc.with_overrides(&["gains.kp=-1"]).is_err());
    }
}
