//! Intrinsic PID control for mechanical systems on Lie groups.
//!
//! * [`lie`]: circle, SO(3), SE(3) and R^n primitives.
//! * [`geometry`]: invariant connections, Koszul oracles, constraint projections.
//! * [`pid`]: fully actuated, underactuated and constrained PID laws, gain
//!   bounds and the Lyapunov certificate.
//! * [`systems`]: quadrotor, inverted pendulum on a cart, rolling hoop,
//!   rolling sphere and spherical pendulum.
//! * [`sim`]: fixed-step RK4 engine, scenario runner, monitors and traces.
//! * [`scenario`]: TOML scenario files and the bundled suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod geometry;
pub mod lie;
pub mod pid;
pub mod scenario;
pub mod sim;
pub mod systems;

pub use error::{Error, Result};
