//! Highway driving stack built around a tendency-guided trajectory optimizer.
//!
//! The stack has three cooperating layers:
//!
//! - [`sim`]: a deterministic multi-lane highway world with kinematic
//!   vehicles, random constant-speed traffic, and two-circle collision
//!   checking.
//! - [`idm`] + [`mpc`]: the mechanism layer. Per-lane car-following
//!   rollouts produce terminal anchors for a receding-horizon nonlinear
//!   program whose lane-target weighting is modulated by a scalar driving
//!   tendency in `[-1, 1]`. Hard constraints plus a braking fallback keep
//!   every executed action safe.
//! - [`nn`] + [`sac`]: the learning layer. A small MLP toolkit with exact
//!   analytic gradients backs a twin-critic maximum-entropy actor-critic
//!   loop that learns the driving tendency online, collision-free.
//!
//! [`scenario`] holds the on-disk config format, [`eval`] the episode
//! drivers, metrics, and the comparison baselines.

pub mod baseline;
pub mod eval;
pub mod idm;
pub mod mpc;
pub mod nn;
pub mod sac;
pub mod scenario;
pub mod sim;

pub use sim::{Action, SimConfig, TrafficSnapshot, VehicleState};
