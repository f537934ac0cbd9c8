//! Decentralized fast flocking of UAV swarms without external localization.
//!
//! The crate is organized bottom-up:
//!
//! - [`lkf`]: a small linear Kalman filter engine over 6-D lateral states.
//! - [`tracker`]: the bank of per-neighbor filters fed by relative observations
//!   and communicated or estimated neighbor velocities.
//! - [`control`]: the state-feedback flocking law with group-velocity feedforward.
//! - [`mrse`]: full-state multi-robot state estimation and adaptive VIO fusion.
//! - [`velest`]: communication-less estimation of neighbor velocities.
//! - [`sensors`]: seeded emulation of the onboard sensor suite.
//! - [`sim`]: the deterministic tick loop, scenarios and run logs.
//! - [`metrics`]: swarm metrics and the communication ablation runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod geometry;
pub mod lkf;
pub mod metrics;
pub mod mrse;
pub mod sensors;
pub mod sim;
pub mod tracker;
pub mod velest;

pub use error::{Error, Result};
pub use geometry::{AgentId, Vec2};
