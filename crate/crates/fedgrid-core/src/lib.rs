//! Simulation and training library for resilient control of networked
//! microgrids.
//!
//! The crate has three layers:
//!
//! - [`grid`] — a quasi-static model of coupled microgrids with
//!   droop-controlled grid-forming inverters, including set-point
//!   composition, attack injection and steady-state computation.
//! - [`env`] — an episodic, gym-style environment on top of the grid
//!   model: attack scenario pool, per-microgrid observations and rewards.
//! - [`nn`] / [`sac`] / [`fed`] — a small MLP substrate with verified
//!   analytic gradients, per-agent soft actor-critic updates, and the
//!   vertically federated training loop that averages critic networks
//!   across agents on a fixed schedule.
//!
//! Everything is deterministic given explicit seeds; see [`seeding`] for
//! how substreams are derived from a master seed.

pub mod env;
pub mod error;
pub mod fed;
pub mod gradcheck;
pub mod grid;
pub mod nn;
pub mod rollout;
pub mod sac;
pub mod seeding;

pub use error::{Error, Result};
