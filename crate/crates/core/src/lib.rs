//! Decentralized contingency MPC with freeze-or-shift (FoS) safe sets.
//!
//! Every agent solves a local dual-plan problem: a nominal plan that tracks its
//! reference and a contingency plan that brakes to a stopped equilibrium inside
//! the agent's active safe set. Active sets evolve under the freeze-or-shift rule,
//! which keeps them pairwise disjoint, so following any agent's contingency plan
//! is always collision-free.
//!
//! Module overview:
//!
//! - [`dynamics`]: agent models (planar double integrator).
//! - [`safeset`]: safe-set generator, overlap tests, FoS update, reconstruction balls.
//! - [`ocp`]: the local finite-horizon problem, its costs, residuals and the shifted candidate.
//! - [`solver`]: augmented-Lagrangian solver with a feasible fallback.
//! - [`sim`]: closed-loop coordinator, invariant checks, metrics and the brute-force oracle.
//! - [`pnp`]: plug-and-play join and leave.
//! - [`scenario`]: JSON scenarios, presets and random scenario generation.
//! - [`report`]: CSV logs, summary metrics and plot data.
//! - [`ablation`]: counterexample scenarios with individual safeguards disabled.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod dynamics;
mod error;
pub mod ocp;
pub mod pnp;
pub mod report;
pub mod safeset;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};

/// Planar vector used for positions, velocities and accelerations.
pub type Vec2 = nalgebra::Vector2<f64>;
