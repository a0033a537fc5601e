//! Discrete-time agent models.
//!
//! The shipped model is the planar double integrator with zero-order-hold
//! acceleration input:
//!
//! ```text
//! p⁺ = p + Ts·v + ½Ts²·u
//! v⁺ = v + Ts·u
//! ```

use serde::{Deserialize, Serialize};

use crate::safeset::Ball;
use crate::{Error, Result, Vec2};

/// Tolerance used when classifying closed-loop states and inputs as admissible.
pub const TOL_ADM: f64 = 1e-9;

/// Physical parameters of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Body radius [m].
    pub r: f64,
    /// Speed bound [m/s].
    pub v_max: f64,
    /// Acceleration bound [m/s²].
    pub a_max: f64,
    /// Braking deceleration magnitude used by the stopping radius [m/s²].
    pub a_min_mag: f64,
    /// Sampling time [s].
    pub ts: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self { r: 0.2, v_max: 3.0, a_max: 3.5, a_min_mag: 3.5, ts: 0.1 }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [("r", self.r), ("ts", self.ts), ("a_max", self.a_max), ("a_min_mag", self.a_min_mag)];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "agent parameter {name} must be finite and positive, got {value}"
                )));
            }
        }
        if !(self.v_max.is_finite() && self.v_max >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "agent parameter v_max must be finite and nonnegative, got {}",
                self.v_max
            )));
        }
        Ok(())
    }
}

/// Position and velocity of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub p: Vec2,
    pub v: Vec2,
}

impl AgentState {
    pub fn new(p: Vec2, v: Vec2) -> Self {
        Self { p, v }
    }

    pub fn at_rest(p: Vec2) -> Self {
        Self { p, v: Vec2::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }

    /// Euclidean norm of the stacked difference `(p - o.p, v - o.v)`.
    pub fn distance(&self, other: &AgentState) -> f64 {
        ((self.p - other.p).norm_squared() + (self.v - other.v).norm_squared()).sqrt()
    }
}

/// Acceleration input of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub u: Vec2,
}

impl ControlInput {
    pub fn new(u: Vec2) -> Self {
        Self { u }
    }

    pub fn zero() -> Self {
        Self { u: Vec2::zeros() }
    }
}

/// Terminal equilibrium of a contingency plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPair {
    pub x_bar: AgentState,
    pub u_bar: ControlInput,
}

impl EquilibriumPair {
    /// Stopped equilibrium of the double integrator at `p`.
    pub fn stopped_at(p: Vec2) -> Self {
        Self { x_bar: AgentState::at_rest(p), u_bar: ControlInput::zero() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admissibility {
    pub state_ok: bool,
    pub input_ok: bool,
}

/// Interface of an agent model as used by the controller.
pub trait AgentModel {
    fn params(&self) -> &AgentParams;

    fn step(&self, x: &AgentState, u: &ControlInput) -> Result<AgentState>;

    fn check_admissible(&self, x: &AgentState, u: &ControlInput) -> Admissibility;

    fn is_equilibrium(&self, x: &AgentState, u: &ControlInput, tol: f64) -> bool;

    /// State-dependent safe-set generator.
    fn safe_set(&self, x: &AgentState) -> Ball;
}

/// Planar double integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegrator {
    pub params: AgentParams,
}

impl DoubleIntegrator {
    pub fn new(params: AgentParams) -> Self {
        Self { params }
    }
}

impl AgentModel for DoubleIntegrator {
    fn params(&self) -> &AgentParams {
        &self.params
    }

    fn step(&self, x: &AgentState, u: &ControlInput) -> Result<AgentState> {
        step(x, u, &self.params)
    }

    fn check_admissible(&self, x: &AgentState, u: &ControlInput) -> Admissibility {
        check_admissible(x, u, &self.params)
    }

    fn is_equilibrium(&self, x: &AgentState, u: &ControlInput, tol: f64) -> bool {
        is_equilibrium(x, u, &self.params, tol)
    }

    fn safe_set(&self, x: &AgentState) -> Ball {
        crate::safeset::canonical_safe_set(x, &self.params)
    }
}

/// One step of the double integrator without input validation.
#[inline]
pub(crate) fn propagate(x: &AgentState, u: &Vec2, ts: f64) -> AgentState {
    AgentState { p: x.p + x.v * ts + u * (0.5 * ts * ts), v: x.v + u * ts }
}

pub fn step(x: &AgentState, u: &ControlInput, params: &AgentParams) -> Result<AgentState> {
    if !x.is_finite() || !u.u.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite state or input passed to step".into()));
    }
    Ok(propagate(x, &u.u, params.ts))
}

pub fn check_admissible(x: &AgentState, u: &ControlInput, params: &AgentParams) -> Admissibility {
    Admissibility { state_ok: x.v.norm() <= params.v_max + TOL_ADM, input_ok: u.u.norm() <= params.a_max + TOL_ADM }
}

pub fn is_equilibrium(x: &AgentState, u: &ControlInput, params: &AgentParams, tol: f64) -> bool {
    propagate(x, &u.u, params.ts).distance(x) <= tol
}

pub fn translate(x: &AgentState, delta: &Vec2) -> AgentState {
    AgentState { p: x.p + delta, v: x.v }
}
