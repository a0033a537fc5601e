//! Plug-and-play join and leave.
//!
//! A joining agent sees only the current states of the incumbents. It cannot know
//! which of them are frozen on an older safe set, so it infers freezing from
//! overlapping state-generated sets and represents those agents by their
//! history-free reconstruction balls. The join is accepted when the joiner's own
//! generated set is disjoint from every representation and its local problem is
//! feasible.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentParams, AgentState};
use crate::ocp::{FhocpSpec, Horizons};
use crate::safeset::{canonical_safe_set, overlap_strict, radius_upper_bound, reconstruction_ball, Ball};
use crate::sim::{obstacle_clearance, AgentSlot, SimConfig, WorldState};
use crate::solver::solve_with_fallback;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub id: u32,
    pub params: AgentParams,
    pub state: AgentState,
    pub x_ref: AgentState,
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PnpEvent {
    Join(JoinRequest),
    Leave { time: usize, id: u32 },
}

impl PnpEvent {
    pub fn time(&self) -> usize {
        match self {
            PnpEvent::Join(req) => req.time,
            PnpEvent::Leave { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinVerdict {
    pub accepted: bool,
    pub assigned_set: Option<Ball>,
    pub reason: Option<String>,
    /// Representation used for every incumbent, by id.
    pub representations: Vec<(u32, Ball)>,
    /// Every representation contains the incumbent's true active set.
    pub conservative: bool,
    /// Sampled boundary points of every true active set lie in the reconstruction ball.
    pub reconstruction_contains_sets: bool,
}

/// Conservative stand-ins for the incumbents' active sets, in agent order.
pub fn infer_representations(world: &WorldState) -> Vec<(u32, Ball)> {
    let agents: Vec<&AgentSlot> = world.active_agents().collect();
    let generated: Vec<Ball> = agents.iter().map(|a| canonical_safe_set(&a.state, &a.params)).collect();
    let n = agents.len();
    // direct evidence: a generated set that overlaps another one cannot have been adopted
    let mut frozen: Vec<bool> =
        (0..n).map(|j| (0..n).any(|k| k != j && overlap_strict(&generated[j], &generated[k]))).collect();
    let rec = |j: usize| -> Ball {
        let a = agents[j];
        reconstruction_ball(&a.state.p, radius_upper_bound(&a.params), a.params.r).unwrap_or_else(|_| generated[j])
    };
    // indirect evidence: overlap with a set already represented conservatively
    loop {
        let mut changed = false;
        for j in 0..n {
            if frozen[j] {
                continue;
            }
            let hit = (0..n).any(|k| k != j && frozen[k] && overlap_strict(&generated[j], &rec(k)));
            if hit {
                frozen[j] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).map(|j| (agents[j].id, if frozen[j] { rec(j) } else { generated[j] })).collect()
}

/// Checks the representations against the true active sets of the incumbents.
fn check_representations(world: &WorldState, reps: &[(u32, Ball)]) -> (bool, bool) {
    let mut conservative = true;
    let mut sampled = true;
    for (id, rep) in reps {
        let Some(a) = world.agent(*id) else { continue };
        let set = &a.safe_set.active;
        conservative &= rep.contains_ball(set, 1e-9);
        if let Ok(rec) = reconstruction_ball(&a.state.p, radius_upper_bound(&a.params), a.params.r) {
            for s in 0..64 {
                let angle = TAU * s as f64 / 64.0;
                let q = set.c + Vec2::new(angle.cos(), angle.sin()) * set.r;
                sampled &= (q - rec.c).norm() <= rec.r + 1e-12;
            }
        }
    }
    (conservative, sampled)
}

/// Join protocol. On acceptance the agent is appended to `world`; on rejection
/// `world` is left untouched.
pub fn try_join(req: &JoinRequest, world: &mut WorldState, config: &SimConfig) -> Result<JoinVerdict> {
    if req.time != world.t {
        return Err(Error::InvalidArgument(format!(
            "join of agent {} requested for t={} but the world is at t={}",
            req.id, req.time, world.t
        )));
    }
    req.params.validate()?;
    let reps = infer_representations(world);
    let (conservative, sampled) = check_representations(world, &reps);
    let reject = |reason: String| JoinVerdict {
        accepted: false,
        assigned_set: None,
        reason: Some(reason),
        representations: reps.clone(),
        conservative,
        reconstruction_contains_sets: sampled,
    };

    if world.agents.iter().any(|a| a.id == req.id) {
        return Ok(reject(format!("id {} already in use", req.id)));
    }
    if !req.state.is_finite() || req.state.v.norm() > req.params.v_max {
        return Ok(reject("initial state not admissible".into()));
    }
    if obstacle_clearance(&req.state.p, req.params.r, &world.obstacles, world.bounds.as_ref()) < 0.0 {
        return Ok(reject("initial position blocked by an obstacle or wall".into()));
    }
    let set = canonical_safe_set(&req.state, &req.params);
    if let Some((id, _)) = reps.iter().find(|(_, rep)| overlap_strict(&set, rep)) {
        return Ok(reject(format!("overlap with agent {id}")));
    }

    let spec = FhocpSpec {
        agent_id: req.id,
        params: req.params,
        x0: req.state,
        active_set: set,
        neighbor_sets: reps.iter().map(|(_, b)| *b).collect(),
        obstacles: world.obstacles.clone(),
        bounds: world.bounds,
        x_ref: req.x_ref,
        j_hat: f64::INFINITY,
        horizons: Horizons { n_n: config.nominal_horizon, n_c: config.contingency_horizon_for(&req.params) },
        weights: config.weights,
        objective: config.objective,
        enforce_tail: !config.ablation.disable_tail_constraint,
    };
    if let Err(e) = solve_with_fallback(&spec, None, &config.solver) {
        return Ok(reject(format!("local problem infeasible: {e}")));
    }

    world.agents.push(AgentSlot::new(req.id, req.params, req.state, req.x_ref));
    Ok(JoinVerdict {
        accepted: true,
        assigned_set: Some(set),
        reason: None,
        representations: reps,
        conservative,
        reconstruction_contains_sets: sampled,
    })
}

/// Removes an agent from all subsequent rounds.
pub fn leave(id: u32, world: &mut WorldState) -> Result<()> {
    match world.agents.iter_mut().find(|a| a.id == id && a.active) {
        Some(a) => {
            a.active = false;
            Ok(())
        }
        None => Err(Error::InvalidArgument(format!("no active agent with id {id}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_with(states: &[AgentState]) -> WorldState {
        let agents =
            states.iter().enumerate().map(|(i, s)| AgentSlot::new(i as u32, AgentParams::default(), *s, *s)).collect();
        WorldState::new(agents, vec![], None)
    }

    #[test]
    fn disjoint_generated_sets_are_their_own_representation() {
        let w = world_with(&[AgentState::at_rest(Vec2::new(0.0, 0.0)), AgentState::at_rest(Vec2::new(5.0, 0.0))]);
        let reps = infer_representations(&w);
        assert!((reps[0].1.r - 0.235).abs() < 1e-12);
        assert_eq!(reps[1].1.c, Vec2::new(5.0, 0.0));
        let single = world_with(&[AgentState::new(Vec2::zeros(), Vec2::new(3.0, 0.0))]);
        let reps = infer_representations(&single);
        assert_eq!(reps[0].1, canonical_safe_set(&single.agents[0].state, &single.agents[0].params));
    }

    #[test]
    fn overlapping_fast_agents_get_reconstruction_balls() {
        let w = world_with(&[
            AgentState::new(Vec2::new(0.0, 0.0), Vec2::new(2.5, 0.0)),
            AgentState::new(Vec2::new(2.5, 0.0), Vec2::new(-2.5, 0.0)),
            AgentState::at_rest(Vec2::new(30.0, 0.0)),
        ]);
        let reps = infer_representations(&w);
        let rmax = radius_upper_bound(&AgentParams::default());
        assert!((reps[0].1.r - (2.0 * rmax - 0.2)).abs() < 1e-12);
        assert!((reps[1].1.r - (2.0 * rmax - 0.2)).abs() < 1e-12);
        assert!((reps[2].1.r - 0.235).abs() < 1e-12);
    }

    #[test]
    fn join_far_away_is_accepted() {
        let mut w = world_with(&[AgentState::at_rest(Vec2::zeros())]);
        let req = JoinRequest {
            id: 7,
            params: AgentParams::default(),
            state: AgentState::at_rest(Vec2::new(10.0, 0.0)),
            x_ref: AgentState::at_rest(Vec2::new(12.0, 0.0)),
            time: 0,
        };
        let v = try_join(&req, &mut w, &SimConfig::default()).unwrap();
        assert!(v.accepted, "{v:?}");
        assert!(v.conservative && v.reconstruction_contains_sets);
        assert_eq!(w.agents.len(), 2);
    }

    #[test]
    fn crowded_join_is_rejected_without_side_effects() {
        let mut w = world_with(&[AgentState::at_rest(Vec2::zeros())]);
        let before = w.clone();
        let req = JoinRequest {
            id: 7,
            params: AgentParams::default(),
            state: AgentState::at_rest(Vec2::new(0.3, 0.0)),
            x_ref: AgentState::at_rest(Vec2::new(3.0, 0.0)),
            time: 0,
        };
        let v = try_join(&req, &mut w, &SimConfig::default()).unwrap();
        assert!(!v.accepted);
        assert_eq!(v.reason.as_deref(), Some("overlap with agent 0"));
        assert_eq!(w, before);
    }

    #[test]
    fn leave_examples() {
        let mut w = world_with(&[AgentState::at_rest(Vec2::zeros()), AgentState::at_rest(Vec2::new(5.0, 0.0))]);
        leave(1, &mut w).unwrap();
        assert_eq!(w.active_agents().count(), 1);
        assert!(leave(1, &mut w).is_err());
        assert!(leave(42, &mut w).is_err());
    }
}
